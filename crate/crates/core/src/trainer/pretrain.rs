//! Supervised fitting of the pitch extractor and content probe on corpus
//! ground truth. Both are frozen afterwards.

use super::TrainingConfig;
use crate::autodiff::Graph;
use crate::corpus::synth::rng_for;
use crate::corpus::{crop_frames, Corpus, Split, Utterance, SILENCE};
use crate::error::{Error, Result};
use crate::metrics::Record;
use crate::networks::{ContentProbe, PitchExtractor};
use crate::optim::Adam;
use crate::tensor::Tensor;
use rand::Rng;

const CONTOUR_EPS: f64 = 1e-10;

/// Per-utterance standardization applied to ground-truth contours; the
/// extractor output is standardized the same way.
pub fn standardize(contour: &[f64]) -> Vec<f64> {
    let n = contour.len() as f64;
    let mean = contour.iter().sum::<f64>() / n;
    let var = contour.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + CONTOUR_EPS).sqrt();
    contour.iter().map(|c| (c - mean) * inv).collect()
}

struct Crop {
    features: Vec<f64>,
    contour: Vec<f64>,
    symbols: Vec<u8>,
}

fn crop<R: Rng + ?Sized>(u: &Utterance, len: usize, pad: f64, rng: &mut R) -> Crop {
    let n = u.features().n_frames();
    let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
    let at = |t: usize| start + t;
    Crop {
        features: crop_frames(u.features(), start, len, pad),
        contour: (0..len)
            .map(|t| u.f0_contour.get(at(t)).map_or(0.0, |&v| v as f64))
            .collect(),
        symbols: (0..len)
            .map(|t| u.frame_symbols.get(at(t)).copied().unwrap_or(SILENCE))
            .collect(),
    }
}

fn draw(corpus: &Corpus, train: &[usize], cfg: &TrainingConfig, rng: &mut impl Rng) -> (Tensor, Vec<Crop>) {
    let b = cfg.pretrain.batch_size;
    let len = cfg.crop_frames;
    let pad = corpus.silence_value();
    let crops: Vec<Crop> = (0..b)
        .map(|_| {
            let i = train[rng.random_range(0..train.len())];
            crop(&corpus.utterances()[i], len, pad, rng)
        })
        .collect();
    let mut data = Vec::with_capacity(b * corpus.n_bins() * len);
    for c in &crops {
        data.extend_from_slice(&c.features);
    }
    (Tensor::new(vec![b, corpus.n_bins(), len], data), crops)
}

pub fn fit_pitch(pitch: &mut PitchExtractor, corpus: &Corpus, cfg: &TrainingConfig) -> Result<Vec<Record>> {
    let train = corpus.indices(Split::Train);
    let mut rng = rng_for(cfg.seed, &[0x5049_5443]);
    let mut opt = Adam::new(&pitch.params);
    let adam = crate::optim::AdamConfig {
        beta1: 0.9,
        ..cfg.adam.clone()
    };
    let mut last = f64::NAN;
    for _ in 0..cfg.pretrain.pitch_steps {
        let (x, crops) = draw(corpus, &train, cfg, &mut rng);
        let mut target = Vec::with_capacity(x.len());
        for c in &crops {
            target.extend(standardize(&c.contour));
        }
        let mut g = Graph::new();
        let p = pitch.params.bind(&mut g, true);
        let xv = g.constant(x);
        let (_, contour) = pitch.forward(&mut g, &p, xv);
        let t = g.constant(Tensor::new(g.value(contour).shape().to_vec(), target));
        let d = g.sub(contour, t);
        let d = g.abs(d);
        let loss = g.mean(d);
        last = g.value(loss).item();
        if !last.is_finite() {
            return Err(Error::NonFinite {
                name: "pre/pitch".into(),
                step: 0,
            });
        }
        let grads = g.backward(loss);
        let gs = pitch.params.collect_grads(&grads, &p);
        opt.update(&mut pitch.params, &gs, cfg.pretrain.lr, &adam);
    }
    Ok(vec![Record::new(0, "pre/pitch_l1", last)])
}

pub fn fit_content(probe: &mut ContentProbe, corpus: &Corpus, cfg: &TrainingConfig) -> Result<Vec<Record>> {
    let train = corpus.indices(Split::Train);
    let mut rng = rng_for(cfg.seed, &[0x434f_4e54]);
    let mut opt = Adam::new(&probe.params);
    let adam = crate::optim::AdamConfig {
        beta1: 0.9,
        ..cfg.adam.clone()
    };
    let mut last = f64::NAN;
    for _ in 0..cfg.pretrain.content_steps {
        let (x, crops) = draw(corpus, &train, cfg, &mut rng);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let len = cfg.crop_frames;
        for (b, c) in crops.iter().enumerate() {
            for (t, &s) in c.symbols.iter().enumerate() {
                if s != SILENCE {
                    rows.push(b * len + t);
                    labels.push(s as usize);
                }
            }
        }
        if rows.is_empty() {
            continue;
        }
        let mut g = Graph::new();
        let p = probe.params.bind(&mut g, true);
        let xv = g.constant(x);
        let (_, logits) = probe.forward(&mut g, &p, xv);
        let flat = g.frames_to_rows(logits);
        let voiced = g.select_rows(flat, &rows);
        let ce = g.cross_entropy(voiced, &labels);
        let loss = g.mean(ce);
        last = g.value(loss).item();
        if !last.is_finite() {
            return Err(Error::NonFinite {
                name: "pre/content".into(),
                step: 0,
            });
        }
        let grads = g.backward(loss);
        let gs = probe.params.collect_grads(&grads, &p);
        opt.update(&mut probe.params, &gs, cfg.pretrain.lr, &adam);
    }
    Ok(vec![Record::new(0, "pre/content_ce", last)])
}

/// Mean absolute error between the extractor's standardized contour and the
/// standardized ground truth over whole utterances of `split`.
pub fn pitch_mae(pitch: &PitchExtractor, corpus: &Corpus, split: Split) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in corpus.indices(split) {
        let u = &corpus.utterances()[i];
        let mel = u.features();
        let mut g = Graph::new();
        let p = pitch.params.bind(&mut g, false);
        let x = g.constant(mel.tensor().clone().reshaped(vec![1, mel.n_bins(), mel.n_frames()]));
        let (_, c) = pitch.forward(&mut g, &p, x);
        let truth: Vec<f64> = u.f0_contour.iter().map(|&v| v as f64).collect();
        for (a, b) in g.value(c).data().iter().zip(standardize(&truth)) {
            total += (a - b).abs();
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Frame accuracy of the content probe on non-silent frames of `split`.
pub fn content_accuracy(probe: &ContentProbe, corpus: &Corpus, split: Split) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for i in corpus.indices(split) {
        let u = &corpus.utterances()[i];
        let mel = u.features();
        let mut g = Graph::new();
        let p = probe.params.bind(&mut g, false);
        let x = g.constant(mel.tensor().clone().reshaped(vec![1, mel.n_bins(), mel.n_frames()]));
        let (_, l) = probe.forward(&mut g, &p, x);
        let logits = g.value(l);
        let (k, t_len) = (logits.dim(1), logits.dim(2));
        for (t, &s) in u.frame_symbols.iter().enumerate() {
            if s == SILENCE {
                continue;
            }
            let best = (0..k)
                .max_by(|&a, &b| logits.data()[a * t_len + t].total_cmp(&logits.data()[b * t_len + t]))
                .unwrap();
            hit += usize::from(best == s as usize);
            n += 1;
        }
    }
    hit as f64 / n.max(1) as f64
}
