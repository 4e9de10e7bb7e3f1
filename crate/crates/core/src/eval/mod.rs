//! Objective evaluation: an emotion probe scores converted samples against
//! their target emotion, a speaker probe's unit-normalized penultimate
//! layer scores speaker similarity by inner product.

mod report;

pub use report::{ablation_csv, ablation_table, AblationRow, CellReport, EvalReport};

use crate::autodiff::Graph;
use crate::catalog::{DomainCatalog, DomainPair};
use crate::checkpoint::Container;
use crate::corpus::synth::{mix_seed, rng_for};
use crate::corpus::{crop_frames, read_features, write_features, Corpus, MelSpectrogram, Split};
use crate::error::{Error, Result};
use crate::networks::ProbeNet;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::trainer::{Converter, StyleSource};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Emotion,
    Speaker,
}

impl ProbeKind {
    fn label(self, u: &crate::corpus::Utterance) -> usize {
        match self {
            ProbeKind::Emotion => u.emotion,
            ProbeKind::Speaker => u.speaker,
        }
    }

    fn classes(self, catalog: &DomainCatalog) -> usize {
        match self {
            ProbeKind::Emotion => catalog.num_emotions(),
            ProbeKind::Speaker => catalog.num_speakers(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub channels: usize,
    pub embed_dim: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub lr: f64,
    /// Smallest acceptable held-out accuracy for either probe.
    pub accuracy_gate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            channels: 24,
            embed_dim: 16,
            steps: 300,
            batch_size: 16,
            crop_frames: 64,
            lr: 2e-3,
            accuracy_gate: 0.95,
        }
    }
}

/// A frozen utterance classifier.
#[derive(Clone, Debug)]
pub struct Probe {
    pub kind: ProbeKind,
    pub net: ProbeNet,
}

fn as_batch(x: &MelSpectrogram) -> Tensor {
    x.tensor().clone().reshaped(vec![1, x.n_bins(), x.n_frames()])
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|a| a / n).collect()
}

/// Inner product of the unit-normalized vectors.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    unit(a).iter().zip(unit(b)).map(|(x, y)| x * y).sum()
}

impl Probe {
    fn run(&self, x: &MelSpectrogram) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let p = self.net.params.bind(&mut g, false);
        let xv = g.constant(as_batch(x));
        let (e, l) = self.net.forward(&mut g, &p, xv);
        (g.value(e).data().to_vec(), g.value(l).data().to_vec())
    }

    pub fn logits(&self, x: &MelSpectrogram) -> Vec<f64> {
        self.run(x).1
    }

    pub fn predict(&self, x: &MelSpectrogram) -> usize {
        let l = self.logits(x);
        (0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap_or(0)
    }

    /// Unit-normalized penultimate-layer embedding.
    pub fn embed(&self, x: &MelSpectrogram) -> Vec<f64> {
        unit(&self.run(x).0)
    }

    pub fn hash(&self) -> String {
        self.net.params.hash_hex()
    }

    /// Held-out accuracy on real utterances of `split`.
    pub fn accuracy(&self, corpus: &Corpus, split: Split) -> f64 {
        let idx = corpus.indices(split);
        let hits = idx
            .iter()
            .filter(|&&i| {
                let u = &corpus.utterances()[i];
                self.predict(u.features()) == self.kind.label(u)
            })
            .count();
        hits as f64 / idx.len().max(1) as f64
    }
}

/// Fit a probe on the train split with class-balanced batches.
pub fn train_probe(corpus: &Corpus, kind: ProbeKind, cfg: &ProbeConfig, seed: u64) -> Result<Probe> {
    let classes = kind.classes(corpus.catalog());
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in corpus.indices(Split::Train) {
        by_class[kind.label(&corpus.utterances()[i])].push(i);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| !by_class[c].is_empty()).collect();
    if present.is_empty() {
        return Err(Error::InvalidCorpus("train split is empty".into()));
    }
    let tag = match kind {
        ProbeKind::Emotion => 0x454d_4f50,
        ProbeKind::Speaker => 0x5350_4b50,
    };
    let mut rng = rng_for(seed, &[tag]);
    let net = ProbeNet::new(corpus.n_bins(), cfg.channels, cfg.embed_dim, classes, &mut rng);
    let mut probe = Probe { kind, net };
    let mut opt = Adam::new(&probe.net.params);
    let adam = AdamConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let (nb, len, pad) = (corpus.n_bins(), cfg.crop_frames, corpus.silence_value());
    for step in 0..cfg.steps {
        let mut data = Vec::with_capacity(cfg.batch_size * nb * len);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let c = present[rng.random_range(0..present.len())];
            let u = &corpus.utterances()[by_class[c][rng.random_range(0..by_class[c].len())]];
            let n = u.features().n_frames();
            let start = if n > len { rng.random_range(0..=n - len) } else { 0 };
            data.extend(crop_frames(u.features(), start, len, pad));
            labels.push(c);
        }
        let mut g = Graph::new();
        let p = probe.net.params.bind(&mut g, true);
        let x = g.constant(Tensor::new(vec![cfg.batch_size, nb, len], data));
        let (_, logits) = probe.net.forward(&mut g, &p, x);
        let ce = g.cross_entropy(logits, &labels);
        let loss = g.mean(ce);
        if !g.value(loss).item().is_finite() {
            return Err(Error::NonFinite {
                name: format!("probe/{kind:?}").to_lowercase(),
                step,
            });
        }
        let grads = g.backward(loss);
        let gs = probe.net.params.collect_grads(&grads, &p);
        opt.update(&mut probe.net.params, &gs, cfg.lr, &adam);
    }
    Ok(probe)
}

const PROBES_FORMAT: &str = "emovc-probes";

#[derive(Serialize, Deserialize)]
struct ProbesMeta {
    format: String,
    config: ProbeConfig,
    n_bins: usize,
    catalog_hash: String,
    emotions: usize,
    speakers: usize,
    emotion_accuracy: f64,
    speaker_accuracy: f64,
}

/// The emotion probe and speaker embedder with their held-out accuracies.
#[derive(Clone, Debug)]
pub struct Probes {
    pub config: ProbeConfig,
    pub catalog_hash: String,
    pub emotion: Probe,
    pub speaker: Probe,
    pub emotion_accuracy: f64,
    pub speaker_accuracy: f64,
}

impl Probes {
    /// Train both probes; no gate is applied here, see [`Probes::check_gate`].
    pub fn train(corpus: &Corpus, cfg: &ProbeConfig, seed: u64) -> Result<Self> {
        let emotion = train_probe(corpus, ProbeKind::Emotion, cfg, seed)?;
        let speaker = train_probe(corpus, ProbeKind::Speaker, cfg, seed)?;
        Ok(Self {
            config: cfg.clone(),
            catalog_hash: corpus.catalog().hash_hex(),
            emotion_accuracy: emotion.accuracy(corpus, Split::Test),
            speaker_accuracy: speaker.accuracy(corpus, Split::Test),
            emotion,
            speaker,
        })
    }

    pub fn check_gate(&self) -> Result<()> {
        let gate = self.config.accuracy_gate;
        let mut failed = Vec::new();
        if self.emotion_accuracy < gate {
            failed.push(format!(
                "emotion probe accuracy {:.4} below {gate}",
                self.emotion_accuracy
            ));
        }
        if self.speaker_accuracy < gate {
            failed.push(format!(
                "speaker probe accuracy {:.4} below {gate}",
                self.speaker_accuracy
            ));
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Gate(failed.join("; ")))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ProbesMeta {
            format: PROBES_FORMAT.into(),
            config: self.config.clone(),
            n_bins: self.emotion.net.n_bins(),
            catalog_hash: self.catalog_hash.clone(),
            emotions: self.emotion.net.classes(),
            speakers: self.speaker.net.classes(),
            emotion_accuracy: self.emotion_accuracy,
            speaker_accuracy: self.speaker_accuracy,
        };
        let mut c = Container::new(serde_json::to_value(meta).expect("meta serializes"));
        for (tag, p) in [("emotion", &self.emotion), ("speaker", &self.speaker)] {
            for (n, t) in p.net.params.names().iter().zip(p.net.params.values()) {
                c.push(format!("{tag}/{n}"), t.clone());
            }
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let meta: ProbesMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::format(path, format!("probe header: {e}")))?;
        if meta.format != PROBES_FORMAT {
            return Err(Error::format(path, format!("unexpected file kind {:?}", meta.format)));
        }
        let mut rng = rng_for(0, &[]);
        let mut build = |tag: &str, kind: ProbeKind, classes: usize| -> Result<Probe> {
            let mut net = ProbeNet::new(
                meta.n_bins,
                meta.config.channels,
                meta.config.embed_dim,
                classes,
                &mut rng,
            );
            for i in 0..net.params.len() {
                let name = format!("{tag}/{}", net.params.names()[i]);
                let t = c
                    .get(&name)
                    .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
                if t.shape() != net.params.get(i).shape() {
                    return Err(Error::format(path, format!("tensor {name} has the wrong shape")));
                }
                *net.params.get_mut(i) = t.clone();
            }
            Ok(Probe { kind, net })
        };
        Ok(Self {
            emotion: build("emotion", ProbeKind::Emotion, meta.emotions)?,
            speaker: build("speaker", ProbeKind::Speaker, meta.speakers)?,
            config: meta.config,
            catalog_hash: meta.catalog_hash,
            emotion_accuracy: meta.emotion_accuracy,
            speaker_accuracy: meta.speaker_accuracy,
        })
    }

    pub fn check_catalog(&self, catalog: &DomainCatalog) -> Result<()> {
        if self.catalog_hash != catalog.hash_hex() {
            return Err(Error::CatalogMismatch {
                expected: self.catalog_hash.clone(),
                found: catalog.hash_hex(),
            });
        }
        Ok(())
    }
}

/// One converted utterance with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Converted {
    pub source_id: String,
    pub source: DomainPair,
    pub target: DomainPair,
    pub features: MelSpectrogram,
}

#[derive(Serialize, Deserialize)]
struct ConvertedEntry {
    file: String,
    source_id: String,
    source_speaker: usize,
    source_emotion: usize,
    target_speaker: usize,
    target_emotion: usize,
}

pub const CONVERSIONS_FILE: &str = "conversions.json";

/// Write converted features plus an index file into `dir`.
pub fn save_conversions(dir: &Path, set: &[Converted]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, c) in set.iter().enumerate() {
        let file = format!(
            "{i:05}-{}-to-{}-{}.feat",
            c.source_id, c.target.speaker, c.target.emotion
        );
        write_features(&dir.join(&file), &c.features)?;
        entries.push(ConvertedEntry {
            file,
            source_id: c.source_id.clone(),
            source_speaker: c.source.speaker,
            source_emotion: c.source.emotion,
            target_speaker: c.target.speaker,
            target_emotion: c.target.emotion,
        });
    }
    let path = dir.join(CONVERSIONS_FILE);
    let json = serde_json::to_string_pretty(&entries).expect("entries serialize");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_conversions(dir: &Path) -> Result<Vec<Converted>> {
    let path = dir.join(CONVERSIONS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries: Vec<ConvertedEntry> = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    entries
        .into_iter()
        .map(|e| {
            Ok(Converted {
                features: read_features(&dir.join(&e.file))?,
                source_id: e.source_id,
                source: DomainPair::new(e.source_speaker, e.source_emotion),
                target: DomainPair::new(e.target_speaker, e.target_emotion),
            })
        })
        .collect()
}

/// Conversion targets for test utterance `source`: every seen pair, plus
/// the unseen pairs of the utterance's own speaker.
pub fn sweep_targets(catalog: &DomainCatalog, source: DomainPair) -> Vec<DomainPair> {
    catalog
        .all_pairs()
        .filter(|&p| catalog.is_seen(p).unwrap_or(false) || p.speaker == source.speaker)
        .collect()
}

/// Convert every test utterance to each of its [`sweep_targets`] with the
/// mapping networks; latent codes derive from `seed`, the utterance and the
/// target.
pub fn conversion_sweep(converter: &Converter, corpus: &Corpus, seed: u64) -> Result<Vec<Converted>> {
    converter.check_catalog(corpus.catalog())?;
    let catalog = corpus.catalog();
    let dim = converter.models.arch.latent_dim;
    let mut out = Vec::new();
    for i in corpus.indices(Split::Test) {
        let u = &corpus.utterances()[i];
        for target in sweep_targets(catalog, u.pair()) {
            let style =
                StyleSource::mapped_from_seed(dim, mix_seed(seed, &[i as u64, catalog.flat_index(target) as u64]));
            out.push(Converted {
                source_id: u.id.clone(),
                source: u.pair(),
                target,
                features: converter.convert(u.features(), target, &style)?,
            });
        }
    }
    Ok(out)
}

/// Fraction of samples the probe assigns to their target emotion, per
/// target pair: `(correct, total)`.
pub fn emotion_accuracy(probe: &Probe, set: &[Converted]) -> BTreeMap<DomainPair, (usize, usize)> {
    let mut cells: BTreeMap<DomainPair, (usize, usize)> = BTreeMap::new();
    for c in set {
        let e = cells.entry(c.target).or_default();
        e.0 += usize::from(probe.predict(&c.features) == c.target.emotion);
        e.1 += 1;
    }
    cells
}

/// Unit embeddings of the real test utterances of every speaker.
pub fn speaker_references(embedder: &Probe, corpus: &Corpus) -> Vec<Vec<Vec<f64>>> {
    let mut refs = vec![Vec::new(); corpus.catalog().num_speakers()];
    for i in corpus.indices(Split::Test) {
        let u = &corpus.utterances()[i];
        refs[u.speaker].push(embedder.embed(u.features()));
    }
    refs
}

/// Mean inner product between `embedding` and every reference.
pub fn mean_similarity(embedding: &[f64], references: &[Vec<f64>]) -> f64 {
    references.iter().map(|r| similarity(embedding, r)).sum::<f64>() / references.len() as f64
}

/// Per converted sample, its mean similarity toward each speaker's
/// references.
pub fn speaker_similarity(embedder: &Probe, set: &[Converted], references: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    if let Some(s) = references.iter().position(|r| r.is_empty()) {
        return Err(Error::InvalidCorpus(format!(
            "speaker {s} has no test utterance to serve as a reference"
        )));
    }
    Ok(set
        .iter()
        .map(|c| {
            let e = embedder.embed(&c.features);
            references.iter().map(|r| mean_similarity(&e, r)).collect()
        })
        .collect())
}

/// Score a converted set.
pub fn evaluate_set(label: &str, probes: &Probes, corpus: &Corpus, set: &[Converted]) -> Result<EvalReport> {
    probes.check_catalog(corpus.catalog())?;
    let refs = speaker_references(&probes.speaker, corpus);
    let sims = speaker_similarity(&probes.speaker, set, &refs)?;
    let acc = emotion_accuracy(&probes.emotion, set);
    Ok(EvalReport::build(label, corpus.catalog(), set, &acc, &sims))
}

/// Convert the test split with [`conversion_sweep`] and score it.
pub fn evaluate(label: &str, converter: &Converter, probes: &Probes, corpus: &Corpus, seed: u64) -> Result<EvalReport> {
    let set = conversion_sweep(converter, corpus, seed)?;
    evaluate_set(label, probes, corpus, &set)
}

#[cfg(test)]
mod tests;
