//! Training batches with virtual target pairs and resolved references.

use super::{Corpus, MelSpectrogram, Split};
use crate::catalog::{sample_seen_target, sample_vdp_target, DomainPair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How target pairs are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Speaker and emotion drawn independently (virtual domain pairing).
    Virtual,
    /// Uniform over seen pairs only.
    SeenOnly,
}

/// One training batch. Feature tensors are `[batch, n_bins, crop]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub source: Tensor,
    pub source_pairs: Vec<DomainPair>,
    pub target_pairs: Vec<DomainPair>,
    /// Speaker-style references and a second independent draw.
    pub ref_sp: Tensor,
    pub ref_sp2: Tensor,
    /// Emotion-style references and a second independent draw.
    pub ref_em: Tensor,
    pub ref_em2: Tensor,
    /// Corpus indices of every row above, for inspection.
    pub source_index: Vec<usize>,
    pub ref_sp_index: Vec<usize>,
    pub ref_em_index: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_pairs.is_empty()
    }
}

/// Copy `len` frames starting at `start`, padding past the end with `pad`.
pub fn crop_frames(mel: &MelSpectrogram, start: usize, len: usize, pad: f64) -> Vec<f64> {
    let (nb, nf) = (mel.n_bins(), mel.n_frames());
    let mut out = vec![pad; nb * len];
    for b in 0..nb {
        for t in 0..len {
            let src = start + t;
            if src < nf {
                out[b * len + t] = mel.data()[b * nf + src];
            }
        }
    }
    out
}

fn random_crop<R: Rng + ?Sized>(mel: &MelSpectrogram, len: usize, pad: f64, rng: &mut R) -> Vec<f64> {
    let start = if mel.n_frames() > len {
        rng.random_range(0..=mel.n_frames() - len)
    } else {
        0
    };
    crop_frames(mel, start, len, pad)
}

struct RefPicker<'a> {
    cells: &'a BTreeMap<DomainPair, Vec<usize>>,
}

impl RefPicker<'_> {
    fn from_cell<R: Rng + ?Sized>(&self, pair: DomainPair, rng: &mut R) -> Result<usize> {
        match self.cells.get(&pair) {
            Some(v) if !v.is_empty() => Ok(v[rng.random_range(0..v.len())]),
            _ => Err(Error::MissingReference {
                speaker: pair.speaker,
                emotion: pair.emotion,
            }),
        }
    }

    fn any_of<R: Rng + ?Sized>(&self, pairs: &[DomainPair], target: DomainPair, rng: &mut R) -> Result<usize> {
        if pairs.is_empty() {
            return Err(Error::MissingReference {
                speaker: target.speaker,
                emotion: target.emotion,
            });
        }
        self.from_cell(pairs[rng.random_range(0..pairs.len())], rng)
    }

    /// Speaker reference: the target cell when seen, otherwise any seen
    /// cell of the target speaker (its neutral data for neutral-only speakers).
    fn speaker_ref<R: Rng + ?Sized>(&self, target: DomainPair, rng: &mut R) -> Result<usize> {
        if self.cells.contains_key(&target) {
            return self.from_cell(target, rng);
        }
        let own: Vec<DomainPair> = self
            .cells
            .keys()
            .filter(|p| p.speaker == target.speaker)
            .copied()
            .collect();
        self.any_of(&own, target, rng)
    }

    /// Emotion reference: the target cell when seen, otherwise a supporting
    /// speaker that has the target emotion.
    fn emotion_ref<R: Rng + ?Sized>(&self, target: DomainPair, rng: &mut R) -> Result<usize> {
        if self.cells.contains_key(&target) {
            return self.from_cell(target, rng);
        }
        let donors: Vec<DomainPair> = self
            .cells
            .keys()
            .filter(|p| p.emotion == target.emotion && p.speaker != target.speaker)
            .copied()
            .collect();
        self.any_of(&donors, target, rng)
    }
}

/// Draw a batch from the train split.
pub fn make_batch<R: Rng + ?Sized>(
    corpus: &Corpus,
    batch_size: usize,
    policy: TargetPolicy,
    crop: usize,
    rng: &mut R,
) -> Result<Batch> {
    let train = corpus.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::InvalidCorpus("train split is empty".into()));
    }
    let cells = corpus.cells(Split::Train);
    let picker = RefPicker { cells: &cells };
    let pad = corpus.silence_value();
    let catalog = corpus.catalog();
    let utts = corpus.utterances();
    let nb = corpus.n_bins();

    let mut b = Batch {
        source: Tensor::zeros(&[0]),
        source_pairs: Vec::with_capacity(batch_size),
        target_pairs: Vec::with_capacity(batch_size),
        ref_sp: Tensor::zeros(&[0]),
        ref_sp2: Tensor::zeros(&[0]),
        ref_em: Tensor::zeros(&[0]),
        ref_em2: Tensor::zeros(&[0]),
        source_index: Vec::with_capacity(batch_size),
        ref_sp_index: Vec::with_capacity(batch_size),
        ref_em_index: Vec::with_capacity(batch_size),
    };
    let mut bufs: [Vec<f64>; 5] = Default::default();
    for _ in 0..batch_size {
        let src = train[rng.random_range(0..train.len())];
        let target = match policy {
            TargetPolicy::Virtual => sample_vdp_target(catalog, rng),
            TargetPolicy::SeenOnly => sample_seen_target(catalog, rng),
        };
        let sp = picker.speaker_ref(target, rng)?;
        let sp2 = picker.speaker_ref(target, rng)?;
        let em = picker.emotion_ref(target, rng)?;
        let em2 = picker.emotion_ref(target, rng)?;
        for (buf, idx) in bufs.iter_mut().zip([src, sp, sp2, em, em2]) {
            buf.extend(random_crop(utts[idx].features(), crop, pad, rng));
        }
        b.source_pairs.push(utts[src].pair());
        b.target_pairs.push(target);
        b.source_index.push(src);
        b.ref_sp_index.push(sp);
        b.ref_em_index.push(em);
    }
    let shape = vec![batch_size, nb, crop];
    let [s, sp, sp2, em, em2] = bufs;
    b.source = Tensor::new(shape.clone(), s);
    b.ref_sp = Tensor::new(shape.clone(), sp);
    b.ref_sp2 = Tensor::new(shape.clone(), sp2);
    b.ref_em = Tensor::new(shape.clone(), em);
    b.ref_em2 = Tensor::new(shape, em2);
    Ok(b)
}
