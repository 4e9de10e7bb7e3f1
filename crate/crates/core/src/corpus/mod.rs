//! Synthetic multi-speaker, multi-emotion feature corpus.
//!
//! Utterances exist only for seen (speaker, emotion) pairs. Every utterance
//! carries its ground-truth factors: speaker, emotion, content symbols and a
//! pitch contour. Features are globally standardized with statistics kept
//! in the manifest.

mod batch;
mod store;
pub mod synth;

pub use batch::{crop_frames, make_batch, Batch, TargetPolicy};
pub use store::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{ContentPlan, EmotionStyle, SpeakerStyle, SymbolStyle, SynthParams, SILENCE};

use crate::catalog::{CatalogFile, DomainCatalog, DomainPair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Minimum frame count for any feature matrix.
pub const MIN_FRAMES: usize = 8;

/// Feature matrix `[n_bins, n_frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Tensor,
}

impl MelSpectrogram {
    pub fn new(n_bins: usize, n_frames: usize, values: Vec<f64>) -> Result<Self> {
        if n_frames < MIN_FRAMES {
            return Err(Error::Shape(format!(
                "{n_frames} frames is below the minimum of {MIN_FRAMES}"
            )));
        }
        if values.len() != n_bins * n_frames {
            return Err(Error::Shape(format!(
                "{} values for {n_bins}x{n_frames} features",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite feature value".into()));
        }
        Ok(Self {
            values: Tensor::new(vec![n_bins, n_frames], values),
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!("features must be 2-D, got {:?}", t.shape())));
        }
        let (b, f) = (t.dim(0), t.dim(1));
        Self::new(b, f, t.into_data())
    }

    pub fn n_bins(&self) -> usize {
        self.values.dim(0)
    }

    pub fn n_frames(&self) -> usize {
        self.values.dim(1)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    /// Value at (bin, frame).
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values.data()[bin * self.n_frames() + frame]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One utterance and its ground-truth factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: usize,
    pub emotion: usize,
    pub split: Split,
    /// Spoken symbol sequence, independent of timing.
    pub content_ids: Vec<u8>,
    /// Symbol per frame, [`SILENCE`] on gaps.
    pub frame_symbols: Vec<u8>,
    /// Pitch ground truth per frame, divided by a fixed reference pitch;
    /// zero on silent frames.
    pub f0_contour: Vec<f32>,
    #[serde(skip)]
    pub features: Option<MelSpectrogram>,
}

impl Utterance {
    pub fn pair(&self) -> DomainPair {
        DomainPair::new(self.speaker, self.emotion)
    }

    pub fn features(&self) -> &MelSpectrogram {
        self.features.as_ref().expect("utterance features loaded")
    }

    pub fn file_name(&self) -> String {
        format!("{}.feat", self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

/// Everything needed to reproduce and interpret a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub per_cell_count: usize,
    pub catalog: CatalogFile,
    pub synth: SynthParams,
    pub speaker_styles: Vec<SpeakerStyle>,
    pub emotion_styles: Vec<EmotionStyle>,
    pub symbol_styles: Vec<SymbolStyle>,
    pub normalization: Normalization,
    pub split_ratio: Option<f64>,
    pub split_seed: Option<u64>,
    pub utterances: Vec<Utterance>,
}

/// A manifest with features resident in memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    catalog: DomainCatalog,
}

impl Corpus {
    pub fn from_manifest(manifest: CorpusManifest) -> Result<Self> {
        let catalog = DomainCatalog::from_file(manifest.catalog.clone())?;
        for u in &manifest.utterances {
            if !catalog.is_seen(u.pair())? {
                return Err(Error::InvalidCorpus(format!("utterance {} has an unseen pair", u.id)));
            }
        }
        Ok(Self { manifest, catalog })
    }

    pub fn catalog(&self) -> &DomainCatalog {
        &self.catalog
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.manifest.utterances
    }

    pub fn n_bins(&self) -> usize {
        self.manifest.synth.n_bins
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.utterances()
            .iter()
            .enumerate()
            .filter(|(_, u)| u.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Utterance indices of `split`, grouped by seen pair.
    pub fn cells(&self, split: Split) -> BTreeMap<DomainPair, Vec<usize>> {
        let mut cells: BTreeMap<DomainPair, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances().iter().enumerate() {
            if u.split == split {
                cells.entry(u.pair()).or_default().push(i);
            }
        }
        cells
    }

    /// Standardized value of the synthetic silence floor; used for padding.
    pub fn silence_value(&self) -> f64 {
        let n = self.manifest.normalization;
        (self.manifest.synth.floor_level - n.mean) / n.std
    }

    /// Overall mean and standard deviation of all stored feature values.
    pub fn feature_stats(&self) -> (f64, f64) {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
        for u in self.utterances() {
            for v in u.features().data() {
                s += v;
                s2 += v * v;
                n += 1;
            }
        }
        let mean = s / n as f64;
        (mean, (s2 / n as f64 - mean * mean).sqrt())
    }
}

/// Synthesize `per_cell_count` utterances for every seen pair.
///
/// All utterances start in the train split; see [`split_corpus`].
pub fn generate_corpus(
    catalog: &DomainCatalog,
    per_cell_count: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<Corpus> {
    if per_cell_count < 2 {
        return Err(Error::InvalidCorpus(format!(
            "per-cell count {per_cell_count} is below the minimum of 2"
        )));
    }
    params.validate()?;
    let speaker_styles = synth::speaker_styles(params, catalog.num_speakers(), seed);
    let emotion_styles = synth::emotion_styles(params, catalog.num_emotions(), seed);
    let symbol_styles = synth::symbol_styles(params, seed);

    let mut rendered = Vec::new();
    let mut utterances = Vec::new();
    for pair in catalog.seen_pairs() {
        for i in 0..per_cell_count {
            let cell = [pair.speaker as u64, pair.emotion as u64, i as u64];
            let plan = synth::content_plan(params, &mut synth::rng_for(seed, &[4, cell[0], cell[1], cell[2]]));
            let mut rng = synth::rng_for(seed, &[5, cell[0], cell[1], cell[2]]);
            let r = synth::render(
                params,
                &speaker_styles[pair.speaker],
                &emotion_styles[pair.emotion],
                &symbol_styles,
                &plan,
                &mut rng,
            );
            if r.n_frames < MIN_FRAMES {
                return Err(Error::InvalidCorpus(
                    "utterances too short; raise symbols_per_utterance".into(),
                ));
            }
            utterances.push(Utterance {
                id: format!(
                    "{}-{}-{:04}",
                    catalog.speakers()[pair.speaker],
                    catalog.emotions()[pair.emotion],
                    i
                ),
                speaker: pair.speaker,
                emotion: pair.emotion,
                split: Split::Train,
                content_ids: plan.symbols.clone(),
                frame_symbols: r.frame_symbols.clone(),
                f0_contour: r.f0_contour.iter().map(|v| *v as f32).collect(),
                features: None,
            });
            rendered.push(r);
        }
    }

    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for r in &rendered {
        for v in &r.values {
            s += v;
            s2 += v * v;
            n += 1;
        }
    }
    let mean = s / n as f64;
    let std = (s2 / n as f64 - mean * mean).sqrt();
    for (u, r) in utterances.iter_mut().zip(&rendered) {
        // stored as f32 on disk; round here so memory matches files
        let values = r.values.iter().map(|v| ((v - mean) / std) as f32 as f64).collect();
        u.features = Some(MelSpectrogram::new(params.n_bins, r.n_frames, values)?);
    }

    Corpus::from_manifest(CorpusManifest {
        version: 1,
        seed,
        per_cell_count,
        catalog: catalog.to_file(),
        synth: params.clone(),
        speaker_styles,
        emotion_styles,
        symbol_styles,
        normalization: Normalization { mean, std },
        split_ratio: None,
        split_seed: None,
        utterances,
    })
}

/// Stratified random train/test assignment: within every seen pair a
/// fraction `ratio` of utterances (rounded, at least one held out) trains.
pub fn split_corpus(corpus: &mut Corpus, ratio: f64, seed: u64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidCorpus(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut cells: BTreeMap<DomainPair, Vec<usize>> = BTreeMap::new();
    for (i, u) in corpus.manifest.utterances.iter().enumerate() {
        cells.entry(u.pair()).or_default().push(i);
    }
    for (pair, mut idx) in cells {
        let n = idx.len();
        if n < 2 {
            return Err(Error::InvalidCorpus(format!(
                "cell ({}, {}) has {n} utterance(s); cannot hold one out",
                pair.speaker, pair.emotion
            )));
        }
        let n_test = ((n as f64 * (1.0 - ratio)).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut synth::rng_for(
            seed,
            &[6, pair.speaker as u64, pair.emotion as u64],
        ));
        for (j, &i) in idx.iter().enumerate() {
            corpus.manifest.utterances[i].split = if j < n_test { Split::Test } else { Split::Train };
        }
    }
    corpus.manifest.split_ratio = Some(ratio);
    corpus.manifest.split_seed = Some(seed);
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests;
