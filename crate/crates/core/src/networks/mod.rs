//! Converter, style encoders, mapping networks, discriminator, source
//! classifiers and the frozen pitch and content networks.
//!
//! Training code works on batched graph-level `forward` methods. The free
//! functions in this module ([`encode_style`], [`generate`], ...) are the
//! single-utterance inference entry points.

mod modules;

pub use modules::{
    Classifier, ContentProbe, Discriminator, Generator, MappingNetwork, PitchExtractor, ProbeNet, StyleEncoder,
};

use crate::autodiff::Graph;
use crate::catalog::{DomainCatalog, DomainPair};
use crate::corpus::MelSpectrogram;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub n_bins: usize,
    pub style_dim: usize,
    pub latent_dim: usize,
    pub kernel: usize,
    pub gen_channels: usize,
    pub gen_blocks: usize,
    pub enc_channels: usize,
    pub disc_channels: usize,
    pub mapper_hidden: usize,
    pub pitch_hidden: usize,
    pub pitch_dim: usize,
    pub content_channels: usize,
    pub num_symbols: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            n_bins: 48,
            style_dim: 16,
            latent_dim: 8,
            kernel: 3,
            gen_channels: 32,
            gen_blocks: 2,
            enc_channels: 32,
            disc_channels: 32,
            mapper_hidden: 32,
            pitch_hidden: 32,
            pitch_dim: 8,
            content_channels: 16,
            num_symbols: 12,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_bins", self.n_bins),
            ("style_dim", self.style_dim),
            ("latent_dim", self.latent_dim),
            ("gen_channels", self.gen_channels),
            ("enc_channels", self.enc_channels),
            ("disc_channels", self.disc_channels),
            ("mapper_hidden", self.mapper_hidden),
            ("pitch_hidden", self.pitch_hidden),
            ("pitch_dim", self.pitch_dim),
            ("content_channels", self.content_channels),
            ("num_symbols", self.num_symbols),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("arch.{name} must be positive")));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig("arch.kernel must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleKind {
    Speaker,
    Emotion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleEmbedding {
    pub vector: Vec<f64>,
    pub kind: StyleKind,
}

/// Latent input of a mapping network.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub vector: Vec<f64>,
}

impl LatentCode {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            vector: (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    pub fn from_seed(dim: usize, seed: u64) -> Self {
        Self::sample(dim, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Pitch features `[pitch_dim, T]` and the standardized contour.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchEmbedding {
    pub features: Tensor,
    pub contour: Vec<f64>,
}

/// Parameter groups of a [`ModelSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetId {
    Generator,
    SpeakerEncoder,
    EmotionEncoder,
    SpeakerMapper,
    EmotionMapper,
    Discriminator,
    SpeakerClassifier,
    EmotionClassifier,
    PitchExtractor,
    ContentProbe,
}

impl NetId {
    pub const ALL: [NetId; 10] = [
        NetId::Generator,
        NetId::SpeakerEncoder,
        NetId::EmotionEncoder,
        NetId::SpeakerMapper,
        NetId::EmotionMapper,
        NetId::Discriminator,
        NetId::SpeakerClassifier,
        NetId::EmotionClassifier,
        NetId::PitchExtractor,
        NetId::ContentProbe,
    ];

    /// Networks updated by the converter-side step.
    pub const GENERATOR_SIDE: [NetId; 5] = [
        NetId::Generator,
        NetId::SpeakerEncoder,
        NetId::EmotionEncoder,
        NetId::SpeakerMapper,
        NetId::EmotionMapper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetId::Generator => "generator",
            NetId::SpeakerEncoder => "speaker_encoder",
            NetId::EmotionEncoder => "emotion_encoder",
            NetId::SpeakerMapper => "speaker_mapper",
            NetId::EmotionMapper => "emotion_mapper",
            NetId::Discriminator => "discriminator",
            NetId::SpeakerClassifier => "speaker_classifier",
            NetId::EmotionClassifier => "emotion_classifier",
            NetId::PitchExtractor => "pitch_extractor",
            NetId::ContentProbe => "content_probe",
        }
    }

    pub fn from_name(name: &str) -> Option<NetId> {
        NetId::ALL.iter().copied().find(|n| n.name() == name)
    }
}

/// Every network of one model instance.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub arch: ArchConfig,
    pub generator: Generator,
    pub speaker_encoder: StyleEncoder,
    pub emotion_encoder: StyleEncoder,
    pub speaker_mapper: MappingNetwork,
    pub emotion_mapper: MappingNetwork,
    pub discriminator: Discriminator,
    pub speaker_classifier: Classifier,
    pub emotion_classifier: Classifier,
    pub pitch: PitchExtractor,
    pub content: ContentProbe,
}

impl ModelSet {
    pub fn new(arch: &ArchConfig, speakers: usize, emotions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            arch: arch.clone(),
            generator: Generator::new(arch, &mut rng),
            speaker_encoder: StyleEncoder::new(arch, speakers, &mut rng),
            emotion_encoder: StyleEncoder::new(arch, emotions, &mut rng),
            speaker_mapper: MappingNetwork::new(arch, speakers, &mut rng),
            emotion_mapper: MappingNetwork::new(arch, emotions, &mut rng),
            discriminator: Discriminator::new(arch, speakers * emotions, &mut rng),
            speaker_classifier: Classifier::new(arch, speakers, &mut rng),
            emotion_classifier: Classifier::new(arch, emotions, &mut rng),
            pitch: PitchExtractor::new(arch, &mut rng),
            content: ContentProbe::new(arch, &mut rng),
        }
    }

    pub fn for_catalog(arch: &ArchConfig, catalog: &DomainCatalog, seed: u64) -> Self {
        Self::new(arch, catalog.num_speakers(), catalog.num_emotions(), seed)
    }

    pub fn num_speakers(&self) -> usize {
        self.speaker_classifier.classes()
    }

    pub fn num_emotions(&self) -> usize {
        self.emotion_classifier.classes()
    }

    pub fn store(&self, id: NetId) -> &ParamStore {
        match id {
            NetId::Generator => &self.generator.params,
            NetId::SpeakerEncoder => &self.speaker_encoder.params,
            NetId::EmotionEncoder => &self.emotion_encoder.params,
            NetId::SpeakerMapper => &self.speaker_mapper.params,
            NetId::EmotionMapper => &self.emotion_mapper.params,
            NetId::Discriminator => &self.discriminator.params,
            NetId::SpeakerClassifier => &self.speaker_classifier.params,
            NetId::EmotionClassifier => &self.emotion_classifier.params,
            NetId::PitchExtractor => &self.pitch.params,
            NetId::ContentProbe => &self.content.params,
        }
    }

    pub fn store_mut(&mut self, id: NetId) -> &mut ParamStore {
        match id {
            NetId::Generator => &mut self.generator.params,
            NetId::SpeakerEncoder => &mut self.speaker_encoder.params,
            NetId::EmotionEncoder => &mut self.emotion_encoder.params,
            NetId::SpeakerMapper => &mut self.speaker_mapper.params,
            NetId::EmotionMapper => &mut self.emotion_mapper.params,
            NetId::Discriminator => &mut self.discriminator.params,
            NetId::SpeakerClassifier => &mut self.speaker_classifier.params,
            NetId::EmotionClassifier => &mut self.emotion_classifier.params,
            NetId::PitchExtractor => &mut self.pitch.params,
            NetId::ContentProbe => &mut self.content.params,
        }
    }

    pub fn hash(&self, id: NetId) -> String {
        self.store(id).hash_hex()
    }
}

fn batch_of_one(mel: &MelSpectrogram) -> Tensor {
    mel.tensor().clone().reshaped(vec![1, mel.n_bins(), mel.n_frames()])
}

fn check_bins(models: &ModelSet, mel: &MelSpectrogram) -> Result<()> {
    if mel.n_bins() != models.arch.n_bins {
        return Err(Error::Shape(format!(
            "features have {} bins, model expects {}",
            mel.n_bins(),
            models.arch.n_bins
        )));
    }
    Ok(())
}

fn check_code(code: usize, domains: usize, kind: StyleKind) -> Result<()> {
    if code >= domains {
        return Err(Error::InvalidConfig(format!(
            "{kind:?} domain code {code} out of range (0..{domains})"
        )));
    }
    Ok(())
}

/// `h = S(reference, code)` for one reference utterance.
pub fn encode_style(
    models: &ModelSet,
    reference: &MelSpectrogram,
    code: usize,
    kind: StyleKind,
) -> Result<StyleEmbedding> {
    check_bins(models, reference)?;
    let enc = match kind {
        StyleKind::Speaker => &models.speaker_encoder,
        StyleKind::Emotion => &models.emotion_encoder,
    };
    check_code(code, enc.domains(), kind)?;
    let mut g = Graph::new();
    let p = enc.params.bind(&mut g, false);
    let x = g.constant(batch_of_one(reference));
    let h = enc.forward(&mut g, &p, x, &[code]);
    Ok(StyleEmbedding {
        vector: g.value(h).data().to_vec(),
        kind,
    })
}

/// `h = M(z, code)`.
pub fn map_style(models: &ModelSet, z: &LatentCode, code: usize, kind: StyleKind) -> Result<StyleEmbedding> {
    if z.vector.len() != models.arch.latent_dim {
        return Err(Error::Shape(format!(
            "latent has {} dims, model expects {}",
            z.vector.len(),
            models.arch.latent_dim
        )));
    }
    let mapper = match kind {
        StyleKind::Speaker => &models.speaker_mapper,
        StyleKind::Emotion => &models.emotion_mapper,
    };
    check_code(code, mapper.domains(), kind)?;
    let mut g = Graph::new();
    let p = mapper.params.bind(&mut g, false);
    let zv = g.constant(Tensor::new(vec![1, z.vector.len()], z.vector.clone()));
    let h = mapper.forward(&mut g, &p, zv, &[code]);
    Ok(StyleEmbedding {
        vector: g.value(h).data().to_vec(),
        kind,
    })
}

/// Pitch features and standardized contour of `x`.
pub fn extract_pitch(models: &ModelSet, x: &MelSpectrogram) -> Result<PitchEmbedding> {
    check_bins(models, x)?;
    let mut g = Graph::new();
    let p = models.pitch.params.bind(&mut g, false);
    let xv = g.constant(batch_of_one(x));
    let (feat, contour) = models.pitch.forward(&mut g, &p, xv);
    let f = g.value(feat);
    Ok(PitchEmbedding {
        features: f.clone().reshaped(vec![f.dim(1), f.dim(2)]),
        contour: g.value(contour).data().to_vec(),
    })
}

/// `G(x, h_f0, h_sp, h_em)`.
pub fn generate(
    models: &ModelSet,
    x: &MelSpectrogram,
    pitch: &PitchEmbedding,
    h_sp: &StyleEmbedding,
    h_em: &StyleEmbedding,
) -> Result<MelSpectrogram> {
    check_bins(models, x)?;
    let arch = &models.arch;
    if pitch.features.shape() != [arch.pitch_dim, x.n_frames()] {
        return Err(Error::Shape(format!(
            "pitch features {:?} do not match {} frames",
            pitch.features.shape(),
            x.n_frames()
        )));
    }
    if h_sp.vector.len() != arch.style_dim || h_em.vector.len() != arch.style_dim {
        return Err(Error::Shape(format!(
            "style embeddings must have {} dims",
            arch.style_dim
        )));
    }
    let mut g = Graph::new();
    let p = models.generator.params.bind(&mut g, false);
    let xv = g.constant(batch_of_one(x));
    let f0 = g.constant(pitch.features.clone().reshaped(vec![1, arch.pitch_dim, x.n_frames()]));
    let sp = g.constant(Tensor::new(vec![1, arch.style_dim], h_sp.vector.clone()));
    let em = g.constant(Tensor::new(vec![1, arch.style_dim], h_em.vector.clone()));
    let y = models.generator.forward(&mut g, &p, xv, f0, sp, em);
    MelSpectrogram::new(x.n_bins(), x.n_frames(), g.value(y).data().to_vec())
}

/// Real/fake logit of `x` under the head for `pair`; squash with a sigmoid
/// for the probability of "real".
pub fn discriminate(models: &ModelSet, catalog: &DomainCatalog, x: &MelSpectrogram, pair: DomainPair) -> Result<f64> {
    check_bins(models, x)?;
    catalog.check_pair(pair)?;
    let mut g = Graph::new();
    let p = models.discriminator.params.bind(&mut g, false);
    let xv = g.constant(batch_of_one(x));
    let y = models
        .discriminator
        .forward(&mut g, &p, xv, &[catalog.flat_index(pair)]);
    Ok(g.value(y).item())
}

/// Source-class logits from the speaker or emotion classifier.
pub fn classify_source(models: &ModelSet, x: &MelSpectrogram, kind: StyleKind) -> Result<Vec<f64>> {
    check_bins(models, x)?;
    let c = match kind {
        StyleKind::Speaker => &models.speaker_classifier,
        StyleKind::Emotion => &models.emotion_classifier,
    };
    let mut g = Graph::new();
    let p = c.params.bind(&mut g, false);
    let xv = g.constant(batch_of_one(x));
    let y = c.forward(&mut g, &p, xv);
    Ok(g.value(y).data().to_vec())
}
