use super::{pretrain, TrainingConfig};
use crate::catalog::{CatalogFile, DomainCatalog, DomainPair};
use crate::checkpoint::Container;
use crate::corpus::{Corpus, MelSpectrogram, Split};
use crate::error::{Error, Result};
use crate::metrics::Record;
use crate::networks::{self, LatentCode, ModelSet, NetId, StyleKind};
use crate::optim::Adam;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Parameter groups with optimizer state.
pub const TRAINABLE: [NetId; 8] = [
    NetId::Generator,
    NetId::SpeakerEncoder,
    NetId::EmotionEncoder,
    NetId::SpeakerMapper,
    NetId::EmotionMapper,
    NetId::Discriminator,
    NetId::SpeakerClassifier,
    NetId::EmotionClassifier,
];

const FORMAT: &str = "emovc-train-state";

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    config: TrainingConfig,
    catalog: CatalogFile,
    catalog_hash: String,
    step: u64,
    epoch: u64,
    steps_per_epoch: u64,
    pretrained: bool,
    adam_steps: Vec<(String, u64)>,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainingConfig,
    pub catalog: DomainCatalog,
    pub models: ModelSet,
    pub optimizers: HashMap<NetId, Adam>,
    /// Steps completed.
    pub step: u64,
    pub steps_per_epoch: u64,
    /// Whether the frozen networks have been fitted.
    pub pretrained: bool,
}

impl TrainState {
    pub fn new(config: TrainingConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        if corpus.n_bins() != config.arch.n_bins {
            return Err(Error::InvalidConfig(format!(
                "arch.n_bins is {} but the corpus has {} bins",
                config.arch.n_bins,
                corpus.n_bins()
            )));
        }
        let n_train = corpus.indices(Split::Train).len();
        if n_train == 0 {
            return Err(Error::InvalidCorpus("train split is empty".into()));
        }
        let catalog = corpus.catalog().clone();
        let models = ModelSet::for_catalog(
            &config.arch,
            &catalog,
            crate::corpus::synth::mix_seed(config.seed, &[0x4d4f_4445]),
        );
        let optimizers = TRAINABLE.iter().map(|&id| (id, Adam::new(models.store(id)))).collect();
        Ok(Self {
            steps_per_epoch: config.steps_per_epoch_for(n_train),
            config,
            catalog,
            models,
            optimizers,
            step: 0,
            pretrained: false,
        })
    }

    /// Epoch of the next step.
    pub fn epoch(&self) -> u64 {
        self.step / self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.config.total_epochs * self.steps_per_epoch
    }

    pub fn optimizer(&mut self, id: NetId) -> &mut Adam {
        self.optimizers.get_mut(&id).expect("trainable network")
    }

    /// One optimizer update of network `id`.
    pub fn apply(&mut self, id: NetId, grads: &[Tensor], lr: f64) {
        let adam_cfg = self.config.adam.clone();
        let opt = self.optimizers.get_mut(&id).expect("trainable network");
        opt.update(self.models.store_mut(id), grads, lr, &adam_cfg);
    }

    /// Fit and freeze the pitch extractor and content probe.
    pub fn pretrain(&mut self, corpus: &Corpus) -> Result<Vec<Record>> {
        let mut records = pretrain::fit_pitch(&mut self.models.pitch, corpus, &self.config)?;
        records.extend(pretrain::fit_content(&mut self.models.content, corpus, &self.config)?);
        records.push(Record::new(
            0,
            "pre/pitch_mae",
            pretrain::pitch_mae(&self.models.pitch, corpus, Split::Test),
        ));
        records.push(Record::new(
            0,
            "pre/content_acc",
            pretrain::content_accuracy(&self.models.content, corpus, Split::Test),
        ));
        self.pretrained = true;
        Ok(records)
    }

    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        let (a, b) = (self.catalog.hash_hex(), corpus.catalog().hash_hex());
        if a != b {
            return Err(Error::CatalogMismatch { expected: a, found: b });
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let meta = Meta {
            format: FORMAT.into(),
            config: self.config.clone(),
            catalog: self.catalog.to_file(),
            catalog_hash: self.catalog.hash_hex(),
            step: self.step,
            epoch: self.epoch(),
            steps_per_epoch: self.steps_per_epoch,
            pretrained: self.pretrained,
            adam_steps: TRAINABLE
                .iter()
                .map(|id| (id.name().to_string(), self.optimizers[id].step))
                .collect(),
        };
        let mut c = Container::new(serde_json::to_value(meta).expect("meta serializes"));
        for id in NetId::ALL {
            let store = self.models.store(id);
            for (n, t) in store.names().iter().zip(store.values()) {
                c.push(format!("{}/{n}", id.name()), t.clone());
            }
        }
        for id in TRAINABLE {
            let store = self.models.store(id);
            let opt = &self.optimizers[&id];
            for (i, n) in store.names().iter().enumerate() {
                c.push(format!("adam/{}/m/{n}", id.name()), opt.m[i].clone());
                c.push(format!("adam/{}/v/{n}", id.name()), opt.v[i].clone());
            }
        }
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::format(path, format!("checkpoint header: {e}")))?;
        if meta.format != FORMAT {
            return Err(Error::format(
                path,
                format!("unexpected checkpoint kind {:?}", meta.format),
            ));
        }
        let catalog = DomainCatalog::from_file(meta.catalog)?;
        if catalog.hash_hex() != meta.catalog_hash {
            return Err(Error::CatalogMismatch {
                expected: meta.catalog_hash,
                found: catalog.hash_hex(),
            });
        }
        let mut models = ModelSet::for_catalog(&meta.config.arch, &catalog, 0);
        let missing = |name: &str| Error::format(path, format!("checkpoint lacks tensor {name}"));
        let fetch = |name: String, like: &Tensor| -> Result<Tensor> {
            let t = c.get(&name).ok_or_else(|| missing(&name))?;
            if t.shape() != like.shape() {
                return Err(Error::format(
                    path,
                    format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), like.shape()),
                ));
            }
            Ok(t.clone())
        };
        for id in NetId::ALL {
            let store = models.store_mut(id);
            for i in 0..store.len() {
                let name = format!("{}/{}", id.name(), store.names()[i]);
                let t = fetch(name, store.get(i))?;
                *store.get_mut(i) = t;
            }
        }
        let mut optimizers = HashMap::new();
        for id in TRAINABLE {
            let store = models.store(id);
            let mut opt = Adam::new(store);
            opt.step = meta
                .adam_steps
                .iter()
                .find(|(n, _)| n == id.name())
                .map(|p| p.1)
                .ok_or_else(|| missing(id.name()))?;
            for (i, n) in store.names().iter().enumerate() {
                opt.m[i] = fetch(format!("adam/{}/m/{n}", id.name()), store.get(i))?;
                opt.v[i] = fetch(format!("adam/{}/v/{n}", id.name()), store.get(i))?;
            }
            optimizers.insert(id, opt);
        }
        Ok(Self {
            config: meta.config,
            catalog,
            models,
            optimizers,
            step: meta.step,
            steps_per_epoch: meta.steps_per_epoch,
            pretrained: meta.pretrained,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?, path)
    }
}

/// Where conversion takes its style embeddings from.
#[derive(Clone, Debug)]
pub enum StyleSource {
    /// Mapping networks on latent codes.
    Mapped { z_sp: LatentCode, z_em: LatentCode },
    /// Style encoders on reference utterances.
    Referenced {
        speaker: MelSpectrogram,
        emotion: MelSpectrogram,
    },
}

impl StyleSource {
    /// Latent codes derived from `seed`, one per mapping network.
    pub fn mapped_from_seed(latent_dim: usize, seed: u64) -> Self {
        let s = |part| crate::corpus::synth::mix_seed(seed, &[part]);
        StyleSource::Mapped {
            z_sp: LatentCode::from_seed(latent_dim, s(1)),
            z_em: LatentCode::from_seed(latent_dim, s(2)),
        }
    }
}

/// Inference view of a trained model.
#[derive(Clone, Debug)]
pub struct Converter {
    pub models: ModelSet,
    pub catalog: DomainCatalog,
}

impl Converter {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            models: state.models.clone(),
            catalog: state.catalog.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_state(&TrainState::load(path)?))
    }

    /// Fail unless `other` is the catalog this model was trained with.
    pub fn check_catalog(&self, other: &DomainCatalog) -> Result<()> {
        let (a, b) = (self.catalog.hash_hex(), other.hash_hex());
        if a != b {
            return Err(Error::CatalogMismatch { expected: a, found: b });
        }
        Ok(())
    }

    /// `G(X, F0(X), h_sp, h_em)` with styles for `target` from `style`.
    pub fn convert(&self, x: &MelSpectrogram, target: DomainPair, style: &StyleSource) -> Result<MelSpectrogram> {
        self.catalog.check_pair(target)?;
        let m = &self.models;
        let (h_sp, h_em) = match style {
            StyleSource::Mapped { z_sp, z_em } => (
                networks::map_style(m, z_sp, target.speaker, StyleKind::Speaker)?,
                networks::map_style(m, z_em, target.emotion, StyleKind::Emotion)?,
            ),
            StyleSource::Referenced { speaker, emotion } => (
                networks::encode_style(m, speaker, target.speaker, StyleKind::Speaker)?,
                networks::encode_style(m, emotion, target.emotion, StyleKind::Emotion)?,
            ),
        };
        let pitch = networks::extract_pitch(m, x)?;
        networks::generate(m, x, &pitch, &h_sp, &h_em)
    }
}
