use crate::error::{Error, Result};
use crate::losses::{AnnealState, LossWeights, Schedule};
use crate::networks::ArchConfig;
use crate::optim::AdamConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub generator: f64,
    pub style_encoder: f64,
    pub mapping: f64,
    pub discriminator: f64,
    pub classifier: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            generator: 1e-4,
            style_encoder: 1e-4,
            mapping: 2e-6,
            discriminator: 1e-4,
            classifier: 1e-4,
        }
    }
}

/// Supervised fitting of the frozen pitch extractor and content probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub pitch_steps: u64,
    pub content_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Largest acceptable held-out contour MAE; exceeding it fails the run.
    pub pitch_mae_gate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            pitch_steps: 600,
            content_steps: 300,
            batch_size: 8,
            lr: 2e-3,
            pitch_mae_gate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub total_epochs: u64,
    pub classifier_start_epoch: u64,
    pub batch_size: usize,
    /// Overrides `ceil(train utterances / batch_size)`.
    pub steps_per_epoch: Option<u64>,
    pub crop_frames: usize,
    pub anneal: bool,
    /// Defaults to `classifier_start_epoch`.
    pub anneal_start_epoch: Option<f64>,
    /// Defaults to `total_epochs`.
    pub anneal_end_epoch: Option<f64>,
    pub vdp: bool,
    pub fpm: bool,
    /// Also mask the generator's adversarial term for unseen targets.
    pub generator_fpm: bool,
    /// Save a numbered checkpoint every this many steps; 0 saves only the last.
    pub checkpoint_every: u64,
    pub weights: LossWeights,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub arch: ArchConfig,
    pub pretrain: PretrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_epochs: 150,
            classifier_start_epoch: 50,
            batch_size: 10,
            steps_per_epoch: None,
            crop_frames: 96,
            anneal: true,
            anneal_start_epoch: None,
            anneal_end_epoch: None,
            vdp: true,
            fpm: true,
            generator_fpm: true,
            checkpoint_every: 0,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            arch: ArchConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

impl TrainingConfig {
    /// Desk-scale settings used by the smoke run and the acceptance suite.
    pub fn smoke() -> Self {
        Self {
            seed: 7,
            crop_frames: 48,
            lr: LearningRates {
                generator: 1e-3,
                style_encoder: 1e-3,
                mapping: 1e-3,
                discriminator: 1e-3,
                classifier: 1e-3,
            },
            arch: ArchConfig {
                gen_channels: 48,
                gen_blocks: 3,
                enc_channels: 16,
                disc_channels: 16,
                mapper_hidden: 16,
                pitch_hidden: 16,
                content_channels: 16,
                ..ArchConfig::default()
            },
            ..Self::default()
        }
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.total_epochs == 0 {
            out.push("total_epochs must be positive".to_string());
        }
        if self.classifier_start_epoch >= self.total_epochs {
            out.push(format!(
                "classifier_start_epoch ({}) must be below total_epochs ({})",
                self.classifier_start_epoch, self.total_epochs
            ));
        }
        if self.batch_size < 2 {
            out.push(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.steps_per_epoch == Some(0) {
            out.push("steps_per_epoch must be positive".into());
        }
        if self.crop_frames < crate::corpus::MIN_FRAMES {
            out.push(format!("crop_frames must be at least {}", crate::corpus::MIN_FRAMES));
        }
        let rates = [
            ("lr.generator", self.lr.generator),
            ("lr.style_encoder", self.lr.style_encoder),
            ("lr.mapping", self.lr.mapping),
            ("lr.discriminator", self.lr.discriminator),
            ("lr.classifier", self.lr.classifier),
            ("pretrain.lr", self.pretrain.lr),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            out.push("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam.eps > 0.0) {
            out.push("adam.eps must be positive".into());
        }
        if self.pretrain.batch_size == 0 {
            out.push("pretrain.batch_size must be positive".into());
        }
        let gate = self.pretrain.pitch_mae_gate;
        if !(gate > 0.0 && gate.is_finite()) {
            out.push(format!(
                "pretrain.pitch_mae_gate must be positive and finite, got {gate}"
            ));
        }
        for e in [
            self.weights.validate(),
            self.arch.validate(),
            self.anneal_state().validate(),
        ] {
            if let Err(Error::InvalidConfig(msg)) = e {
                out.push(msg);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(p.join("; ")))
        }
    }

    pub fn anneal_state(&self) -> AnnealState {
        AnnealState {
            start_epoch: self.anneal_start_epoch.unwrap_or(self.classifier_start_epoch as f64),
            end_epoch: self.anneal_end_epoch.unwrap_or(self.total_epochs as f64),
            ..AnnealState::default()
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            weights: self.weights.clone(),
            anneal: self.anneal.then(|| self.anneal_state()),
        }
    }

    pub fn steps_per_epoch_for(&self, n_train: usize) -> u64 {
        self.steps_per_epoch
            .unwrap_or_else(|| (n_train as u64).div_ceil(self.batch_size as u64).max(1))
    }
}

/// Named configuration variants compared in the ablation report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoVdp,
    NoFpm,
    NoAnneal,
    #[serde(rename = "no-f0norm")]
    NoF0Norm,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoVdp,
        Ablation::NoFpm,
        Ablation::NoAnneal,
        Ablation::NoF0Norm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoVdp => "no-vdp",
            Ablation::NoFpm => "no-fpm",
            Ablation::NoAnneal => "no-anneal",
            Ablation::NoF0Norm => "no-f0norm",
        }
    }

    pub fn apply(self, cfg: &mut TrainingConfig) {
        match self {
            Ablation::Full => {}
            Ablation::NoVdp => cfg.vdp = false,
            Ablation::NoFpm => {
                cfg.fpm = false;
                cfg.generator_fpm = false;
            }
            Ablation::NoAnneal => cfg.anneal = false,
            Ablation::NoF0Norm => {
                cfg.weights.f0 = 0.0;
                cfg.weights.norm = 0.0;
            }
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownIdentifier {
                kind: "ablation",
                id: s.to_string(),
                valid: Ablation::ALL.iter().map(|a| a.name().to_string()).collect(),
            })
    }
}
