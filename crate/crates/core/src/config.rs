//! Run configuration: TOML with flat dotted keys, layered as
//! preset < config file < command-line overrides.
//!
//! ```toml
//! preset = "smoke"
//! ablation = "no-vdp"
//! train.total_epochs = 60
//! train.lr.generator = 5e-4
//! probe.steps = 200
//! ```

use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::trainer::{Ablation, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write;
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Desk-scale networks and learning rates.
    #[default]
    Smoke,
    /// Full-length schedule with the conventional learning rates.
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Seeds the conversion latents and the probes.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub corpus: Option<PathBuf>,
    pub ablation: Ablation,
    pub train: TrainingConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset,
            corpus: None,
            ablation: Ablation::Full,
            train: match preset {
                Preset::Smoke => TrainingConfig::smoke(),
                Preset::Standard => TrainingConfig::default(),
            },
            probe: ProbeConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Merge `file` (TOML text) and `overrides` (`dotted.key`, raw value)
    /// over the preset named in the file, or `preset` when the file names
    /// none. The ablation is applied last.
    pub fn resolve(preset: Preset, file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let file_table: Table = match file {
            Some(text) => text
                .parse()
                .map_err(|e: toml::de::Error| Error::Parse(format!("config file: {e}")))?,
            None => Table::new(),
        };
        let mut preset = match file_table.get("preset") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::Parse(format!("preset: {e}")))?,
            None => preset,
        };
        if let Some((_, v)) = overrides.iter().rev().find(|(k, _)| k == "preset") {
            preset = Value::String(v.clone())
                .try_into()
                .map_err(|e: toml::de::Error| Error::Parse(format!("preset: {e}")))?;
        }
        let mut root = match Value::try_from(Self::from_preset(preset)).expect("config serializes") {
            Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        };
        merge(&mut root, file_table);
        for (key, raw) in overrides {
            set_dotted(&mut root, key, parse_value(raw))?;
        }
        let mut cfg: RunConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.ablation.apply(&mut cfg.train);
        Ok(cfg)
    }

    /// Every problem with the configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.train.problems();
        let p = &self.probe;
        if p.channels == 0 || p.embed_dim == 0 || p.batch_size == 0 || p.steps == 0 {
            out.push("probe.channels, probe.embed_dim, probe.batch_size and probe.steps must be positive".into());
        }
        if p.crop_frames < crate::corpus::MIN_FRAMES {
            out.push(format!(
                "probe.crop_frames must be at least {}",
                crate::corpus::MIN_FRAMES
            ));
        }
        if !(p.lr > 0.0 && p.lr.is_finite()) {
            out.push(format!("probe.lr must be positive, got {}", p.lr));
        }
        if !(0.0..=1.0).contains(&p.accuracy_gate) {
            out.push(format!(
                "probe.accuracy_gate must lie in [0, 1], got {}",
                p.accuracy_gate
            ));
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

    /// The configuration as `dotted.key = value` lines.
    pub fn to_flat_toml(&self) -> String {
        let Value::Table(t) = Value::try_from(self).expect("config serializes") else {
            unreachable!("config is a table")
        };
        let mut out = String::new();
        flatten(&t, "", &mut out);
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::format(path, e.to_string()))?;
        Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| Error::format(path, e.message().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_flat_toml()).map_err(|e| Error::io(path, e))
    }
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (Some(slot), v) => *slot = coerce(slot, v),
            (None, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Integers written where the default is a float become floats.
fn coerce(old: &Value, new: Value) -> Value {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(root: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("malformed key `{key}`")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let next = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match next {
            Value::Table(t) => t,
            _ => return Err(Error::InvalidConfig(format!("`{key}`: `{p}` is not a table"))),
        };
    }
    let last = parts[parts.len() - 1].to_string();
    let v = match cur.get(&last) {
        Some(old) => coerce(old, value),
        None => value,
    };
    cur.insert(last, v);
    Ok(())
}

fn flatten(t: &Table, prefix: &str, out: &mut String) {
    for (k, v) in t {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(inner) => flatten(inner, &key, out),
            v => {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
    }
}
