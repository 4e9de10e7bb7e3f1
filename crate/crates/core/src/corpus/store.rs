//! On-disk corpus layout.
//!
//! ```text
//! <dir>/manifest.json      CorpusManifest (pretty JSON)
//! <dir>/catalog.toml       DomainCatalog
//! <dir>/features/<id>.feat one file per utterance
//! ```
//!
//! A feature file is a 16-byte little-endian header (`EVCF`, version `u32`,
//! `n_bins` `u32`, `n_frames` `u32`) followed by `n_bins * n_frames` `f32`
//! values in row-major (bin-major) order.

use super::{Corpus, CorpusManifest, MelSpectrogram};
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const FEATURE_MAGIC: [u8; 4] = *b"EVCF";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_features(mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * mel.data().len());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(mel.n_bins() as u32).to_le_bytes());
    out.extend_from_slice(&(mel.n_frames() as u32).to_le_bytes());
    for v in mel.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<MelSpectrogram> {
    if bytes.len() < 16 || bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "missing EVCF header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (n_bins, n_frames) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != 4 * n_bins * n_frames {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes of values, found {}",
                4 * n_bins * n_frames,
                body.len()
            ),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MelSpectrogram::new(n_bins, n_frames, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_features(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    fs::write(path, encode_features(mel)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<MelSpectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

impl Corpus {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        for u in self.utterances() {
            write_features(&feat_dir.join(u.file_name()), u.features())?;
        }
        self.catalog().save(&dir.join("catalog.toml"))?;
        let path = dir.join("manifest.json");
        fs::write(&path, self.manifest_json()).map_err(|e| Error::io(&path, e))
    }

    fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes")
    }

    /// SHA-256 of `manifest.json` as [`Corpus::save`] writes it.
    pub fn manifest_hash(&self) -> String {
        Sha256::digest(self.manifest_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let n_bins = manifest.synth.n_bins;
        for u in &mut manifest.utterances {
            let fpath = dir.join("features").join(u.file_name());
            let mel = read_features(&fpath)?;
            if mel.n_bins() != n_bins || mel.n_frames() != u.f0_contour.len() {
                return Err(Error::format(&fpath, "feature shape disagrees with manifest"));
            }
            u.features = Some(mel);
        }
        Corpus::from_manifest(manifest)
    }
}
