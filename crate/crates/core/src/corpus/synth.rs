//! Factorized synthesis of mel-like feature matrices.
//!
//! Each frame is the sum of a speaker envelope, an emotion spectral tilt and
//! gain, a content pattern, and a harmonic comb at the current pitch. Silent
//! frames carry only a floor level plus noise. Emotion also scales pitch,
//! deepens or flattens its modulation, and sets how often silent gaps are
//! inserted between content segments.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Marker in per-frame content labels for silent frames.
pub const SILENCE: u8 = u8::MAX;

/// Pitch (Hz) that maps to a ground-truth contour value of 1.0.
pub const PITCH_REFERENCE_HZ: f64 = 200.0;

/// Generator settings; the `*_spread` fields control how far apart the
/// factor values of different speakers and emotions are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_bins: usize,
    /// Frequency width of one bin, used to place harmonics.
    pub bin_hz: f64,
    pub num_symbols: usize,
    pub symbols_per_utterance: (usize, usize),
    pub segment_frames: (usize, usize),
    pub gap_frames: (usize, usize),
    pub pitch_center_hz: f64,
    pub speaker_pitch_spread_hz: f64,
    pub envelope_spread: f64,
    pub emotion_pitch_spread: f64,
    pub emotion_tilt_spread: f64,
    pub emotion_gain_spread: f64,
    pub silence_ratio_center: f64,
    pub silence_ratio_spread: f64,
    pub pitch_mod_depth: f64,
    pub content_amplitude: f64,
    pub harmonic_amplitude: f64,
    pub floor_level: f64,
    pub noise_std: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_bins: 48,
            bin_hz: 25.0,
            num_symbols: 12,
            symbols_per_utterance: (10, 14),
            segment_frames: (7, 11),
            gap_frames: (3, 6),
            pitch_center_hz: 150.0,
            speaker_pitch_spread_hz: 45.0,
            envelope_spread: 1.5,
            emotion_pitch_spread: 0.25,
            emotion_tilt_spread: 1.2,
            emotion_gain_spread: 0.8,
            silence_ratio_center: 0.35,
            silence_ratio_spread: 0.3,
            pitch_mod_depth: 0.05,
            content_amplitude: 1.2,
            harmonic_amplitude: 2.0,
            floor_level: -3.0,
            noise_std: 0.1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidCorpus(m.to_string()));
        if self.n_bins < 8 {
            return bad("n_bins must be at least 8");
        }
        if self.num_symbols < 2 || self.num_symbols >= SILENCE as usize {
            return bad("num_symbols must be in [2, 254]");
        }
        for (name, (lo, hi)) in [
            ("symbols_per_utterance", self.symbols_per_utterance),
            ("segment_frames", self.segment_frames),
            ("gap_frames", self.gap_frames),
        ] {
            if lo == 0 || lo > hi {
                return bad(&format!("{name} must be a nonempty positive range"));
            }
        }
        let spreads = [
            ("speaker_pitch_spread_hz", self.speaker_pitch_spread_hz),
            ("envelope_spread", self.envelope_spread),
            ("emotion_pitch_spread", self.emotion_pitch_spread),
            ("emotion_tilt_spread", self.emotion_tilt_spread),
            ("emotion_gain_spread", self.emotion_gain_spread),
            ("silence_ratio_spread", self.silence_ratio_spread),
            ("content_amplitude", self.content_amplitude),
            ("harmonic_amplitude", self.harmonic_amplitude),
            ("noise_std", self.noise_std),
        ];
        for (name, v) in spreads {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!(
                    "{name} must be positive (zero variance makes factors unidentifiable)"
                ));
            }
        }
        if self.emotion_pitch_spread >= 1.0 {
            return bad("emotion_pitch_spread must be below 1");
        }
        if self.pitch_center_hz - self.speaker_pitch_spread_hz <= self.bin_hz {
            return bad("lowest speaker pitch must exceed one bin");
        }
        let (lo, hi) = (
            self.silence_ratio_center - self.silence_ratio_spread,
            self.silence_ratio_center + self.silence_ratio_spread,
        );
        if lo < 0.0 || hi > 1.0 {
            return bad("silence ratio range must lie within [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStyle {
    pub mean_pitch_hz: f64,
    pub envelope: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionStyle {
    pub pitch_scale: f64,
    pub pitch_mod_scale: f64,
    pub gain: f64,
    pub tilt: Vec<f64>,
    pub silence_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolStyle {
    pub pattern: Vec<f64>,
    /// Relative pitch offset while this symbol is spoken.
    pub intonation: f64,
}

/// Content of one utterance: symbol sequence and per-symbol durations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentPlan {
    pub symbols: Vec<u8>,
    pub durations: Vec<usize>,
}

/// Raw (unnormalized) rendering of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    /// Row-major `[n_bins, n_frames]`.
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub frame_symbols: Vec<u8>,
    /// Pitch over [`PITCH_REFERENCE_HZ`]; zero on silent frames.
    pub f0_contour: Vec<f64>,
}

/// SplitMix64 finalizer; mixes seeds and tags into independent streams.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, parts))
}

fn gaussian_bump(n: usize, center: f64, width: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| (-(k as f64 - center).powi(2) / (2.0 * width * width)).exp())
}

/// Evenly spaced values in `[-1, 1]`, shuffled.
fn stratified<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64 - 1.0).collect()
    };
    v.shuffle(rng);
    v
}

pub fn speaker_styles(params: &SynthParams, n: usize, seed: u64) -> Vec<SpeakerStyle> {
    let mut rng = rng_for(seed, &[1]);
    let offsets = stratified(n, &mut rng);
    offsets
        .into_iter()
        .map(|o| {
            let mut envelope = vec![0.0; params.n_bins];
            let slope = rng.random_range(-1.0..1.0) * params.envelope_spread / params.n_bins as f64;
            for (k, e) in envelope.iter_mut().enumerate() {
                *e = slope * (k as f64 - params.n_bins as f64 / 2.0);
            }
            for _ in 0..3 {
                let center = rng.random_range(0.0..params.n_bins as f64);
                let width = rng.random_range(2.5..6.0);
                let amp = params.envelope_spread * rng.random_range(0.5..1.0) * if rng.random() { 1.0 } else { -1.0 };
                for (e, b) in envelope.iter_mut().zip(gaussian_bump(params.n_bins, center, width)) {
                    *e += amp * b;
                }
            }
            SpeakerStyle {
                mean_pitch_hz: params.pitch_center_hz + o * params.speaker_pitch_spread_hz,
                envelope,
            }
        })
        .collect()
}

pub fn emotion_styles(params: &SynthParams, n: usize, seed: u64) -> Vec<EmotionStyle> {
    let mut rng = rng_for(seed, &[2]);
    let pitch = stratified(n, &mut rng);
    let gain = stratified(n, &mut rng);
    let silence = stratified(n, &mut rng);
    let modulation = stratified(n, &mut rng);
    (0..n)
        .map(|i| {
            let phase = rng.random_range(0.0..2.0 * PI);
            let cycles = rng.random_range(0.5..1.5);
            let tilt = (0..params.n_bins)
                .map(|k| {
                    let x = k as f64 / params.n_bins as f64;
                    params.emotion_tilt_spread * (2.0 * PI * cycles * x + phase).cos()
                })
                .collect();
            EmotionStyle {
                pitch_scale: 1.0 + params.emotion_pitch_spread * pitch[i],
                pitch_mod_scale: 1.0 + 0.8 * modulation[i],
                gain: params.emotion_gain_spread * gain[i],
                tilt,
                silence_ratio: params.silence_ratio_center + params.silence_ratio_spread * silence[i],
            }
        })
        .collect()
}

pub fn symbol_styles(params: &SynthParams, seed: u64) -> Vec<SymbolStyle> {
    let mut rng = rng_for(seed, &[3]);
    (0..params.num_symbols)
        .map(|_| {
            let mut pattern = vec![0.0; params.n_bins];
            for _ in 0..2 {
                let center = rng.random_range(0.0..params.n_bins as f64);
                let width = rng.random_range(1.5..4.0);
                let amp = params.content_amplitude * rng.random_range(0.6..1.0) * if rng.random() { 1.0 } else { -1.0 };
                for (p, b) in pattern.iter_mut().zip(gaussian_bump(params.n_bins, center, width)) {
                    *p += amp * b;
                }
            }
            SymbolStyle {
                pattern,
                intonation: rng.random_range(-0.06..0.06),
            }
        })
        .collect()
}

pub fn content_plan<R: Rng>(params: &SynthParams, rng: &mut R) -> ContentPlan {
    let (lo, hi) = params.symbols_per_utterance;
    let n = rng.random_range(lo..=hi);
    let symbols = (0..n).map(|_| rng.random_range(0..params.num_symbols) as u8).collect();
    let (dlo, dhi) = params.segment_frames;
    let durations = (0..n).map(|_| rng.random_range(dlo..=dhi)).collect();
    ContentPlan { symbols, durations }
}

/// Render one utterance. `rng` drives silent gaps, modulation phases and noise.
pub fn render<R: Rng>(
    params: &SynthParams,
    speaker: &SpeakerStyle,
    emotion: &EmotionStyle,
    symbols: &[SymbolStyle],
    plan: &ContentPlan,
    rng: &mut R,
) -> Rendered {
    let nb = params.n_bins;
    let mut frame_symbols = Vec::new();
    for (i, (&sym, &dur)) in plan.symbols.iter().zip(&plan.durations).enumerate() {
        frame_symbols.extend(std::iter::repeat_n(sym, dur));
        if i + 1 < plan.symbols.len() && rng.random_bool(emotion.silence_ratio) {
            let (glo, ghi) = params.gap_frames;
            let gap = rng.random_range(glo..=ghi);
            frame_symbols.extend(std::iter::repeat_n(SILENCE, gap));
        }
    }
    let n_frames = frame_symbols.len();
    let pitch_phase = rng.random_range(0.0..2.0 * PI);
    let energy_phase = rng.random_range(0.0..2.0 * PI);
    let mut values = vec![0.0; nb * n_frames];
    let mut f0_contour = vec![0.0; n_frames];
    for (t, &sym) in frame_symbols.iter().enumerate() {
        if sym == SILENCE {
            for k in 0..nb {
                let z: f64 = StandardNormal.sample(rng);
                values[k * n_frames + t] = params.floor_level + params.noise_std * z;
            }
            continue;
        }
        let style = &symbols[sym as usize];
        let wobble =
            params.pitch_mod_depth * emotion.pitch_mod_scale * (2.0 * PI * t as f64 / 23.0 + pitch_phase).sin();
        let f0 = speaker.mean_pitch_hz * emotion.pitch_scale * (1.0 + style.intonation + wobble);
        f0_contour[t] = f0 / PITCH_REFERENCE_HZ;
        let energy = emotion.gain + 0.3 * (2.0 * PI * t as f64 / 17.0 + energy_phase).sin();
        let spacing = f0 / params.bin_hz;
        for k in 0..nb {
            let mut harm = 0.0;
            let mut h = 1;
            while (h as f64 - 1.0) * spacing < nb as f64 + 3.0 {
                let d = k as f64 - h as f64 * spacing;
                harm += 0.88f64.powi(h - 1) * (-d * d / (2.0 * 0.8 * 0.8)).exp();
                h += 1;
            }
            let z: f64 = StandardNormal.sample(rng);
            values[k * n_frames + t] = speaker.envelope[k]
                + emotion.tilt[k]
                + style.pattern[k]
                + params.harmonic_amplitude * harm
                + energy
                + params.noise_std * z;
        }
    }
    Rendered {
        values,
        n_frames,
        frame_symbols,
        f0_contour,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emotion_changes_pitch_but_not_content() {
        let p = SynthParams::default();
        let spk = speaker_styles(&p, 2, 7);
        let emo = emotion_styles(&p, 3, 7);
        let sym = symbol_styles(&p, 7);
        let plan = content_plan(&p, &mut rng_for(7, &[10]));
        let a = render(&p, &spk[0], &emo[0], &sym, &plan, &mut rng_for(7, &[11]));
        let b = render(&p, &spk[0], &emo[1], &sym, &plan, &mut rng_for(7, &[11]));
        let content = |r: &Rendered| {
            r.frame_symbols
                .iter()
                .copied()
                .filter(|s| *s != SILENCE)
                .collect::<Vec<_>>()
        };
        assert_eq!(content(&a), content(&b));
        let voiced_mean = |r: &Rendered| {
            let v: Vec<f64> = r.f0_contour.iter().copied().filter(|f| *f > 0.0).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((voiced_mean(&a) - voiced_mean(&b)).abs() > 0.02);
    }

    #[test]
    fn silent_frames_have_zero_pitch() {
        let p = SynthParams::default();
        let spk = speaker_styles(&p, 1, 3);
        let emo = emotion_styles(&p, 1, 3);
        let sym = symbol_styles(&p, 3);
        let plan = content_plan(&p, &mut rng_for(3, &[1]));
        let r = render(&p, &spk[0], &emo[0], &sym, &plan, &mut rng_for(3, &[2]));
        for (s, f) in r.frame_symbols.iter().zip(&r.f0_contour) {
            assert_eq!(*s == SILENCE, *f == 0.0);
        }
        assert_eq!(r.values.len(), p.n_bins * r.n_frames);
    }

    #[test]
    fn zero_spread_is_rejected() {
        let p = SynthParams {
            emotion_tilt_spread: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(SynthParams::default().validate().is_ok());
    }

    #[test]
    fn stratified_factors_are_distinct() {
        let p = SynthParams::default();
        let emo = emotion_styles(&p, 6, 1);
        for i in 0..6 {
            for j in 0..i {
                assert!((emo[i].pitch_scale - emo[j].pitch_scale).abs() > 1e-6);
            }
        }
    }
}
