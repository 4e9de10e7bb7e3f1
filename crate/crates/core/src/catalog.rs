//! Speaker/emotion domains, seen-pair bookkeeping, virtual domain pairing
//! and fake-pair masking.
//!
//! A *pair* is one (speaker, emotion) combination. Pairs with real
//! recordings in the corpus are *seen*; the remainder of the full product
//! are *unseen*. Training targets are drawn over the full product, so
//! converted samples may land on unseen pairs; the discriminator must never
//! be trained on those, which is what [`PairMask`] records.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeSet, HashSet};
use std::path::Path;

/// A (speaker, emotion) domain code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainPair {
    pub speaker: usize,
    pub emotion: usize,
}

impl DomainPair {
    pub const fn new(speaker: usize, emotion: usize) -> Self {
        Self { speaker, emotion }
    }
}

/// Immutable enumeration of speakers, emotions and seen pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainCatalog {
    speakers: Vec<String>,
    emotions: Vec<String>,
    seen: BTreeSet<DomainPair>,
}

fn check_unique(kind: &str, ids: &[String]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::InvalidCatalog(format!("no {kind}s given")));
    }
    let mut set = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::InvalidCatalog(format!("empty {kind} identifier")));
        }
        if !set.insert(id.as_str()) {
            return Err(Error::InvalidCatalog(format!("duplicate {kind} identifier `{id}`")));
        }
    }
    Ok(())
}

impl DomainCatalog {
    /// Build a catalog, rejecting duplicate identifiers, out-of-range pairs
    /// and speakers without any seen pair.
    pub fn new(
        speakers: Vec<String>,
        emotions: Vec<String>,
        seen: impl IntoIterator<Item = DomainPair>,
    ) -> Result<Self> {
        check_unique("speaker", &speakers)?;
        check_unique("emotion", &emotions)?;
        let seen: BTreeSet<DomainPair> = seen.into_iter().collect();
        for p in &seen {
            if p.speaker >= speakers.len() || p.emotion >= emotions.len() {
                return Err(Error::InvalidCatalog(format!(
                    "seen pair ({}, {}) outside {}x{} catalog",
                    p.speaker,
                    p.emotion,
                    speakers.len(),
                    emotions.len()
                )));
            }
        }
        for (s, name) in speakers.iter().enumerate() {
            if !seen.iter().any(|p| p.speaker == s) {
                return Err(Error::InvalidCatalog(format!("speaker `{name}` has no seen pair")));
            }
        }
        Ok(Self {
            speakers,
            emotions,
            seen,
        })
    }

    /// Catalog where every listed speaker has all emotions except the
    /// `neutral_only` speakers, which have only `neutral`.
    pub fn with_neutral_only(
        speakers: Vec<String>,
        emotions: Vec<String>,
        neutral: &str,
        neutral_only: &[String],
    ) -> Result<Self> {
        let n = emotions
            .iter()
            .position(|e| e == neutral)
            .ok_or_else(|| Error::InvalidCatalog(format!("neutral emotion `{neutral}` not in emotion list")))?;
        for id in neutral_only {
            if !speakers.contains(id) {
                return Err(Error::InvalidCatalog(format!(
                    "neutral-only speaker `{id}` not in speaker list"
                )));
            }
        }
        let mut seen = Vec::new();
        for (s, name) in speakers.iter().enumerate() {
            if neutral_only.contains(name) {
                seen.push(DomainPair::new(s, n));
            } else {
                seen.extend((0..emotions.len()).map(|e| DomainPair::new(s, e)));
            }
        }
        Self::new(speakers, emotions, seen)
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn emotions(&self) -> &[String] {
        &self.emotions
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn num_emotions(&self) -> usize {
        self.emotions.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.speakers.len() * self.emotions.len()
    }

    pub fn seen_pairs(&self) -> impl Iterator<Item = DomainPair> + '_ {
        self.seen.iter().copied()
    }

    pub fn num_seen(&self) -> usize {
        self.seen.len()
    }

    /// Full product minus the seen pairs, in (speaker, emotion) order.
    pub fn unseen_pairs(&self) -> Vec<DomainPair> {
        self.all_pairs().filter(|p| !self.seen.contains(p)).collect()
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = DomainPair> + '_ {
        let ne = self.emotions.len();
        (0..self.num_pairs()).map(move |i| DomainPair::new(i / ne, i % ne))
    }

    pub fn speaker_index(&self, id: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownIdentifier {
                kind: "speaker",
                id: id.to_string(),
                valid: self.speakers.join(", "),
            })
    }

    pub fn emotion_index(&self, id: &str) -> Result<usize> {
        self.emotions
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownIdentifier {
                kind: "emotion",
                id: id.to_string(),
                valid: self.emotions.join(", "),
            })
    }

    pub fn check_pair(&self, pair: DomainPair) -> Result<()> {
        if pair.speaker >= self.speakers.len() || pair.emotion >= self.emotions.len() {
            return Err(Error::PairOutOfRange {
                speaker: pair.speaker,
                emotion: pair.emotion,
                speakers: self.speakers.len(),
                emotions: self.emotions.len(),
            });
        }
        Ok(())
    }

    pub fn is_seen(&self, pair: DomainPair) -> Result<bool> {
        self.check_pair(pair)?;
        Ok(self.seen.contains(&pair))
    }

    /// Discriminator head index: `speaker * |emotions| + emotion`.
    pub fn flat_index(&self, pair: DomainPair) -> usize {
        pair.speaker * self.emotions.len() + pair.emotion
    }

    /// Emotions with real data for `speaker`.
    pub fn seen_emotions_of(&self, speaker: usize) -> Vec<usize> {
        self.seen
            .iter()
            .filter(|p| p.speaker == speaker)
            .map(|p| p.emotion)
            .collect()
    }

    /// Speakers with real data for `emotion`.
    pub fn speakers_with_emotion(&self, emotion: usize) -> Vec<usize> {
        self.seen
            .iter()
            .filter(|p| p.emotion == emotion)
            .map(|p| p.speaker)
            .collect()
    }

    /// Speakers that do not have every emotion.
    pub fn partial_speakers(&self) -> Vec<usize> {
        (0..self.speakers.len())
            .filter(|&s| self.seen_emotions_of(s).len() < self.emotions.len())
            .collect()
    }

    /// SHA-256 over a canonical rendering; stored in checkpoints.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.speakers {
            h.update(b"s:");
            h.update(s.as_bytes());
            h.update([0]);
        }
        for e in &self.emotions {
            h.update(b"e:");
            h.update(e.as_bytes());
            h.update([0]);
        }
        for p in &self.seen {
            h.update((p.speaker as u64).to_le_bytes());
            h.update((p.emotion as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_file(&self) -> CatalogFile {
        CatalogFile {
            speakers: self.speakers.clone(),
            emotions: self.emotions.clone(),
            seen: self
                .seen
                .iter()
                .map(|p| [self.speakers[p.speaker].clone(), self.emotions[p.emotion].clone()])
                .collect(),
        }
    }

    pub fn from_file(file: CatalogFile) -> Result<Self> {
        let mut seen = Vec::with_capacity(file.seen.len());
        let speakers = file.speakers;
        let emotions = file.emotions;
        for [s, e] in &file.seen {
            let si = speakers
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| Error::InvalidCatalog(format!("seen pair names unknown speaker `{s}`")))?;
            let ei = emotions
                .iter()
                .position(|x| x == e)
                .ok_or_else(|| Error::InvalidCatalog(format!("seen pair names unknown emotion `{e}`")))?;
            seen.push(DomainPair::new(si, ei));
        }
        Self::new(speakers, emotions, seen)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("catalog serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| Error::Parse(format!("catalog: {e}")))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// On-disk catalog: identifiers by name, seen pairs as `[speaker, emotion]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFile {
    pub speakers: Vec<String>,
    pub emotions: Vec<String>,
    pub seen: Vec<[String; 2]>,
}

/// Sample a virtual target pair: speaker and emotion drawn independently
/// and uniformly, so the result may be unseen.
pub fn sample_vdp_target<R: Rng + ?Sized>(catalog: &DomainCatalog, rng: &mut R) -> DomainPair {
    let speaker = rng.random_range(0..catalog.num_speakers());
    let emotion = rng.random_range(0..catalog.num_emotions());
    DomainPair::new(speaker, emotion)
}

/// Sample a target uniformly among seen pairs (virtual pairing disabled).
pub fn sample_seen_target<R: Rng + ?Sized>(catalog: &DomainCatalog, rng: &mut R) -> DomainPair {
    let i = rng.random_range(0..catalog.num_seen());
    catalog.seen.iter().nth(i).copied().expect("index within seen set")
}

/// Per-sample keep flags for real/fake discriminator training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairMask {
    kept: Vec<bool>,
}

impl PairMask {
    pub fn all_kept(n: usize) -> Self {
        Self { kept: vec![true; n] }
    }

    pub fn from_flags(kept: Vec<bool>) -> Self {
        Self { kept }
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }

    /// Indices of kept samples, ascending.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.kept
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Fake-pair mask: keep sample `i` iff its target pair is seen.
pub fn fpm_mask(catalog: &DomainCatalog, targets: &[DomainPair]) -> Result<PairMask> {
    let kept = targets
        .iter()
        .map(|p| catalog.is_seen(*p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairMask { kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    /// 9 speakers x 6 emotions, speakers 7 and 8 neutral-only (emotion 0).
    pub(crate) fn nine_by_six() -> DomainCatalog {
        let speakers = names("spk", 9);
        let emotions: Vec<String> = ["neutral", "happy", "sad", "fear", "surprise", "angry"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        DomainCatalog::with_neutral_only(speakers, emotions, "neutral", &["spk7".into(), "spk8".into()]).unwrap()
    }

    #[test]
    fn nine_by_six_counts_match_enumeration() {
        let c = nine_by_six();
        let mut seen = 0;
        let mut unseen = 0;
        for s in 0..9 {
            for e in 0..6 {
                if s < 7 || e == 0 {
                    seen += 1;
                } else {
                    unseen += 1;
                }
            }
        }
        assert_eq!((seen, unseen), (44, 10));
        assert_eq!(c.num_seen(), 44);
        assert_eq!(c.unseen_pairs().len(), 10);
        assert!(!c.is_seen(DomainPair::new(7, 1)).unwrap());
        assert!(c.is_seen(DomainPair::new(3, 2)).unwrap());
    }

    #[test]
    fn degenerate_and_two_by_two() {
        let c = DomainCatalog::new(names("s", 1), names("e", 1), [DomainPair::new(0, 0)]).unwrap();
        assert!(c.unseen_pairs().is_empty());
        assert!(c.is_seen(DomainPair::new(0, 0)).unwrap());

        let c = DomainCatalog::new(
            names("s", 2),
            names("e", 2),
            [DomainPair::new(0, 0), DomainPair::new(0, 1), DomainPair::new(1, 0)],
        )
        .unwrap();
        assert_eq!(c.unseen_pairs(), vec![DomainPair::new(1, 1)]);
    }

    #[test]
    fn is_seen_single_pair() {
        let c = DomainCatalog::new(names("s", 1), names("e", 2), [DomainPair::new(0, 0)]).unwrap();
        assert!(c.is_seen(DomainPair::new(0, 0)).unwrap());
        assert!(!c.is_seen(DomainPair::new(0, 1)).unwrap());
        assert!(matches!(
            c.is_seen(DomainPair::new(1, 0)),
            Err(Error::PairOutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_invalid_catalogs() {
        let err = DomainCatalog::new(names("s", 2), names("e", 1), [DomainPair::new(0, 0)]).unwrap_err();
        assert!(err.to_string().contains("s1"), "{err}");
        let err = DomainCatalog::new(vec!["a".into(), "a".into()], names("e", 1), [DomainPair::new(0, 0)]);
        assert!(err.is_err());
        let err = DomainCatalog::new(names("s", 1), vec!["x".into(), "x".into()], [DomainPair::new(0, 0)]);
        assert!(err.is_err());
        let err = DomainCatalog::new(names("s", 1), names("e", 1), [DomainPair::new(0, 3)]);
        assert!(err.is_err());
        assert!(DomainCatalog::new(vec![], names("e", 1), []).is_err());
    }

    #[test]
    fn fpm_examples() {
        let c = nine_by_six();
        let all_seen = [DomainPair::new(0, 0), DomainPair::new(6, 5)];
        assert_eq!(fpm_mask(&c, &all_seen).unwrap().kept(), &[true, true]);
        let all_unseen = [DomainPair::new(7, 1), DomainPair::new(8, 5)];
        assert_eq!(fpm_mask(&c, &all_unseen).unwrap().kept(), &[false, false]);
        let mixed = [DomainPair::new(2, 2), DomainPair::new(8, 1)];
        assert_eq!(fpm_mask(&c, &mixed).unwrap().kept(), &[true, false]);
    }

    #[test]
    fn single_pair_sampler_is_constant() {
        let c = DomainCatalog::new(names("s", 1), names("e", 1), [DomainPair::new(0, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_vdp_target(&c, &mut rng), DomainPair::new(0, 0));
            assert_eq!(sample_seen_target(&c, &mut rng), DomainPair::new(0, 0));
        }
    }

    #[test]
    fn vdp_frequencies_and_independence() {
        let c = nine_by_six();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 54_000;
        let mut counts = [[0usize; 6]; 9];
        for _ in 0..n {
            let p = sample_vdp_target(&c, &mut rng);
            counts[p.speaker][p.emotion] += 1;
        }
        let mut unseen = 0;
        let spk: Vec<f64> = counts
            .iter()
            .map(|r| r.iter().sum::<usize>() as f64 / n as f64)
            .collect();
        let emo: Vec<f64> = (0..6)
            .map(|e| counts.iter().map(|r| r[e]).sum::<usize>() as f64 / n as f64)
            .collect();
        for s in 0..9 {
            for e in 0..6 {
                let f = counts[s][e] as f64 / n as f64;
                assert!((f - 1.0 / 54.0).abs() <= 0.01);
                assert!((f - spk[s] * emo[e]).abs() <= 0.01);
                if !c.is_seen(DomainPair::new(s, e)).unwrap() {
                    unseen += counts[s][e];
                }
            }
        }
        assert!((unseen as f64 / n as f64 - 10.0 / 54.0).abs() <= 0.01);
    }

    #[test]
    fn vdp_marginals_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let c = nine_by_six();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let mut spk = [0f64; 9];
        let mut emo = [0f64; 6];
        for _ in 0..n {
            let p = sample_vdp_target(&c, &mut rng);
            spk[p.speaker] += 1.0;
            emo[p.emotion] += 1.0;
        }
        for counts in [&spk[..], &emo[..]] {
            let k = counts.len() as f64;
            let expected = n as f64 / k;
            let stat: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
            let crit = ChiSquared::new(k - 1.0).unwrap().inverse_cdf(0.99);
            assert!(stat < crit, "chi-square {stat} >= {crit}");
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let c = nine_by_six();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_vdp_target(&c, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = nine_by_six();
        let back = DomainCatalog::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash_hex(), c.hash_hex());
        let other = DomainCatalog::new(names("s", 1), names("e", 1), [DomainPair::new(0, 0)]).unwrap();
        assert_ne!(other.hash_hex(), c.hash_hex());
        assert!(DomainCatalog::from_toml(
            "speakers = [\"a\"]\nemotions = [\"n\"]\nseen = [[\"a\", \"n\"]]\nextra = 1\n"
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn mask_equals_membership(
            ns in 1usize..5,
            ne in 1usize..5,
            bits in proptest::collection::vec(any::<bool>(), 25),
            batch in proptest::collection::vec((0usize..5, 0usize..5), 0..12),
        ) {
            let mut seen: Vec<DomainPair> = (0..ns * ne)
                .filter(|i| bits[*i])
                .map(|i| DomainPair::new(i / ne, i % ne))
                .collect();
            // every speaker needs at least one seen pair
            for s in 0..ns {
                if !seen.iter().any(|p| p.speaker == s) {
                    seen.push(DomainPair::new(s, 0));
                }
            }
            let c = DomainCatalog::new(names("s", ns), names("e", ne), seen).unwrap();
            let targets: Vec<DomainPair> = batch.iter().map(|(s, e)| DomainPair::new(s % ns, e % ne)).collect();
            let mask = fpm_mask(&c, &targets).unwrap();
            for (k, p) in mask.kept().iter().zip(&targets) {
                prop_assert_eq!(*k, c.is_seen(*p).unwrap());
            }
        }
    }
}
