use super::*;
use crate::catalog::DomainCatalog;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// 3 speakers x 3 emotions, `spk2` neutral-only.
pub(crate) fn small_catalog() -> DomainCatalog {
    DomainCatalog::with_neutral_only(
        ids("spk", 3),
        vec!["neutral".into(), "happy".into(), "sad".into()],
        "neutral",
        &["spk2".into()],
    )
    .unwrap()
}

#[test]
fn cell_enumeration_gives_140_utterances() {
    let c = generate_corpus(&small_catalog(), 20, &SynthParams::default(), 1).unwrap();
    assert_eq!(c.utterances().len(), 7 * 20);
    for u in c.utterances() {
        assert!(c.catalog().is_seen(u.pair()).unwrap());
        assert_eq!(u.f0_contour.len(), u.features().n_frames());
        assert_eq!(u.frame_symbols.len(), u.features().n_frames());
        assert!(u.features().n_frames() >= MIN_FRAMES);
    }
}

#[test]
fn generation_is_deterministic_to_the_byte() {
    let a = generate_corpus(&small_catalog(), 3, &SynthParams::default(), 9).unwrap();
    let b = generate_corpus(&small_catalog(), 3, &SynthParams::default(), 9).unwrap();
    let c = generate_corpus(&small_catalog(), 3, &SynthParams::default(), 10).unwrap();
    for (x, y) in a.utterances().iter().zip(b.utterances()) {
        assert_eq!(
            store::encode_features(x.features()),
            store::encode_features(y.features())
        );
    }
    assert_ne!(a.utterances()[0].features(), c.utterances()[0].features());
}

#[test]
fn normalization_statistics_hold() {
    let c = generate_corpus(&small_catalog(), 10, &SynthParams::default(), 2).unwrap();
    let (mean, std) = c.feature_stats();
    assert!(mean.abs() <= 0.01, "mean {mean}");
    assert!((std - 1.0).abs() <= 0.02, "std {std}");
}

#[test]
fn rejects_bad_inputs() {
    assert!(generate_corpus(&small_catalog(), 1, &SynthParams::default(), 0).is_err());
    let flat = SynthParams {
        envelope_spread: 0.0,
        ..Default::default()
    };
    assert!(generate_corpus(&small_catalog(), 4, &flat, 0).is_err());
}

#[test]
fn split_is_stratified_and_seeded() {
    let mut c = generate_corpus(&small_catalog(), 20, &SynthParams::default(), 1).unwrap();
    split_corpus(&mut c, 0.9, 5).unwrap();
    assert_eq!(c.indices(Split::Train).len(), 126);
    assert_eq!(c.indices(Split::Test).len(), 14);
    for (_, v) in c.cells(Split::Test) {
        assert_eq!(v.len(), 2);
    }
    let first: Vec<Split> = c.utterances().iter().map(|u| u.split).collect();
    split_corpus(&mut c, 0.9, 5).unwrap();
    let again: Vec<Split> = c.utterances().iter().map(|u| u.split).collect();
    assert_eq!(first, again);
    split_corpus(&mut c, 0.9, 6).unwrap();
    let other: Vec<Split> = c.utterances().iter().map(|u| u.split).collect();
    assert_ne!(first, other);
    assert!(split_corpus(&mut c, 1.0, 5).is_err());
}

#[test]
fn half_split_of_two_utterance_cell() {
    let mut c = generate_corpus(&small_catalog(), 2, &SynthParams::default(), 1).unwrap();
    split_corpus(&mut c, 0.5, 0).unwrap();
    for v in c.cells(Split::Train).values() {
        assert_eq!(v.len(), 1);
    }
    for v in c.cells(Split::Test).values() {
        assert_eq!(v.len(), 1);
    }
}

#[test]
fn split_rejects_singleton_cell() {
    let mut c = generate_corpus(&small_catalog(), 2, &SynthParams::default(), 1).unwrap();
    c.manifest.utterances.remove(0);
    assert!(split_corpus(&mut c, 0.9, 0).is_err());
}

#[test]
fn batch_shapes_and_reference_resolution() {
    let mut c = generate_corpus(&small_catalog(), 8, &SynthParams::default(), 4).unwrap();
    split_corpus(&mut c, 0.75, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut unseen_checked = 0;
    for _ in 0..20 {
        let b = make_batch(&c, 10, TargetPolicy::Virtual, 32, &mut rng).unwrap();
        assert_eq!(b.len(), 10);
        for t in [&b.source, &b.ref_sp, &b.ref_sp2, &b.ref_em, &b.ref_em2] {
            assert_eq!(t.shape(), &[10, 48, 32]);
        }
        for i in 0..10 {
            let target = b.target_pairs[i];
            let em = &c.utterances()[b.ref_em_index[i]];
            let sp = &c.utterances()[b.ref_sp_index[i]];
            assert_eq!(sp.speaker, target.speaker);
            assert_eq!(em.emotion, target.emotion);
            assert_eq!(c.utterances()[b.source_index[i]].split, Split::Train);
            if !c.catalog().is_seen(target).unwrap() {
                assert_ne!(em.speaker, target.speaker);
                unseen_checked += 1;
            }
        }
    }
    assert!(unseen_checked > 0);
}

#[test]
fn seen_only_policy_never_targets_unseen() {
    let mut c = generate_corpus(&small_catalog(), 4, &SynthParams::default(), 4).unwrap();
    split_corpus(&mut c, 0.5, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let b = make_batch(&c, 4, TargetPolicy::SeenOnly, 16, &mut rng).unwrap();
        assert!(b.target_pairs.iter().all(|p| c.catalog().is_seen(*p).unwrap()));
    }
}

#[test]
fn single_pair_catalog_targets_that_pair() {
    let cat = DomainCatalog::new(ids("s", 1), ids("e", 1), [crate::catalog::DomainPair::new(0, 0)]).unwrap();
    let mut c = generate_corpus(&cat, 4, &SynthParams::default(), 4).unwrap();
    split_corpus(&mut c, 0.5, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = make_batch(&c, 6, TargetPolicy::Virtual, 16, &mut rng).unwrap();
    assert!(b
        .target_pairs
        .iter()
        .all(|p| *p == crate::catalog::DomainPair::new(0, 0)));
}

#[test]
fn short_utterances_are_padded_with_silence() {
    let mel = MelSpectrogram::new(2, 8, (0..16).map(|v| v as f64).collect()).unwrap();
    let out = crop_frames(&mel, 6, 4, -9.0);
    assert_eq!(out, vec![6.0, 7.0, -9.0, -9.0, 14.0, 15.0, -9.0, -9.0]);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = generate_corpus(&small_catalog(), 3, &SynthParams::default(), 4).unwrap();
    split_corpus(&mut c, 0.5, 0).unwrap();
    c.save(dir.path()).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    assert_eq!(back.manifest, c.manifest);
    for (a, b) in back.utterances().iter().zip(c.utterances()) {
        assert_eq!(a.features(), b.features());
    }
    let on_disk = std::fs::read(dir.path().join("manifest.json")).unwrap();
    use sha2::Digest;
    let expected: String = sha2::Sha256::digest(&on_disk)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(c.manifest_hash(), expected);
    assert_eq!(back.manifest_hash(), expected);
}

proptest::proptest! {
    #[test]
    fn feature_encoding_round_trips_single_precision(
        bins in 1usize..6,
        frames in MIN_FRAMES..MIN_FRAMES + 6,
        seed in proptest::prelude::any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..bins * frames).map(|_| rng.random_range(-1e3f32..1e3) as f64).collect();
        let mel = MelSpectrogram::new(bins, frames, values).unwrap();
        let bytes = store::encode_features(&mel);
        proptest::prop_assert_eq!(bytes.len(), 16 + 4 * bins * frames);
        let back = store::decode_features(&bytes, std::path::Path::new("mem")).unwrap();
        proptest::prop_assert_eq!(back, mel);
        proptest::prop_assert!(store::decode_features(&bytes[..bytes.len() - 1], std::path::Path::new("mem")).is_err());
    }
}
