use super::*;
use crate::corpus::tests::small_catalog;
use crate::corpus::{generate_corpus, split_corpus, SynthParams};
use crate::trainer::{TrainState, TrainingConfig};
use std::sync::OnceLock;

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = generate_corpus(&small_catalog(), 20, &SynthParams::default(), 5).unwrap();
        split_corpus(&mut c, 0.9, 5).unwrap();
        c
    })
}

fn probes() -> &'static Probes {
    static P: OnceLock<Probes> = OnceLock::new();
    P.get_or_init(|| Probes::train(corpus(), &ProbeConfig::default(), 3).unwrap())
}

fn real_as_converted(c: &Corpus, split: Split) -> Vec<Converted> {
    c.indices(split)
        .into_iter()
        .map(|i| {
            let u = &c.utterances()[i];
            Converted {
                source_id: u.id.clone(),
                source: u.pair(),
                target: u.pair(),
                features: u.features().clone(),
            }
        })
        .collect()
}

#[test]
fn probes_pass_the_accuracy_gate() {
    let p = probes();
    assert!(p.emotion_accuracy >= 0.95, "{}", p.emotion_accuracy);
    assert!(p.speaker_accuracy >= 0.95, "{}", p.speaker_accuracy);
    p.check_gate().unwrap();
    let x = corpus().utterances()[0].features();
    assert_eq!(p.emotion.logits(x).len(), 3);
    assert_eq!(p.speaker.logits(x).len(), 3);
}

#[test]
fn gate_failure_names_the_probe() {
    let mut p = probes().clone();
    p.emotion_accuracy = 0.5;
    let msg = p.check_gate().unwrap_err().to_string();
    assert!(msg.contains("emotion probe"), "{msg}");
    assert!(!msg.contains("speaker probe"), "{msg}");
}

#[test]
fn relabeled_real_samples_reproduce_probe_accuracy() {
    let set = real_as_converted(corpus(), Split::Test);
    let cells = emotion_accuracy(&probes().emotion, &set);
    let (c, n) = cells.values().fold((0, 0), |(c, n), v| (c + v.0, n + v.1));
    assert_eq!(c as f64 / n as f64, probes().emotion_accuracy);
}

#[test]
fn unconverted_neutral_sources_score_near_zero() {
    let c = corpus();
    let set: Vec<Converted> = real_as_converted(c, Split::Test)
        .into_iter()
        .filter(|s| s.source.emotion == 0)
        .flat_map(|s| {
            (1..3).map(move |e| Converted {
                target: DomainPair::new(s.source.speaker, e),
                ..s.clone()
            })
        })
        .collect();
    let cells = emotion_accuracy(&probes().emotion, &set);
    let (hit, n) = cells.values().fold((0, 0), |(c, n), v| (c + v.0, n + v.1));
    assert!(n > 0);
    assert!((hit as f64 / n as f64) <= 0.05, "{hit}/{n}");
}

#[test]
fn similarity_of_unit_embeddings() {
    assert!((similarity(&[3.0, 4.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
    assert_eq!(similarity(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    assert!((similarity(&[1.0, 0.0], &[-5.0, 0.0]) + 1.0).abs() < 1e-15);
    let u = &corpus().utterances()[0];
    let e = probes().speaker.embed(u.features());
    assert!((mean_similarity(&e, &[e.clone()]) - 1.0).abs() < 1e-12);
}

#[test]
fn reference_identical_sample_has_unit_similarity() {
    let c = corpus();
    let sp = &probes().speaker;
    let u = &c.utterances()[c.indices(Split::Test)[0]];
    let refs = vec![vec![sp.embed(u.features())]; 3];
    let set = vec![Converted {
        source_id: u.id.clone(),
        source: u.pair(),
        target: u.pair(),
        features: u.features().clone(),
    }];
    let s = speaker_similarity(sp, &set, &refs).unwrap();
    assert!((s[0][u.speaker] - 1.0).abs() < 1e-12);
    let missing = vec![Vec::new(); 3];
    assert!(speaker_similarity(sp, &set, &missing).is_err());
}

#[test]
fn sweep_targets_only_add_own_unseen_pairs() {
    let cat = small_catalog();
    let t = sweep_targets(&cat, DomainPair::new(2, 0));
    assert_eq!(t.len(), 9);
    let t = sweep_targets(&cat, DomainPair::new(0, 1));
    assert_eq!(t.len(), 7);
    assert!(t.iter().all(|p| cat.is_seen(*p).unwrap()));
}

#[test]
fn evaluation_is_repeatable_and_reports_every_cell() {
    let c = corpus();
    let mut cfg = TrainingConfig::smoke();
    cfg.arch.gen_blocks = 1;
    let state = TrainState::new(cfg, c).unwrap();
    let conv = Converter::from_state(&state);
    let p = probes();
    let (he, hs) = (p.emotion.hash(), p.speaker.hash());
    let a = evaluate("full", &conv, p, c, 1).unwrap();
    let b = evaluate("full", &conv, p, c, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!((p.emotion.hash(), p.speaker.hash()), (he, hs));
    assert_eq!(a.cells.len(), 9);
    assert_eq!(a.cells.iter().filter(|c| !c.seen).count(), 2);
    let n_test = c.indices(Split::Test).len();
    assert_eq!(a.samples, a.cells.iter().map(|c| c.samples).sum::<usize>());
    assert!(a.samples > 7 * n_test - 7 && a.samples <= 9 * n_test);
    for cell in &a.cells {
        assert!((0.0..=1.0).contains(&cell.emotion_accuracy));
        assert!((-1.0..=1.0).contains(&cell.speaker_similarity));
        assert!(cell.samples > 0);
    }
    assert_eq!(a.to_csv().lines().count(), 10);
    assert!(a.to_table().contains("unseen-pair accuracy"));

    let rows: Vec<AblationRow> = ["full", "no-vdp"]
        .iter()
        .map(|n| AblationRow {
            name: n.to_string(),
            report: a.clone(),
        })
        .collect();
    let table = ablation_table(&rows);
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(2).unwrap().contains("+0.0000"));
    assert_eq!(ablation_csv(&rows).lines().count(), 3);
}

#[test]
fn probes_and_conversions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = probes();
    let path = dir.path().join("probes.ckpt");
    p.save(&path).unwrap();
    let back = Probes::load(&path).unwrap();
    assert_eq!(back.emotion.hash(), p.emotion.hash());
    assert_eq!(back.speaker.hash(), p.speaker.hash());
    assert_eq!(back.emotion_accuracy, p.emotion_accuracy);
    back.check_catalog(corpus().catalog()).unwrap();

    let set = real_as_converted(corpus(), Split::Test);
    let conv_dir = dir.path().join("converted");
    save_conversions(&conv_dir, &set[..4]).unwrap();
    let loaded = load_conversions(&conv_dir).unwrap();
    assert_eq!(loaded.len(), 4);
    for (a, b) in loaded.iter().zip(&set) {
        assert_eq!((a.source, a.target, &a.source_id), (b.source, b.target, &b.source_id));
        for (x, y) in a.features.data().iter().zip(b.features.data()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}

#[test]
fn directional_check_reads_the_cross_matrix() {
    let mut r = EvalReport {
        label: "x".into(),
        speakers: vec!["a".into(), "b".into()],
        cells: vec![],
        samples: 0,
        emotion_accuracy: 0.0,
        unseen_samples: 0,
        unseen_emotion_accuracy: None,
        speaker_similarity: 0.0,
        cross_similarity: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        cross_samples: vec![1, 1],
    };
    assert!(r.speaker_directional());
    r.cross_similarity[1] = vec![0.8, 0.8];
    assert!(!r.speaker_directional());
    r.cross_samples[1] = 0;
    assert!(r.speaker_directional());
}
