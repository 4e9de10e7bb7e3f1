use super::*;
use crate::catalog::PairMask;
use crate::gradcheck::{check_gradients, GradCheckConfig};
use crate::networks::{ArchConfig, ModelSet};
use crate::params::ParamStore;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ArchConfig {
    ArchConfig {
        n_bins: 6,
        style_dim: 4,
        latent_dim: 3,
        gen_channels: 5,
        gen_blocks: 1,
        enc_channels: 5,
        disc_channels: 5,
        mapper_hidden: 5,
        pitch_hidden: 4,
        pitch_dim: 2,
        content_channels: 4,
        num_symbols: 3,
        kernel: 3,
    }
}

fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn anneal_endpoints_and_midpoint() {
    let a = AnnealState::default();
    assert_eq!(anneal_weight(&a, 0.0), 5.0);
    assert_eq!(anneal_weight(&a, 50.0), 5.0);
    assert_eq!(anneal_weight(&a, 100.0), 2.5);
    assert_eq!(anneal_weight(&a, 150.0), 0.0);
    assert_eq!(anneal_weight(&a, 400.0), 0.0);
    assert!(AnnealState {
        start_epoch: 150.0,
        ..a
    }
    .validate()
    .is_err());
}

proptest! {
    #[test]
    fn anneal_is_nonincreasing_and_continuous(e in 0.0f64..300.0, d in 0.0f64..50.0) {
        let a = AnnealState::default();
        prop_assert!(anneal_weight(&a, e + d) <= anneal_weight(&a, e));
        let h = 1e-9;
        prop_assert!((anneal_weight(&a, e + h) - anneal_weight(&a, e)).abs() <= 5.0 * h / 100.0 + 1e-12);
    }
}

#[test]
fn constant_half_discriminator_gives_two_log_two() {
    let mut g = Graph::new();
    let r = g.constant(Tensor::new(vec![1], vec![0.0]));
    let f = g.constant(Tensor::new(vec![1], vec![0.0]));
    let l = adversarial_from_logits(&mut g, Some(r), f, Side::Discriminator);
    close(g.value(l).item(), 2.0 * 2f64.ln(), 1e-15);
}

#[test]
fn hand_computed_real_fake_pair() {
    let mut g = Graph::new();
    let r = g.constant(Tensor::new(vec![1], vec![logit(0.9)]));
    let f = g.constant(Tensor::new(vec![1], vec![logit(0.2)]));
    let l = adversarial_from_logits(&mut g, Some(r), f, Side::Discriminator);
    close(g.value(l).item(), -(0.9f64.ln() + 0.8f64.ln()), 1e-12);
}

fn adv_grads(
    m: &ModelSet,
    real: &Tensor,
    fake: &Tensor,
    src: &[usize],
    trg: &[usize],
    mask: &PairMask,
) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let p = m.discriminator.params.bind(&mut g, true);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let l = adversarial_loss(&mut g, &m.discriminator, &p, r, f, src, trg, mask, Side::Discriminator).unwrap();
    let grads = g.backward(l);
    (g.value(l).item(), m.discriminator.params.collect_grads(&grads, &p))
}

#[test]
fn all_masked_batch_gives_zero_loss_and_gradient() {
    let m = ModelSet::new(&tiny(), 2, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let real = rt(&mut rng, &[3, 6, 10]);
    let fake = rt(&mut rng, &[3, 6, 10]);
    let mask = PairMask::from_flags(vec![false; 3]);
    let (v, grads) = adv_grads(&m, &real, &fake, &[0, 1, 2], &[3, 3, 3], &mask);
    assert_eq!(v, 0.0);
    assert!(grads.iter().all(|t| t.data().iter().all(|x| *x == 0.0)));
}

#[test]
fn mixed_mask_matches_batch_with_unseen_removed() {
    let m = ModelSet::new(&tiny(), 2, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let real = rt(&mut rng, &[4, 6, 10]);
    let fake = rt(&mut rng, &[4, 6, 10]);
    let mask = PairMask::from_flags(vec![true, false, true, false]);
    let (v, grads) = adv_grads(&m, &real, &fake, &[0, 1, 2, 0], &[1, 3, 2, 3], &mask);
    let keep = |t: &Tensor| Tensor::stack(&[t.row(0), t.row(2)]);
    let (v2, grads2) = adv_grads(&m, &keep(&real), &keep(&fake), &[0, 2], &[1, 2], &PairMask::all_kept(2));
    assert_eq!(v.to_bits(), v2.to_bits());
    assert_eq!(grads, grads2);
}

#[test]
fn adversarial_rejects_empty_and_misaligned_batches() {
    let m = ModelSet::new(&tiny(), 2, 2, 0);
    let mut g = Graph::new();
    let p = m.discriminator.params.bind(&mut g, false);
    let e = g.constant(Tensor::zeros(&[0, 6, 10]));
    assert!(adversarial_loss(
        &mut g,
        &m.discriminator,
        &p,
        e,
        e,
        &[],
        &[],
        &PairMask::all_kept(0),
        Side::Generator
    )
    .is_err());
    let x = g.constant(Tensor::zeros(&[2, 6, 10]));
    assert!(adversarial_loss(
        &mut g,
        &m.discriminator,
        &p,
        x,
        x,
        &[0, 0],
        &[0],
        &PairMask::all_kept(2),
        Side::Generator
    )
    .is_err());
}

fn zero_output_layer(store: &mut ParamStore) {
    for name in ["out.w", "out.b"] {
        let i = store.index_of(name).unwrap();
        store.get_mut(i).data_mut().fill(0.0);
    }
}

#[test]
fn uniform_classifier_logits_give_two_log_three() {
    let mut m = ModelSet::new(&tiny(), 3, 3, 0);
    zero_output_layer(&mut m.speaker_classifier.params);
    zero_output_layer(&mut m.emotion_classifier.params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let ps = m.speaker_classifier.params.bind(&mut g, false);
    let pe = m.emotion_classifier.params.bind(&mut g, false);
    let x = g.constant(rt(&mut rng, &[2, 6, 10]));
    let l = source_classifier_loss(
        &mut g,
        &m.speaker_classifier,
        &ps,
        &m.emotion_classifier,
        &pe,
        x,
        &[0, 2],
        &[1, 1],
    )
    .unwrap();
    close(g.value(l).item(), 2.0 * 3f64.ln(), 1e-14);
    assert!(source_classifier_loss(
        &mut g,
        &m.speaker_classifier,
        &ps,
        &m.emotion_classifier,
        &pe,
        x,
        &[0, 3],
        &[1, 1]
    )
    .is_err());
}

#[test]
fn cross_entropy_limits() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]));
    let ce = classifier_cross_entropy(&mut g, l, &[0]).unwrap();
    close(g.value(ce).item(), (1.0 + (-1f64).exp()).ln(), 1e-15);
    let big = g.constant(Tensor::new(vec![1, 3], vec![60.0, 0.0, 0.0]));
    let ce = classifier_cross_entropy(&mut g, big, &[0]).unwrap();
    assert!(g.value(ce).item() < 1e-20);
}

#[test]
fn style_reconstruction_arithmetic() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[1, 16], 0.3));
    let b = g.constant(Tensor::full(&[1, 16], 0.4));
    let zero = style_reconstruction_loss(&mut g, a, a, b, b).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    let one = embedding_l1(&mut g, a, b).unwrap();
    close(g.value(one).item(), 1.6, 1e-12);
    let other = embedding_l1(&mut g, b, a).unwrap();
    assert_eq!(g.value(one).item(), g.value(other).item());
    let both = style_reconstruction_loss(&mut g, a, b, b, a).unwrap();
    close(g.value(both).item(), 3.2, 1e-12);
    let short = g.constant(Tensor::zeros(&[1, 8]));
    assert!(embedding_l1(&mut g, a, short).is_err());
}

/// Generator whose output is `h_em` broadcast across frames.
fn broadcast_em(g: &mut Graph, _h_sp: Var, h_em: Var, frames: usize) -> Var {
    let d = g.value(h_em).dim(1);
    let b = g.value(h_em).dim(0);
    let zeros = g.constant(Tensor::zeros(&[b, d, frames]));
    let gamma = g.constant(Tensor::zeros(&[b, d]));
    g.modulate(zeros, gamma, h_em)
}

#[test]
fn diversification_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let sp = g.constant(rt(&mut rng, &[2, 4]));
    let sp2 = g.constant(rt(&mut rng, &[2, 4]));
    let em = g.constant(rt(&mut rng, &[2, 4]));
    let em2 = g.constant(rt(&mut rng, &[2, 4]));
    let x = g.constant(rt(&mut rng, &[2, 4, 7]));

    let same = style_diversification_loss(&mut g, |g, s, e| broadcast_em(g, s, e, 7), (sp, sp), (em, em)).unwrap();
    assert_eq!(g.value(same).item(), 0.0);

    let ignore = style_diversification_loss(&mut g, |_, _, _| x, (sp, sp2), (em, em2)).unwrap();
    assert_eq!(g.value(ignore).item(), 0.0);

    // Only the emotion-varying terms survive; each equals |h_em - h'_em|_1 / d.
    let lin = style_diversification_loss(&mut g, |g, s, e| broadcast_em(g, s, e, 7), (sp, sp2), (em, em2)).unwrap();
    let e1 = g.value(em).data().to_vec();
    let e2 = g.value(em2).data().to_vec();
    let l1: f64 = e1.iter().zip(&e2).map(|(a, b)| (a - b).abs()).sum();
    let per_term = l1 * 7.0 / (2.0 * 4.0 * 7.0);
    close(g.value(lin).item(), 2.0 * per_term, 1e-12);
}

#[test]
fn f0_consistency_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = rt(&mut rng, &[2, 1, 9]);
    let mut g = Graph::new();
    let a = g.constant(c.clone());
    let b = g.constant(c.map(|v| v + 0.2));
    let zero = f0_consistency_loss(&mut g, a, a).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    let off = f0_consistency_loss(&mut g, a, b).unwrap();
    close(g.value(off).item(), 0.2, 1e-12);
    let short = g.constant(Tensor::zeros(&[2, 1, 8]));
    assert!(f0_consistency_loss(&mut g, a, short).is_err());
}

#[test]
fn f0_consistency_depends_only_on_contours() {
    // Permuting bins leaves the contour of a bin-symmetric extractor unchanged.
    let arch = tiny();
    let mut m = ModelSet::new(&arch, 2, 2, 6);
    let w = m.pitch.params.index_of("conv1.w").unwrap();
    let shape = m.pitch.params.get(w).shape().to_vec();
    let (cout, cin, k) = (shape[0], shape[1], shape[2]);
    let data = m.pitch.params.get_mut(w).data_mut();
    for o in 0..cout {
        for t in 0..k {
            let v = data[(o * cin) * k + t];
            for i in 0..cin {
                data[(o * cin + i) * k + t] = v;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rt(&mut rng, &[1, 6, 10]);
    let y = rt(&mut rng, &[1, 6, 10]);
    let mut y_perm = y.clone();
    for t in 0..10 {
        for b in 0..6 {
            y_perm.data_mut()[b * 10 + t] = y.data()[(5 - b) * 10 + t];
        }
    }
    let value = |gen: &Tensor| {
        let mut g = Graph::new();
        let p = m.pitch.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let yv = g.constant(gen.clone());
        let (_, cx) = m.pitch.forward(&mut g, &p, xv);
        let (_, cy) = m.pitch.forward(&mut g, &p, yv);
        let l = f0_consistency_loss(&mut g, cx, cy).unwrap();
        g.value(l).item()
    };
    close(value(&y), value(&y_perm), 1e-12);
}

#[test]
fn norm_consistency_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rt(&mut rng, &[2, 4, 6]).map(|v| v.abs() + 0.1);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let zero = norm_consistency_loss(&mut g, xv, xv).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    let yv = g.constant(x.map(|v| 2.0 * v));
    let l = norm_consistency_loss(&mut g, xv, yv).unwrap();
    let expected = x.data().iter().sum::<f64>() / 12.0;
    close(g.value(l).item(), expected, 1e-12);
}

#[test]
fn norm_consistency_decomposes_per_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rt(&mut rng, &[1, 4, 5]);
    let y = rt(&mut rng, &[1, 4, 5]);
    let pad = |t: &Tensor| {
        let mut out = Tensor::zeros(&[1, 4, 6]);
        for b in 0..4 {
            for f in 0..5 {
                out.data_mut()[b * 6 + f] = t.data()[b * 5 + f];
            }
        }
        out
    };
    let mut g = Graph::new();
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let (xp, yp) = (g.constant(pad(&x)), g.constant(pad(&y)));
    let a = norm_consistency_loss(&mut g, xv, yv).unwrap();
    let b = norm_consistency_loss(&mut g, xp, yp).unwrap();
    close(g.value(a).item() * 5.0, g.value(b).item() * 6.0, 1e-12);
}

#[test]
fn speech_consistency_cases() {
    let arch = tiny();
    let mut m = ModelSet::new(&arch, 2, 2, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rt(&mut rng, &[1, 6, 10]);
    let y = rt(&mut rng, &[1, 6, 10]);
    {
        let mut g = Graph::new();
        let p = m.content.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let l = speech_consistency_loss(&mut g, &m.content, &p, xv, xv).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[1, 4, 16], 0.3));
    let b = g.constant(Tensor::full(&[1, 4, 16], 0.35));
    let l = mean_l1(&mut g, a, b).unwrap();
    close(g.value(l).item(), 0.05, 1e-12);

    // A probe blind to its input sees no difference between speakers.
    let w = m.content.params.index_of("conv2.w").unwrap();
    m.content.params.get_mut(w).data_mut().fill(0.0);
    let mut g = Graph::new();
    let p = m.content.params.bind(&mut g, false);
    let (xv, yv) = (g.constant(x), g.constant(y));
    let l = speech_consistency_loss(&mut g, &m.content, &p, xv, yv).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}

#[test]
fn cycle_consistency_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rt(&mut rng, &[2, 3, 5]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let zero = cycle_consistency_loss(&mut g, xv, xv).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
    let yv = g.constant(x.map(|v| v - 0.01));
    let l = cycle_consistency_loss(&mut g, xv, yv).unwrap();
    close(g.value(l).item(), 0.01, 1e-12);
    assert!(g.value(l).item() >= 0.0);
}

#[test]
fn objective_linearity_and_annealing() {
    let values: Vec<(Term, f64)> = Term::ALL.iter().map(|&t| (t, 1.7)).collect();
    let zero = Schedule {
        weights: LossWeights::zero(),
        anneal: Some(AnnealState::default()),
    };
    assert_eq!(full_objective(&zero, 10.0, &values, &values).unwrap(), (0.0, 0.0));

    let mut w = LossWeights::zero();
    w.cyc = 3.0;
    let one = Schedule {
        weights: w,
        anneal: None,
    };
    let (gen, _) = full_objective(&one, 0.0, &[(Term::Cyc, 0.4)], &[]).unwrap();
    close(gen, 1.2, 1e-15);

    let mut w = LossWeights::zero();
    w.ds = 2.0;
    let ds = Schedule {
        weights: w,
        anneal: None,
    };
    assert_eq!(full_objective(&ds, 0.0, &[(Term::Ds, 0.5)], &[]).unwrap().0, -1.0);

    let annealed = Schedule {
        weights: LossWeights {
            f0: 5.0,
            ..LossWeights::zero()
        },
        anneal: Some(AnnealState::default()),
    };
    let (gen, _) = full_objective(&annealed, 100.0, &[(Term::F0, 0.3)], &[]).unwrap();
    assert_eq!(gen, 2.5 * 0.3);

    let held = Schedule {
        weights: LossWeights::default(),
        anneal: None,
    };
    assert_eq!(held.weight(Term::Norm, 149.0), 5.0);

    let bad = Schedule {
        weights: LossWeights {
            adv: -1.0,
            ..LossWeights::default()
        },
        anneal: None,
    };
    assert!(full_objective(&bad, 0.0, &values, &values).is_err());
}

#[test]
fn weighted_sum_matches_scalar_objective() {
    let schedule = Schedule {
        weights: LossWeights::default(),
        anneal: Some(AnnealState::default()),
    };
    let mut g = Graph::new();
    let terms: Vec<(Term, Var)> = Term::ALL
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, g.constant(Tensor::scalar(0.1 * (i + 1) as f64))))
        .collect();
    let values: Vec<(Term, f64)> = terms.iter().map(|&(t, v)| (t, g.value(v).item())).collect();
    let s = weighted_sum(&mut g, &schedule, 75.0, &terms, Side::Generator);
    let (gen, _) = full_objective(&schedule, 75.0, &values, &[]).unwrap();
    close(g.value(s).item(), gen, 1e-12);
}

/// Finite-difference check of a loss with respect to generator parameters,
/// with every other network held fixed.
fn check_generator_loss<F>(name: &str, seed: u64, f: F)
where
    F: Fn(&mut Graph, &Bound, &ModelSet, &[Tensor]) -> Var,
{
    let arch = tiny();
    let m = ModelSet::new(&arch, 2, 2, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let data = vec![
        rt(&mut rng, &[2, 6, 12]),
        rt(&mut rng, &[2, 4]),
        rt(&mut rng, &[2, 4]),
        rt(&mut rng, &[2, 4]),
        rt(&mut rng, &[2, 4]),
    ];
    let inputs = m.generator.params.values().to_vec();
    let report = check_gradients(
        &inputs,
        |g, vars| f(g, &Bound(vars.to_vec()), &m, &data),
        &GradCheckConfig {
            coords: 160,
            ..Default::default()
        },
        &mut rng,
    );
    assert!(report.compared >= 100, "{name}: only {} coordinates", report.compared);
    assert!(report.passed(), "{name}: {report:?}");
}

fn convert(g: &mut Graph, p: &Bound, m: &ModelSet, x: Var, sp: Var, em: Var) -> Var {
    let pp = m.pitch.params.bind(g, false);
    let (f0, _) = m.pitch.forward(g, &pp, x);
    m.generator.forward(g, p, x, f0, sp, em)
}

fn inputs(g: &mut Graph, d: &[Tensor]) -> (Var, Var, Var, Var, Var) {
    (
        g.constant(d[0].clone()),
        g.constant(d[1].clone()),
        g.constant(d[2].clone()),
        g.constant(d[3].clone()),
        g.constant(d[4].clone()),
    )
}

#[test]
fn generator_side_losses_pass_gradient_checks() {
    check_generator_loss("adv", 20, |g, p, m, d| {
        let (x, sp, em, ..) = inputs(g, d);
        let y = convert(g, p, m, x, sp, em);
        let pd = m.discriminator.params.bind(g, false);
        let mask = PairMask::from_flags(vec![true, false]);
        adversarial_loss(g, &m.discriminator, &pd, x, y, &[0, 1], &[2, 3], &mask, Side::Generator).unwrap()
    });
    check_generator_loss("advcls", 21, |g, p, m, d| {
        let (x, sp, em, ..) = inputs(g, d);
        let y = convert(g, p, m, x, sp, em);
        let ps = m.speaker_classifier.params.bind(g, false);
        let pe = m.emotion_classifier.params.bind(g, false);
        source_classifier_loss(
            g,
            &m.speaker_classifier,
            &ps,
            &m.emotion_classifier,
            &pe,
            y,
            &[1, 0],
            &[0, 1],
        )
        .unwrap()
    });
    check_generator_loss("sty", 22, |g, p, m, d| {
        let (x, sp, em, ..) = inputs(g, d);
        let y = convert(g, p, m, x, sp, em);
        let ps = m.speaker_encoder.params.bind(g, false);
        let pe = m.emotion_encoder.params.bind(g, false);
        let rs = m.speaker_encoder.forward(g, &ps, y, &[0, 1]);
        let re = m.emotion_encoder.forward(g, &pe, y, &[1, 1]);
        style_reconstruction_loss(g, sp, rs, em, re).unwrap()
    });
    check_generator_loss("ds", 23, |g, p, m, d| {
        let (x, sp, em, sp2, em2) = inputs(g, d);
        let pp = m.pitch.params.bind(g, false);
        let (f0, _) = m.pitch.forward(g, &pp, x);
        style_diversification_loss(
            g,
            |g, s, e| m.generator.forward(g, p, x, f0, s, e),
            (sp, sp2),
            (em, em2),
        )
        .unwrap()
    });
    check_generator_loss("f0", 24, |g, p, m, d| {
        let (x, sp, em, ..) = inputs(g, d);
        let pp = m.pitch.params.bind(g, false);
        let (f0, cx) = m.pitch.forward(g, &pp, x);
        let y = m.generator.forward(g, p, x, f0, sp, em);
        let (_, cy) = m.pitch.forward(g, &pp, y);
        f0_consistency_loss(g, cx, cy).unwrap()
    });
    check_generator_loss("norm", 25, |g, p, m, d| {
        let (x, sp, em, ..) = inputs(g, d);
        let y = convert(g, p, m, x, sp, em);
        norm_consistency_loss(g, x, y).unwrap()
    });
    check_generator_loss("asr", 26, |g, p, m, d| {
        let (x, sp, em, ..) = inputs(g, d);
        let y = convert(g, p, m, x, sp, em);
        let pc = m.content.params.bind(g, false);
        speech_consistency_loss(g, &m.content, &pc, x, y).unwrap()
    });
    check_generator_loss("cyc", 27, |g, p, m, d| {
        let (x, sp, em, sp2, em2) = inputs(g, d);
        let y = convert(g, p, m, x, sp, em);
        let back = convert(g, p, m, y, sp2, em2);
        cycle_consistency_loss(g, x, back).unwrap()
    });
}

#[test]
fn discriminator_side_losses_pass_gradient_checks() {
    let arch = tiny();
    let m = ModelSet::new(&arch, 2, 2, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let real = rt(&mut rng, &[3, 6, 12]);
    let fake = rt(&mut rng, &[3, 6, 12]);
    let report = check_gradients(
        m.discriminator.params.values(),
        |g, vars| {
            let p = Bound(vars.to_vec());
            let (r, f) = (g.constant(real.clone()), g.constant(fake.clone()));
            let mask = PairMask::from_flags(vec![true, true, false]);
            adversarial_loss(
                g,
                &m.discriminator,
                &p,
                r,
                f,
                &[0, 1, 2],
                &[3, 2, 3],
                &mask,
                Side::Discriminator,
            )
            .unwrap()
        },
        &GradCheckConfig {
            coords: 160,
            ..Default::default()
        },
        &mut rng,
    );
    assert!(report.compared >= 100 && report.passed(), "{report:?}");

    let n_sp = m.speaker_classifier.params.len();
    let mut inputs = m.speaker_classifier.params.values().to_vec();
    inputs.extend(m.emotion_classifier.params.values().iter().cloned());
    let report = check_gradients(
        &inputs,
        |g, vars| {
            let ps = Bound(vars[..n_sp].to_vec());
            let pe = Bound(vars[n_sp..].to_vec());
            let f = g.constant(fake.clone());
            source_classifier_loss(
                g,
                &m.speaker_classifier,
                &ps,
                &m.emotion_classifier,
                &pe,
                f,
                &[0, 1, 1],
                &[1, 0, 0],
            )
            .unwrap()
        },
        &GradCheckConfig {
            coords: 200,
            ..Default::default()
        },
        &mut rng,
    );
    assert!(report.compared >= 100 && report.passed(), "{report:?}");
}
