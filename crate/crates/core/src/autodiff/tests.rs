use super::*;
use crate::gradcheck::{check_gradients, GradCheckConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn check<F: Fn(&mut Graph, &[Var]) -> Var>(inputs: &[Tensor], f: F) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = GradCheckConfig {
        coords: 64,
        ..Default::default()
    };
    let report = check_gradients(inputs, f, &cfg, &mut rng);
    assert!(report.passed(), "{:?}", report.failures);
    assert!(report.compared > 0);
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted(g: &mut Graph, v: Var) -> Var {
    let shape = g.value(v).shape().to_vec();
    let n = g.value(v).len();
    let w = g.constant(Tensor::new(
        shape,
        (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect(),
    ));
    let p = g.mul(v, w);
    g.sum(p)
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, &[3, 4]);
    let b = randn(&mut rng, &[3, 4]);
    check(&[a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]);
        let d = g.sub(s, v[1]);
        let m = g.mul(d, v[1]);
        let q = g.silu(m);
        let r = g.softplus(q);
        let t = g.scale(r, -1.7);
        weighted(g, t)
    });
    check(&[a], |g, v| {
        let x = g.abs(v[0]);
        let m = g.mean(x);
        let s = g.sum(v[0]);
        g.add(m, s)
    });
}

#[test]
fn conv1d_matches_direct_sum_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&mut rng, &[2, 3, 6]);
    let w = randn(&mut rng, &[4, 3, 3]);
    let b = randn(&mut rng, &[4]);
    let mut g = Graph::new();
    let (vx, vw, vb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv1d(vx, vw, vb);
    let out = g.value(y);
    for s in 0..2 {
        for co in 0..4 {
            for t in 0..6 {
                let mut acc = b.data()[co];
                for ci in 0..3 {
                    for kk in 0..3 {
                        let src = t as isize + kk as isize - 1;
                        if (0..6).contains(&src) {
                            acc += w.data()[(co * 3 + ci) * 3 + kk] * x.data()[(s * 3 + ci) * 6 + src as usize];
                        }
                    }
                }
                assert!((out.data()[(s * 4 + co) * 6 + t] - acc).abs() < 1e-12);
            }
        }
    }
    check(&[x.clone(), w, b], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2]);
        weighted(g, y)
    });
    let w1 = randn(&mut rng, &[2, 3, 1]);
    let b1 = randn(&mut rng, &[2]);
    check(&[x, w1, b1], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2]);
        weighted(g, y)
    });
}

#[test]
fn linear_and_domain_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[3, 5]);
    let w = randn(&mut rng, &[4, 5]);
    let b = randn(&mut rng, &[4]);
    check(&[x.clone(), w, b], |g, v| {
        let y = g.linear(v[0], v[1], v[2]);
        weighted(g, y)
    });
    let wd = randn(&mut rng, &[3, 2, 5]);
    let bd = randn(&mut rng, &[3, 2]);
    check(&[x.clone(), wd, bd], |g, v| {
        let y = g.domain_linear(v[0], v[1], v[2], &[2, 0, 2]);
        weighted(g, y)
    });
    check(&[x], |g, v| {
        let y = g.pick(v[0], &[4, 0, 1]);
        weighted(g, y)
    });
}

#[test]
fn frame_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[2, 3, 7]);
    let gamma = randn(&mut rng, &[2, 3]);
    let beta = randn(&mut rng, &[2, 3]);
    let other = randn(&mut rng, &[2, 2, 7]);
    check(&[x.clone()], |g, v| {
        let p = g.pool_time(v[0], 2);
        weighted(g, p)
    });
    check(&[x.clone()], |g, v| {
        let p = g.mean_time(v[0]);
        weighted(g, p)
    });
    check(&[x.clone()], |g, v| {
        let p = g.instance_norm(v[0], 1e-5);
        weighted(g, p)
    });
    check(&[x.clone(), gamma, beta], |g, v| {
        let p = g.modulate(v[0], v[1], v[2]);
        weighted(g, p)
    });
    check(&[x.clone(), other], |g, v| {
        let p = g.concat(v[0], v[1]);
        weighted(g, p)
    });
    check(&[x.clone()], |g, v| {
        let p = g.sum_axis1(v[0]);
        weighted(g, p)
    });
    check(&[x.clone()], |g, v| {
        let p = g.frames_to_rows(v[0]);
        let q = g.select_rows(p, &[0, 3, 3, 13]);
        weighted(g, q)
    });
    check(&[x], |g, v| {
        let p = g.reshape(v[0], vec![6, 7]);
        let q = g.select_rows(p, &[5, 1]);
        weighted(g, q)
    });
}

#[test]
fn cross_entropy_values_and_gradient() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
    let ce = g.cross_entropy(logits, &[1, 0]);
    let v = g.value(ce).data().to_vec();
    assert!((v[0] - 3f64.ln()).abs() < 1e-12);
    assert!((v[1] - (1.0 + 2.0 * (-1f64).exp()).ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = randn(&mut rng, &[4, 3]);
    check(&[l], |g, v| {
        let c = g.cross_entropy(v[0], &[0, 2, 1, 1]);
        weighted(g, c)
    });
}

#[test]
fn instance_norm_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new();
    let x = g.constant(randn(&mut rng, &[1, 2, 50]));
    let y = g.instance_norm(x, 0.0);
    for row in g.value(y).data().chunks(50) {
        let m = row.iter().sum::<f64>() / 50.0;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 50.0;
        assert!(m.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::full(&[2], 1.0), true);
    let c = g.constant(Tensor::full(&[2], 3.0));
    let m = g.mul(a, c);
    let s = g.sum(m);
    let grads = g.backward(s);
    assert_eq!(grads.get(a).unwrap().data(), &[3.0, 3.0]);
    assert!(grads.get(c).is_none());
}

#[test]
fn selected_rows_leave_other_rows_with_exact_zero_gradient() {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = g.leaf(randn(&mut rng, &[4, 3]), true);
    let sel = g.select_rows(x, &[1, 2]);
    let s = g.sum(sel);
    let grads = g.backward(s);
    let d = grads.get(x).unwrap().data();
    assert!(d[0..3].iter().all(|v| *v == 0.0));
    assert!(d[9..12].iter().all(|v| *v == 0.0));
    assert!(d[3..9].iter().all(|v| *v == 1.0));
    let _: f64 = rng.random();
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn conv1d_gradients_hold_for_any_shape(
        batch in 1usize..3,
        cin in 1usize..4,
        cout in 1usize..4,
        frames in 1usize..7,
        kernel in proptest::sample::select(vec![1usize, 3, 5]),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, &[batch, cin, frames]);
        let w = randn(&mut rng, &[cout, cin, kernel]);
        let b = randn(&mut rng, &[cout]);
        check(&[x, w, b], |g, v| {
            let y = g.conv1d(v[0], v[1], v[2]);
            let y = g.silu(y);
            weighted(g, y)
        });
    }

    #[test]
    fn softplus_gradient_is_the_logistic(v in -30.0f64..30.0) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1], vec![v]), true);
        let y = g.softplus(x);
        let y = g.sum(y);
        let grads = g.backward(y);
        let expect = 1.0 / (1.0 + (-v).exp());
        proptest::prop_assert!((grads.get(x).unwrap().data()[0] - expect).abs() <= 1e-12);
    }
}
