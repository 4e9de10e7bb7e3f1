//! Central finite-difference checks against the reverse-mode gradients.
//!
//! The harness evaluates a scalar function twice per sampled coordinate at
//! `x ± step` and compares `(f(x+h) - f(x-h)) / 2h` to the gradient returned
//! by [`Graph::backward`]. It never looks at how the function is built, so
//! it serves as an independent oracle for every operation and network.

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum allowed `|analytic - numeric| / max(|analytic|, |numeric|)`.
    pub rel_tol: f64,
    /// Coordinates where both gradients are below this magnitude are
    /// reported as agreeing zeros rather than compared relatively; at
    /// `step = 1e-4` in double precision, roundoff alone is ~1e-12 per unit
    /// of function value.
    pub zero_floor: f64,
    /// Number of coordinates to sample across all inputs.
    pub coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel_tol: 1e-3,
            zero_floor: 1e-7,
            coords: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Coordinates compared relatively.
    pub compared: usize,
    /// Coordinates where both routes were below the zero floor.
    pub zeros: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.compared += other.compared;
        self.zeros += other.zeros;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

fn evaluate<F>(inputs: &[Tensor], f: &F, track: bool) -> (Graph, Vec<Var>, Var)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
    let out = f(&mut g, &vars);
    assert_eq!(g.value(out).len(), 1, "gradient check needs a scalar function");
    (g, vars, out)
}

/// Check the gradient of `f` with respect to every tensor in `inputs`.
///
/// `f` receives one leaf per input (in order) and must return a scalar.
pub fn check_gradients<F, R>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig, rng: &mut R) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
    R: Rng + ?Sized,
{
    let (g, vars, out) = evaluate(inputs, &f, true);
    let grads = g.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get_or_zeros(*v, t))
        .collect();

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let picks = sample(rng, total, cfg.coords.min(total));
    let mut report = GradCheckReport::default();
    let mut perturbed = inputs.to_vec();
    for flat in picks.iter() {
        let (mut input, mut offset) = (0, flat);
        while offset >= inputs[input].len() {
            offset -= inputs[input].len();
            input += 1;
        }
        let orig = inputs[input].data()[offset];
        perturbed[input].data_mut()[offset] = orig + cfg.step;
        let (gp, _, op) = evaluate(&perturbed, &f, false);
        let fp = gp.value(op).item();
        perturbed[input].data_mut()[offset] = orig - cfg.step;
        let (gm, _, om) = evaluate(&perturbed, &f, false);
        let fm = gm.value(om).item();
        perturbed[input].data_mut()[offset] = orig;

        let numeric = (fp - fm) / (2.0 * cfg.step);
        let a = analytic[input].data()[offset];
        let scale = a.abs().max(numeric.abs());
        if scale < cfg.zero_floor {
            report.zeros += 1;
            continue;
        }
        let rel_err = (a - numeric).abs() / scale;
        report.compared += 1;
        report.max_rel_err = report.max_rel_err.max(rel_err);
        if rel_err > cfg.rel_tol {
            report.failures.push(Mismatch {
                input,
                offset,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    report
}
