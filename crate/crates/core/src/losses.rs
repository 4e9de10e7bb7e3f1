//! Training objectives, their weights and the annealing schedule.
//!
//! Every loss here is a graph operation: it takes already-computed network
//! outputs (or the network itself where the loss re-runs it) and returns a
//! scalar [`Var`]. Averages are over samples and, for feature maps, over
//! every element, so values do not scale with crop length.

use crate::autodiff::{Graph, Var};
use crate::catalog::PairMask;
use crate::error::{Error, Result};
use crate::networks::{Classifier, ContentProbe, Discriminator};
use crate::params::Bound;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adv: f64,
    pub advcls: f64,
    pub sty: f64,
    pub ds: f64,
    pub f0: f64,
    pub norm: f64,
    pub asr: f64,
    pub cyc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            advcls: 0.5,
            sty: 1.0,
            ds: 1.0,
            f0: 5.0,
            norm: 5.0,
            asr: 1.0,
            cyc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            adv: 0.0,
            advcls: 0.0,
            sty: 0.0,
            ds: 0.0,
            f0: 0.0,
            norm: 0.0,
            asr: 0.0,
            cyc: 0.0,
        }
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Adv => self.adv,
            Term::AdvCls => self.advcls,
            Term::Sty => self.sty,
            Term::Ds => self.ds,
            Term::F0 => self.f0,
            Term::Norm => self.norm,
            Term::Asr => self.asr,
            Term::Cyc => self.cyc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Term::ALL {
            let w = self.get(t);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "weights.{} must be finite and >= 0, got {w}",
                    t.name()
                )));
            }
        }
        Ok(())
    }
}

/// Linear decay of the pitch and norm consistency weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealState {
    pub start_epoch: f64,
    pub end_epoch: f64,
    pub initial_weight: f64,
    pub final_weight: f64,
}

impl Default for AnnealState {
    fn default() -> Self {
        Self {
            start_epoch: 50.0,
            end_epoch: 150.0,
            initial_weight: 5.0,
            final_weight: 0.0,
        }
    }
}

impl AnnealState {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_epoch < self.end_epoch) {
            return Err(Error::InvalidConfig(format!(
                "anneal start_epoch {} must be below end_epoch {}",
                self.start_epoch, self.end_epoch
            )));
        }
        if !(self.initial_weight > 0.0) || !(self.final_weight >= 0.0) || self.final_weight > self.initial_weight {
            return Err(Error::InvalidConfig(
                "anneal weights need initial_weight > 0 and 0 <= final_weight <= initial_weight".into(),
            ));
        }
        Ok(())
    }
}

/// Holds `initial_weight` up to `start_epoch`, then falls linearly to
/// `final_weight` at `end_epoch` and stays there.
pub fn anneal_weight(state: &AnnealState, epoch: f64) -> f64 {
    if epoch <= state.start_epoch {
        state.initial_weight
    } else if epoch >= state.end_epoch {
        state.final_weight
    } else {
        let frac = (epoch - state.start_epoch) / (state.end_epoch - state.start_epoch);
        state.initial_weight + (state.final_weight - state.initial_weight) * frac
    }
}

/// Named loss terms of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Adv,
    AdvCls,
    Sty,
    Ds,
    F0,
    Norm,
    Asr,
    Cyc,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::Adv,
        Term::AdvCls,
        Term::Sty,
        Term::Ds,
        Term::F0,
        Term::Norm,
        Term::Asr,
        Term::Cyc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Adv => "adv",
            Term::AdvCls => "advcls",
            Term::Sty => "sty",
            Term::Ds => "ds",
            Term::F0 => "f0",
            Term::Norm => "norm",
            Term::Asr => "asr",
            Term::Cyc => "cyc",
        }
    }

    fn annealed(self) -> bool {
        matches!(self, Term::F0 | Term::Norm)
    }
}

/// Weight schedule in force at one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub weights: LossWeights,
    /// `None` holds the pitch and norm weights at their configured values.
    pub anneal: Option<AnnealState>,
}

impl Schedule {
    /// Effective weight of `term` at `epoch`. Annealing scales the configured
    /// weight by `anneal_weight / initial_weight`, so with the default
    /// weight of 5 the effective value is exactly `anneal_weight`.
    pub fn weight(&self, term: Term, epoch: f64) -> f64 {
        let w = self.weights.get(term);
        match &self.anneal {
            Some(a) if term.annealed() => {
                if w == a.initial_weight {
                    anneal_weight(a, epoch)
                } else {
                    w * anneal_weight(a, epoch) / a.initial_weight
                }
            }
            _ => w,
        }
    }
}

/// Which objective an adversarial term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Discriminator,
    Generator,
}

/// Per-sample real/fake loss from logits, averaged over all given samples;
/// constant 0 when there are none.
///
/// Discriminator side: `softplus(-real) + softplus(fake)`, i.e.
/// `-[log D(real) + log(1 - D(fake))]` with `D = sigmoid(logit)`.
/// Generator side: `softplus(-fake)`, the non-saturating fooling term.
pub fn adversarial_from_logits(g: &mut Graph, real: Option<Var>, fake: Var, side: Side) -> Var {
    let n = g.value(fake).len();
    if n == 0 {
        return g.constant(Tensor::scalar(0.0));
    }
    match side {
        Side::Discriminator => {
            let real = real.expect("discriminator side needs real logits");
            let nr = g.neg(real);
            let a = g.softplus(nr);
            let b = g.softplus(fake);
            let s = g.add(a, b);
            g.mean(s)
        }
        Side::Generator => {
            let nf = g.neg(fake);
            let a = g.softplus(nf);
            g.mean(a)
        }
    }
}

/// Adversarial loss with fake-pair masking applied before the discriminator
/// runs, so masked samples add nothing to the value or any gradient.
///
/// `real`/`fake` are `[B, bins, T]`; `source_heads`/`target_heads` are the
/// flattened pair indices. Pass [`PairMask::all_kept`] to disable masking.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_loss(
    g: &mut Graph,
    disc: &Discriminator,
    p: &Bound,
    real: Var,
    fake: Var,
    source_heads: &[usize],
    target_heads: &[usize],
    mask: &PairMask,
    side: Side,
) -> Result<Var> {
    let b = g.value(fake).dim(0);
    if b == 0 {
        return Err(Error::Shape("adversarial loss on an empty batch".into()));
    }
    if mask.len() != b || target_heads.len() != b {
        return Err(Error::Shape(format!(
            "mask of {} and {} target heads for a batch of {b}",
            mask.len(),
            target_heads.len()
        )));
    }
    let kept = mask.kept_indices();
    if kept.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let all = kept.len() == b;
    let pick = |heads: &[usize]| -> Vec<usize> { kept.iter().map(|&i| heads[i]).collect() };
    let fake_k = if all { fake } else { g.select_rows(fake, &kept) };
    let fake_logits = disc.forward(g, p, fake_k, &pick(target_heads));
    let real_logits = match side {
        Side::Discriminator => {
            if source_heads.len() != b {
                return Err(Error::Shape("source heads do not match batch".into()));
            }
            let real_k = if all { real } else { g.select_rows(real, &kept) };
            Some(disc.forward(g, p, real_k, &pick(source_heads)))
        }
        Side::Generator => None,
    };
    Ok(adversarial_from_logits(g, real_logits, fake_logits, side))
}

/// Mean cross entropy of one classifier's logits.
pub fn classifier_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let k = g.value(logits).dim(1);
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {bad} out of range for {k} classes")));
    }
    let ce = g.cross_entropy(logits, labels);
    Ok(g.mean(ce))
}

/// Source classifier loss on converted samples: speaker plus emotion cross
/// entropy. The classifier side passes source labels, the generator side
/// target labels. Never masked.
#[allow(clippy::too_many_arguments)]
pub fn source_classifier_loss(
    g: &mut Graph,
    c_sp: &Classifier,
    p_sp: &Bound,
    c_em: &Classifier,
    p_em: &Bound,
    generated: Var,
    speaker_labels: &[usize],
    emotion_labels: &[usize],
) -> Result<Var> {
    let ls = c_sp.forward(g, p_sp, generated);
    let le = c_em.forward(g, p_em, generated);
    let a = classifier_cross_entropy(g, ls, speaker_labels)?;
    let b = classifier_cross_entropy(g, le, emotion_labels)?;
    Ok(g.add(a, b))
}

/// Mean over rows of the L1 distance between `[B, D]` embeddings.
pub fn embedding_l1(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!(
            "embedding shapes {:?} and {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let rows = g.value(a).dim(0) as f64;
    let d = g.sub(a, b);
    let d = g.abs(d);
    let s = g.sum(d);
    Ok(g.scale(s, 1.0 / rows))
}

/// Style reconstruction: `|h_sp - S_sp(G)| + |h_em - S_em(G)|`, where the
/// re-extracted embeddings come from the generated sample.
pub fn style_reconstruction_loss(g: &mut Graph, h_sp: Var, h_sp_rec: Var, h_em: Var, h_em_rec: Var) -> Result<Var> {
    let a = embedding_l1(g, h_sp, h_sp_rec)?;
    let b = embedding_l1(g, h_em, h_em_rec)?;
    Ok(g.add(a, b))
}

/// Mean absolute difference over every element.
pub fn mean_l1(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!(
            "shapes {:?} and {:?} differ",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let d = g.sub(a, b);
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Style diversification, to be maximized: the sum of three mean L1
/// distances between conversions that differ in one style input.
///
/// `gen(g, h_sp, h_em)` runs the generator on the batch.
pub fn style_diversification_loss<F>(g: &mut Graph, mut gen: F, sp: (Var, Var), em: (Var, Var)) -> Result<Var>
where
    F: FnMut(&mut Graph, Var, Var) -> Var,
{
    let (h_sp, h_sp2) = sp;
    let (h_em, h_em2) = em;
    let base = gen(g, h_sp, h_em);
    let other_em = gen(g, h_sp, h_em2);
    let other_sp = gen(g, h_sp2, h_em);
    let other_both = gen(g, h_sp2, h_em2);
    let t1 = mean_l1(g, base, other_em)?;
    let t2 = mean_l1(g, base, other_sp)?;
    let t3 = mean_l1(g, other_sp, other_both)?;
    let s = g.add(t1, t2);
    Ok(g.add(s, t3))
}

/// Mean per-frame distance between normalized pitch contours `[B, 1, T]`.
pub fn f0_consistency_loss(g: &mut Graph, contour_x: Var, contour_generated: Var) -> Result<Var> {
    mean_l1(g, contour_x, contour_generated)
}

/// `(1/T) sum_t | |X_t|_1 - |Y_t|_1 |`, averaged over the batch, where
/// `|X_t|_1` is the absolute sum of frame `t`.
pub fn norm_consistency_loss(g: &mut Graph, x: Var, generated: Var) -> Result<Var> {
    if g.value(x).shape() != g.value(generated).shape() {
        return Err(Error::Shape("norm consistency needs equal shapes".into()));
    }
    let ax = g.abs(x);
    let nx = g.sum_axis1(ax);
    let ay = g.abs(generated);
    let ny = g.sum_axis1(ay);
    mean_l1(g, nx, ny)
}

/// Mean L1 between content-probe feature maps of the input and conversion.
pub fn speech_consistency_loss(g: &mut Graph, probe: &ContentProbe, p: &Bound, x: Var, generated: Var) -> Result<Var> {
    let fx = probe.features(g, p, x);
    let fy = probe.features(g, p, generated);
    mean_l1(g, fx, fy)
}

/// Mean L1 between the input and its round trip through the converter.
pub fn cycle_consistency_loss(g: &mut Graph, x: Var, reconstructed: Var) -> Result<Var> {
    mean_l1(g, x, reconstructed)
}

/// Weighted sums of term values. `ds` enters the generator objective with a
/// negative sign; only `adv` and `advcls` enter the discriminator/classifier
/// objective.
pub fn full_objective(
    schedule: &Schedule,
    epoch: f64,
    generator: &[(Term, f64)],
    discriminator: &[(Term, f64)],
) -> Result<(f64, f64)> {
    schedule.weights.validate()?;
    let gen = generator
        .iter()
        .map(|&(t, v)| signed_weight(schedule, t, epoch) * v)
        .sum();
    let disc = discriminator.iter().map(|&(t, v)| schedule.weight(t, epoch) * v).sum();
    Ok((gen, disc))
}

/// Graph form of [`full_objective`] for one side.
pub fn weighted_sum(g: &mut Graph, schedule: &Schedule, epoch: f64, terms: &[(Term, Var)], side: Side) -> Var {
    let mut total: Option<Var> = None;
    for &(t, v) in terms {
        let w = match side {
            Side::Generator => signed_weight(schedule, t, epoch),
            Side::Discriminator => schedule.weight(t, epoch),
        };
        let s = g.scale(v, w);
        total = Some(match total {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

fn signed_weight(schedule: &Schedule, term: Term, epoch: f64) -> f64 {
    let w = schedule.weight(term, epoch);
    if term == Term::Ds {
        -w
    } else {
        w
    }
}

#[cfg(test)]
mod tests;
