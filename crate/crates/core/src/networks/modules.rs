//! Network definitions. Each network owns a [`ParamStore`] and exposes a
//! graph-level `forward`; callers bind the store once per graph.

use super::ArchConfig;
use crate::autodiff::{Graph, Var};
use crate::params::{Bound, Conv1d, DomainLinear, Linear, ParamStore};
use rand::Rng;

const NORM_EPS: f64 = 1e-5;
/// Small enough that the standardized contour has unit spread even for a
/// nearly flat raw output.
const CONTOUR_EPS: f64 = 1e-10;
/// Variance floor of the content probe's per-utterance input normalization;
/// keeps near-constant bins from being amplified to unit variance.
const CMVN_FLOOR: f64 = 1.0;

/// Conv trunk shared by the discriminator, source classifiers, style
/// encoders and evaluation probes: two conv stages with frame pooling,
/// then a pooled vector through one hidden layer.
#[derive(Clone, Debug)]
struct Trunk {
    conv1: Conv1d,
    conv2: Conv1d,
    fc: Linear,
}

impl Trunk {
    fn new<R: Rng + ?Sized>(ps: &mut ParamStore, rng: &mut R, n_bins: usize, ch: usize, k: usize) -> Self {
        Self {
            conv1: Conv1d::new(ps, rng, "trunk.conv1", n_bins, ch, k),
            conv2: Conv1d::new(ps, rng, "trunk.conv2", ch, ch, k),
            fc: Linear::new(ps, rng, "trunk.fc", ch, ch),
        }
    }

    /// `[B, n_bins, T]` to `[B, ch]`.
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.conv1.forward(g, p, x);
        let h = g.silu(h);
        let h = g.pool_time(h, 2);
        let h = self.conv2.forward(g, p, h);
        let h = g.silu(h);
        let h = g.pool_time(h, 2);
        let h = g.mean_time(h);
        let h = self.fc.forward(g, p, h);
        g.silu(h)
    }
}

/// Style-conditioned residual block: norm, modulate, activate, convolve.
#[derive(Clone, Debug)]
struct StyleBlock {
    gamma: Linear,
    beta: Linear,
    conv: Conv1d,
}

impl StyleBlock {
    fn new<R: Rng + ?Sized>(ps: &mut ParamStore, rng: &mut R, name: &str, style: usize, ch: usize, k: usize) -> Self {
        Self {
            gamma: Linear::new(ps, rng, &format!("{name}.gamma"), style, ch),
            beta: Linear::new(ps, rng, &format!("{name}.beta"), style, ch),
            conv: Conv1d::new(ps, rng, &format!("{name}.conv"), ch, ch, k),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, h: Var, style: Var) -> Var {
        let n = g.instance_norm(h, NORM_EPS);
        let gm = self.gamma.forward(g, p, style);
        let bt = self.beta.forward(g, p, style);
        let m = g.modulate(n, gm, bt);
        let a = g.silu(m);
        self.conv.forward(g, p, a)
    }
}

/// Converter `G(X, h_f0, h_sp, h_em)`; output has the input's shape.
///
/// The network predicts a residual that is added back onto `X`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamStore,
    conv_in: Conv1d,
    blocks: Vec<StyleBlock>,
    out_block: StyleBlock,
    conv_out: Conv1d,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let ch = arch.gen_channels;
        let style = 2 * arch.style_dim;
        let conv_in = Conv1d::new(&mut ps, rng, "conv_in", arch.n_bins + arch.pitch_dim, ch, arch.kernel);
        let blocks = (0..arch.gen_blocks)
            .map(|i| StyleBlock::new(&mut ps, rng, &format!("block{i}"), style, ch, arch.kernel))
            .collect();
        let out_block = StyleBlock::new(&mut ps, rng, "out", style, ch, 1);
        let conv_out = Conv1d::new(&mut ps, rng, "conv_out", ch, arch.n_bins, 1);
        Self {
            params: ps,
            conv_in,
            blocks,
            out_block,
            conv_out,
        }
    }

    /// `x: [B, n_bins, T]`, `f0: [B, pitch_dim, T]`, `h_sp`, `h_em: [B, style_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, f0: Var, h_sp: Var, h_em: Var) -> Var {
        let style = g.concat(h_sp, h_em);
        let inp = g.concat(x, f0);
        let mut h = self.conv_in.forward(g, p, inp);
        for b in &self.blocks {
            let r = b.forward(g, p, h, style);
            h = g.add(h, r);
        }
        let o = self.out_block.forward(g, p, h, style);
        let o = g.silu(o);
        let delta = self.conv_out.forward(g, p, o);
        g.add(x, delta)
    }
}

/// Style encoder `S(R, y)`: shared trunk plus one projection per domain.
#[derive(Clone, Debug)]
pub struct StyleEncoder {
    pub params: ParamStore,
    trunk: Trunk,
    head: DomainLinear,
}

impl StyleEncoder {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, domains: usize, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let trunk = Trunk::new(&mut ps, rng, arch.n_bins, arch.enc_channels, arch.kernel);
        let head = DomainLinear::new(&mut ps, rng, "head", domains, arch.enc_channels, arch.style_dim);
        Self {
            params: ps,
            trunk,
            head,
        }
    }

    pub fn domains(&self) -> usize {
        self.head.domains()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, reference: Var, codes: &[usize]) -> Var {
        let h = self.trunk.forward(g, p, reference);
        self.head.forward(g, p, h, codes)
    }
}

/// Mapping network `M(z, y)`: shared MLP plus one projection per domain.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    pub params: ParamStore,
    fc1: Linear,
    fc2: Linear,
    head: DomainLinear,
}

impl MappingNetwork {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, domains: usize, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let h = arch.mapper_hidden;
        Self {
            fc1: Linear::new(&mut ps, rng, "fc1", arch.latent_dim, h),
            fc2: Linear::new(&mut ps, rng, "fc2", h, h),
            head: DomainLinear::new(&mut ps, rng, "head", domains, h, arch.style_dim),
            params: ps,
        }
    }

    pub fn domains(&self) -> usize {
        self.head.domains()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var, codes: &[usize]) -> Var {
        let h = self.fc1.forward(g, p, z);
        let h = g.silu(h);
        let h = self.fc2.forward(g, p, h);
        let h = g.silu(h);
        self.head.forward(g, p, h, codes)
    }
}

/// Real/fake discriminator with one output head per (speaker, emotion) pair.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamStore,
    trunk: Trunk,
    heads: Linear,
    num_heads: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, num_heads: usize, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let trunk = Trunk::new(&mut ps, rng, arch.n_bins, arch.disc_channels, arch.kernel);
        let heads = Linear::new(&mut ps, rng, "heads", arch.disc_channels, num_heads);
        Self {
            params: ps,
            trunk,
            heads,
            num_heads,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    /// Index of the `[num_heads, features]` head weight in the store.
    pub fn head_weight_index(&self) -> usize {
        self.heads.weight_index()
    }

    pub fn head_bias_index(&self) -> usize {
        self.heads.bias_index()
    }

    pub fn trunk(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        self.trunk.forward(g, p, x)
    }

    /// Real/fake logit per sample, each routed to the head `heads[s]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, heads: &[usize]) -> Var {
        let f = self.trunk.forward(g, p, x);
        let all = self.heads.forward(g, p, f);
        g.pick(all, heads)
    }
}

/// Source-domain classifier with the discriminator's architecture.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub params: ParamStore,
    trunk: Trunk,
    out: Linear,
    classes: usize,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, classes: usize, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let trunk = Trunk::new(&mut ps, rng, arch.n_bins, arch.disc_channels, arch.kernel);
        let out = Linear::new(&mut ps, rng, "out", arch.disc_channels, classes);
        Self {
            params: ps,
            trunk,
            out,
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let f = self.trunk.forward(g, p, x);
        self.out.forward(g, p, f)
    }
}

/// Frame-level pitch regressor standing in for a pre-trained pitch network.
#[derive(Clone, Debug)]
pub struct PitchExtractor {
    pub params: ParamStore,
    conv1: Conv1d,
    conv2: Conv1d,
    conv3: Conv1d,
    head: Conv1d,
}

impl PitchExtractor {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let h = arch.pitch_hidden;
        Self {
            conv1: Conv1d::new(&mut ps, rng, "conv1", arch.n_bins, h, 3),
            conv2: Conv1d::new(&mut ps, rng, "conv2", h, h, 3),
            conv3: Conv1d::new(&mut ps, rng, "conv3", h, arch.pitch_dim, 3),
            head: Conv1d::new(&mut ps, rng, "head", arch.pitch_dim, 1, 1),
            params: ps,
        }
    }

    /// Returns `(features [B, pitch_dim, T], contour [B, 1, T])` where the
    /// contour is standardized per utterance.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> (Var, Var) {
        let h = self.conv1.forward(g, p, x);
        let h = g.silu(h);
        let h = self.conv2.forward(g, p, h);
        let h = g.silu(h);
        let h = self.conv3.forward(g, p, h);
        let feat = g.silu(h);
        let raw = self.head.forward(g, p, feat);
        let contour = g.instance_norm(raw, CONTOUR_EPS);
        (feat, contour)
    }
}

/// Frame-level content recognizer; its hidden features back the speech
/// consistency loss.
#[derive(Clone, Debug)]
pub struct ContentProbe {
    pub params: ParamStore,
    conv1: Conv1d,
    conv2: Conv1d,
    head: Conv1d,
}

impl ContentProbe {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let h = arch.content_channels;
        Self {
            conv1: Conv1d::new(&mut ps, rng, "conv1", arch.n_bins, h, 3),
            conv2: Conv1d::new(&mut ps, rng, "conv2", h, h, 3),
            head: Conv1d::new(&mut ps, rng, "head", h, arch.num_symbols, 1),
            params: ps,
        }
    }

    pub fn features(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let x = g.instance_norm(x, CMVN_FLOOR);
        let h = self.conv1.forward(g, p, x);
        let h = g.silu(h);
        let h = self.conv2.forward(g, p, h);
        g.silu(h)
    }

    /// `(features, per-frame logits [B, symbols, T])`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> (Var, Var) {
        let f = self.features(g, p, x);
        let l = self.head.forward(g, p, f);
        (f, l)
    }
}

/// Utterance classifier used for evaluation; the penultimate layer doubles
/// as an embedding.
#[derive(Clone, Debug)]
pub struct ProbeNet {
    pub params: ParamStore,
    trunk: Trunk,
    embed: Linear,
    out: Linear,
    n_bins: usize,
    classes: usize,
}

impl ProbeNet {
    pub fn new<R: Rng + ?Sized>(n_bins: usize, channels: usize, embed_dim: usize, classes: usize, rng: &mut R) -> Self {
        let mut ps = ParamStore::new();
        let trunk = Trunk::new(&mut ps, rng, n_bins, channels, 5);
        let embed = Linear::new(&mut ps, rng, "embed", channels, embed_dim);
        let out = Linear::new(&mut ps, rng, "out", embed_dim, classes);
        Self {
            params: ps,
            trunk,
            embed,
            out,
            n_bins,
            classes,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `(embedding [B, embed_dim], logits [B, classes])`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> (Var, Var) {
        let f = self.trunk.forward(g, p, x);
        let e = self.embed.forward(g, p, f);
        let e = g.silu(e);
        let l = self.out.forward(g, p, e);
        (e, l)
    }
}
