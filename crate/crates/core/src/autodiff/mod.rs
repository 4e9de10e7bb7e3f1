//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every node that
//! requires one. Leaves created with `requires_grad = false` act as
//! constants: no gradient is computed for them or for anything that only
//! depends on constants.
//!
//! Layout conventions: feature maps are `[batch, channels, frames]`,
//! vectors are `[batch, features]`.

pub(crate) mod kernels;

use crate::tensor::Tensor;
use kernels::{col2im_add, gemm, im2col, sigmoid, softplus};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Abs(Var),
    Silu(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        k: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    DomainLinear {
        x: Var,
        w: Var,
        b: Var,
        idx: Vec<usize>,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    PoolTime {
        x: Var,
        factor: usize,
    },
    MeanTime(Var),
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Modulate {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SumAxis1(Var),
    FramesToRows(Var),
    SelectRows {
        x: Var,
        idx: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the root with respect to `v`, if `v` influenced the root
    /// and requires a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when none flowed.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape3(t: &Tensor) -> (usize, usize, usize) {
    assert_eq!(t.rank(), 3, "expected [batch, channels, frames], got {:?}", t.shape());
    (t.dim(0), t.dim(1), t.dim(2))
}

fn shape2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.rank(), 2, "expected [batch, features], got {:?}", t.shape());
    (t.dim(0), t.dim(1))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].grad)
    }

    /// A leaf holding `value`; gradients are tracked only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value as a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let grad = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), grad)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let grad = self.any_grad(&[a, b]);
        self.push(out, Op::Sub(a, b), grad)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let grad = self.any_grad(&[a, b]);
        self.push(out, Op::Mul(a, b), grad)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, s), grad)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Abs(a), grad)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Silu(a), grad)
    }

    /// `ln(1 + e^x)`; note `-ln sigmoid(x) = softplus(-x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Softplus(a), grad)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), grad)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of empty tensor");
        let out = Tensor::scalar(v.mean());
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Mean(a), grad)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        let grad = self.any_grad(&[a]);
        self.push(out, Op::Reshape(a), grad)
    }

    /// Same-length 1-D convolution over frames with zero padding.
    ///
    /// `x: [B, Cin, T]`, `w: [Cout, Cin, K]` (K odd), `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (bs, cin, t) = shape3(self.value(x));
        let (cout, wcin, k) = shape3(self.value(w));
        assert_eq!(cin, wcin, "conv1d channel mismatch");
        assert_eq!(k % 2, 1, "conv1d kernel must be odd");
        assert_eq!(self.value(b).shape(), &[cout]);
        let pad = k / 2;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; bs * cout * t];
        let mut cols = vec![0.0; cin * k * t];
        for s in 0..bs {
            let xs = &xv[s * cin * t..(s + 1) * cin * t];
            let os = &mut out[s * cout * t..(s + 1) * cout * t];
            for (co, row) in os.chunks_mut(t).enumerate() {
                row.fill(bv[co]);
            }
            if k == 1 {
                gemm(cout, cin, t, wv, false, xs, false, os, 1.0);
            } else {
                im2col(xs, cin, t, k, pad, &mut cols);
                gemm(cout, cin * k, t, wv, false, &cols, false, os, 1.0);
            }
        }
        let grad = self.any_grad(&[x, w, b]);
        self.push(
            Tensor::new(vec![bs, cout, t], out),
            Op::Conv1d { x, w, b, k, pad },
            grad,
        )
    }

    /// `x: [B, I]`, `w: [O, I]`, `b: [O]` to `[B, O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (bs, i) = shape2(self.value(x));
        let (o, wi) = shape2(self.value(w));
        assert_eq!(i, wi, "linear input mismatch");
        assert_eq!(self.value(b).shape(), &[o]);
        let mut out = vec![0.0; bs * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            bs,
            i,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            1.0,
        );
        let grad = self.any_grad(&[x, w, b]);
        self.push(Tensor::new(vec![bs, o], out), Op::Linear { x, w, b }, grad)
    }

    /// Per-sample projection head: sample `s` uses `w[idx[s]]`, `b[idx[s]]`.
    ///
    /// `x: [B, I]`, `w: [N, O, I]`, `b: [N, O]` to `[B, O]`.
    pub fn domain_linear(&mut self, x: Var, w: Var, b: Var, idx: &[usize]) -> Var {
        let (bs, i) = shape2(self.value(x));
        let (n, o, wi) = shape3(self.value(w));
        assert_eq!(i, wi, "domain_linear input mismatch");
        assert_eq!(self.value(b).shape(), &[n, o]);
        assert_eq!(idx.len(), bs, "one domain index per sample");
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; bs * o];
        for (s, &d) in idx.iter().enumerate() {
            assert!(d < n, "domain index {d} out of range {n}");
            let xs = &xv[s * i..(s + 1) * i];
            for r in 0..o {
                let wr = &wv[(d * o + r) * i..(d * o + r + 1) * i];
                out[s * o + r] = bv[d * o + r] + wr.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let grad = self.any_grad(&[x, w, b]);
        let op = Op::DomainLinear {
            x,
            w,
            b,
            idx: idx.to_vec(),
        };
        self.push(Tensor::new(vec![bs, o], out), op, grad)
    }

    /// `x: [B, H]` to `[B]` with `out[s] = x[s, idx[s]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Var {
        let (bs, h) = shape2(self.value(x));
        assert_eq!(idx.len(), bs);
        let xv = self.value(x).data();
        let out = idx
            .iter()
            .enumerate()
            .map(|(s, &j)| {
                assert!(j < h, "pick index {j} out of range {h}");
                xv[s * h + j]
            })
            .collect();
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(vec![bs], out), Op::Pick { x, idx: idx.to_vec() }, grad)
    }

    /// Average pooling over frames; trailing frames that do not fill a
    /// window are dropped.
    pub fn pool_time(&mut self, x: Var, factor: usize) -> Var {
        let (bs, c, t) = shape3(self.value(x));
        let to = t / factor;
        assert!(to > 0, "pooling {t} frames by {factor} leaves nothing");
        let xv = self.value(x).data();
        let inv = 1.0 / factor as f64;
        let mut out = vec![0.0; bs * c * to];
        for (row, o) in out.chunks_mut(to).enumerate() {
            let src = &xv[row * t..(row + 1) * t];
            for (j, v) in o.iter_mut().enumerate() {
                *v = src[j * factor..(j + 1) * factor].iter().sum::<f64>() * inv;
            }
        }
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(vec![bs, c, to], out), Op::PoolTime { x, factor }, grad)
    }

    /// `[B, C, T]` to `[B, C]` averaging over frames.
    pub fn mean_time(&mut self, x: Var) -> Var {
        let (bs, c, t) = shape3(self.value(x));
        let out = self
            .value(x)
            .data()
            .chunks(t)
            .map(|r| r.iter().sum::<f64>() / t as f64)
            .collect();
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(vec![bs, c], out), Op::MeanTime(x), grad)
    }

    /// Normalize each (sample, channel) row over frames to zero mean and
    /// unit variance.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let (bs, c, t) = shape3(self.value(x));
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(bs * c);
        for row in out.chunks_mut(t) {
            let mu = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / t as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) * is;
            }
            inv_std.push(is);
        }
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(vec![bs, c, t], out), Op::InstanceNorm { x, inv_std }, grad)
    }

    /// `x * (1 + gamma) + beta` with `gamma`, `beta: [B, C]` broadcast over frames.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (bs, c, t) = shape3(self.value(x));
        assert_eq!(self.value(gamma).shape(), &[bs, c]);
        assert_eq!(self.value(beta).shape(), &[bs, c]);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = self.value(x).data().to_vec();
        for (row, o) in out.chunks_mut(t).enumerate() {
            let (g, b) = (1.0 + gv[row], bv[row]);
            for v in o.iter_mut() {
                *v = *v * g + b;
            }
        }
        let grad = self.any_grad(&[x, gamma, beta]);
        self.push(Tensor::new(vec![bs, c, t], out), Op::Modulate { x, gamma, beta }, grad)
    }

    /// Concatenate along axis 1; all other axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        assert!(sa.len() >= 2 && sa.len() == sb.len(), "concat rank mismatch");
        assert_eq!(sa[0], sb[0]);
        assert_eq!(sa[2..], sb[2..]);
        let inner: usize = sa[2..].iter().product();
        let (ra, rb) = (sa[1] * inner, sb[1] * inner);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for s in 0..sa[0] {
            out.extend_from_slice(&va[s * ra..(s + 1) * ra]);
            out.extend_from_slice(&vb[s * rb..(s + 1) * rb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let grad = self.any_grad(&[a, b]);
        self.push(Tensor::new(shape, out), Op::Concat { a, b }, grad)
    }

    /// `[B, C, T]` to `[B, T]` summing over channels.
    pub fn sum_axis1(&mut self, x: Var) -> Var {
        let (bs, c, t) = shape3(self.value(x));
        let xv = self.value(x).data();
        let mut out = vec![0.0; bs * t];
        for s in 0..bs {
            let o = &mut out[s * t..(s + 1) * t];
            for ch in 0..c {
                let r = &xv[(s * c + ch) * t..(s * c + ch + 1) * t];
                for (a, b) in o.iter_mut().zip(r) {
                    *a += b;
                }
            }
        }
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(vec![bs, t], out), Op::SumAxis1(x), grad)
    }

    /// `[B, C, T]` to `[B * T, C]`: one row per frame.
    pub fn frames_to_rows(&mut self, x: Var) -> Var {
        let (bs, c, t) = shape3(self.value(x));
        let xv = self.value(x).data();
        let mut out = vec![0.0; bs * c * t];
        for s in 0..bs {
            for ch in 0..c {
                for tt in 0..t {
                    out[(s * t + tt) * c + ch] = xv[(s * c + ch) * t + tt];
                }
            }
        }
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(vec![bs * t, c], out), Op::FramesToRows(x), grad)
    }

    /// Gather slices along axis 0.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let shape = self.value(x).shape().to_vec();
        assert!(!shape.is_empty());
        let inner: usize = shape[1..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            assert!(i < shape[0], "row {i} out of range {}", shape[0]);
            out.extend_from_slice(&xv[i * inner..(i + 1) * inner]);
        }
        let mut oshape = shape;
        oshape[0] = idx.len();
        let grad = self.any_grad(&[x]);
        self.push(Tensor::new(oshape, out), Op::SelectRows { x, idx: idx.to_vec() }, grad)
    }

    /// Per-row softmax cross entropy: `logits: [N, K]`, one label per row, to `[N]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, k) = shape2(self.value(logits));
        assert_eq!(labels.len(), n, "one label per row");
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let row = &lv[r * k..(r + 1) * k];
            assert!(labels[r] < k, "label {} out of range {k}", labels[r]);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
            out.push(lse - row[labels[r]]);
        }
        let grad = self.any_grad(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push(Tensor::new(vec![n], out), op, grad)
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].grad {
            return Grads { grads };
        }
        grads[root.0] = Some(Tensor::new(self.value(root).shape().to_vec(), vec![1.0]));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), d));
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), d));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::Abs(a) => {
                let xa = self.value(*a);
                let d = gd
                    .iter()
                    .zip(xa.data())
                    .map(|(gv, x)| {
                        if *x > 0.0 {
                            *gv
                        } else if *x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(xa.shape().to_vec(), d));
            }
            Op::Silu(a) => {
                let xa = self.value(*a);
                let d = gd
                    .iter()
                    .zip(xa.data())
                    .map(|(gv, x)| {
                        let s = sigmoid(*x);
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(xa.shape().to_vec(), d));
            }
            Op::Softplus(a) => {
                let xa = self.value(*a);
                let d = gd.iter().zip(xa.data()).map(|(gv, x)| gv * sigmoid(*x)).collect();
                self.accumulate(grads, *a, Tensor::new(xa.shape().to_vec(), d));
            }
            Op::Sum(a) => {
                let xa = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(xa.shape(), gd[0]));
            }
            Op::Mean(a) => {
                let xa = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(xa.shape(), gd[0] / xa.len() as f64));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(shape));
            }
            Op::Conv1d { x, w, b, k, pad } => self.conv1d_backward(g, *x, *w, *b, *k, *pad, grads),
            Op::Linear { x, w, b } => {
                let (bs, i) = shape2(self.value(*x));
                let o = self.value(*w).dim(0);
                if self.wants(*x) {
                    let mut dx = vec![0.0; bs * i];
                    gemm(bs, o, i, gd, false, self.value(*w).data(), false, &mut dx, 0.0);
                    self.accumulate(grads, *x, Tensor::new(vec![bs, i], dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; o * i];
                    gemm(o, bs, i, gd, true, self.value(*x).data(), false, &mut dw, 0.0);
                    self.accumulate(grads, *w, Tensor::new(vec![o, i], dw));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; o];
                    for row in gd.chunks(o) {
                        for (a, v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![o], db));
                }
            }
            Op::DomainLinear { x, w, b, idx } => {
                let (bs, i) = shape2(self.value(*x));
                let (n, o, _) = shape3(self.value(*w));
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; bs * i];
                let mut dw = vec![0.0; n * o * i];
                let mut db = vec![0.0; n * o];
                for (s, &d) in idx.iter().enumerate() {
                    let xs = &xv[s * i..(s + 1) * i];
                    for r in 0..o {
                        let gv = gd[s * o + r];
                        db[d * o + r] += gv;
                        let wr = &wv[(d * o + r) * i..(d * o + r + 1) * i];
                        let dwr = &mut dw[(d * o + r) * i..(d * o + r + 1) * i];
                        for c in 0..i {
                            dx[s * i + c] += gv * wr[c];
                            dwr[c] += gv * xs[c];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, i], dx));
                self.accumulate(grads, *w, Tensor::new(vec![n, o, i], dw));
                self.accumulate(grads, *b, Tensor::new(vec![n, o], db));
            }
            Op::Pick { x, idx } => {
                let (bs, h) = shape2(self.value(*x));
                let mut dx = vec![0.0; bs * h];
                for (s, &j) in idx.iter().enumerate() {
                    dx[s * h + j] += gd[s];
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, h], dx));
            }
            Op::PoolTime { x, factor } => {
                let (bs, c, t) = shape3(self.value(*x));
                let to = t / factor;
                let inv = 1.0 / *factor as f64;
                let mut dx = vec![0.0; bs * c * t];
                for (row, d) in dx.chunks_mut(t).enumerate() {
                    for j in 0..to {
                        let gv = gd[row * to + j] * inv;
                        for v in &mut d[j * factor..(j + 1) * factor] {
                            *v = gv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, c, t], dx));
            }
            Op::MeanTime(x) => {
                let (bs, c, t) = shape3(self.value(*x));
                let mut dx = vec![0.0; bs * c * t];
                for (row, d) in dx.chunks_mut(t).enumerate() {
                    d.fill(gd[row] / t as f64);
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, c, t], dx));
            }
            Op::InstanceNorm { x, inv_std } => {
                let (bs, c, t) = shape3(self.value(*x));
                let y = node.value.data();
                let mut dx = vec![0.0; bs * c * t];
                for row in 0..bs * c {
                    let (ys, gs) = (&y[row * t..(row + 1) * t], &gd[row * t..(row + 1) * t]);
                    let mg = gs.iter().sum::<f64>() / t as f64;
                    let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / t as f64;
                    for j in 0..t {
                        dx[row * t + j] = inv_std[row] * (gs[j] - mg - ys[j] * mgy);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, c, t], dx));
            }
            Op::Modulate { x, gamma, beta } => {
                let (bs, c, t) = shape3(self.value(*x));
                let (xv, gv) = (self.value(*x).data(), self.value(*gamma).data());
                if self.wants(*x) {
                    let mut dx = vec![0.0; bs * c * t];
                    for (row, d) in dx.chunks_mut(t).enumerate() {
                        let s = 1.0 + gv[row];
                        for (j, v) in d.iter_mut().enumerate() {
                            *v = gd[row * t + j] * s;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![bs, c, t], dx));
                }
                let mut dg = vec![0.0; bs * c];
                let mut db = vec![0.0; bs * c];
                for row in 0..bs * c {
                    let (gs, xs) = (&gd[row * t..(row + 1) * t], &xv[row * t..(row + 1) * t]);
                    dg[row] = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
                    db[row] = gs.iter().sum();
                }
                self.accumulate(grads, *gamma, Tensor::new(vec![bs, c], dg));
                self.accumulate(grads, *beta, Tensor::new(vec![bs, c], db));
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.value(*a).shape().to_vec(), self.value(*b).shape().to_vec());
                let inner: usize = sa[2..].iter().product();
                let (ra, rb) = (sa[1] * inner, sb[1] * inner);
                let mut da = Vec::with_capacity(sa[0] * ra);
                let mut db = Vec::with_capacity(sa[0] * rb);
                for s in 0..sa[0] {
                    let base = s * (ra + rb);
                    da.extend_from_slice(&gd[base..base + ra]);
                    db.extend_from_slice(&gd[base + ra..base + ra + rb]);
                }
                if self.wants(*a) {
                    self.accumulate(grads, *a, Tensor::new(sa, da));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, Tensor::new(sb, db));
                }
            }
            Op::SumAxis1(x) => {
                let (bs, c, t) = shape3(self.value(*x));
                let mut dx = vec![0.0; bs * c * t];
                for s in 0..bs {
                    for ch in 0..c {
                        dx[(s * c + ch) * t..(s * c + ch + 1) * t].copy_from_slice(&gd[s * t..(s + 1) * t]);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, c, t], dx));
            }
            Op::FramesToRows(x) => {
                let (bs, c, t) = shape3(self.value(*x));
                let mut dx = vec![0.0; bs * c * t];
                for s in 0..bs {
                    for ch in 0..c {
                        for tt in 0..t {
                            dx[(s * c + ch) * t + tt] = gd[(s * t + tt) * c + ch];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![bs, c, t], dx));
            }
            Op::SelectRows { x, idx } => {
                let shape = self.value(*x).shape().to_vec();
                let inner: usize = shape[1..].iter().product();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..inner {
                        dx[src * inner + j] += gd[r * inner + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape, dx));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (n, k) = shape2(self.value(*logits));
                let mut d = probs.clone();
                for r in 0..n {
                    d[r * k + labels[r]] -= 1.0;
                    for v in &mut d[r * k..(r + 1) * k] {
                        *v *= gd[r];
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(vec![n, k], d));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(&self, g: &Tensor, x: Var, w: Var, b: Var, k: usize, pad: usize, grads: &mut [Option<Tensor>]) {
        let (bs, cin, t) = shape3(self.value(x));
        let cout = self.value(w).dim(0);
        let gd = g.data();
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let want_x = self.wants(x);
        let want_w = self.wants(w);
        if self.wants(b) {
            let mut db = vec![0.0; cout];
            for s in 0..bs {
                for (co, acc) in db.iter_mut().enumerate() {
                    *acc += gd[(s * cout + co) * t..(s * cout + co + 1) * t].iter().sum::<f64>();
                }
            }
            self.accumulate(grads, b, Tensor::new(vec![cout], db));
        }
        if !want_x && !want_w {
            return;
        }
        let ck = cin * k;
        let mut dw = vec![0.0; cout * ck];
        let mut dx = vec![0.0; if want_x { bs * cin * t } else { 0 }];
        let mut cols = vec![0.0; ck * t];
        let mut dcols = vec![0.0; ck * t];
        for s in 0..bs {
            let gs = &gd[s * cout * t..(s + 1) * cout * t];
            let xs = &xv[s * cin * t..(s + 1) * cin * t];
            if want_w {
                if k == 1 {
                    gemm(cout, t, ck, gs, false, xs, true, &mut dw, 1.0);
                } else {
                    im2col(xs, cin, t, k, pad, &mut cols);
                    gemm(cout, t, ck, gs, false, &cols, true, &mut dw, 1.0);
                }
            }
            if want_x {
                let dxs = &mut dx[s * cin * t..(s + 1) * cin * t];
                if k == 1 {
                    gemm(ck, cout, t, wv, true, gs, false, dxs, 1.0);
                } else {
                    gemm(ck, cout, t, wv, true, gs, false, &mut dcols, 0.0);
                    col2im_add(&dcols, cin, t, k, pad, dxs);
                }
            }
        }
        if want_w {
            self.accumulate(grads, w, Tensor::new(vec![cout, cin, k], dw));
        }
        if want_x {
            self.accumulate(grads, x, Tensor::new(vec![bs, cin, t], dx));
        }
    }
}

#[cfg(test)]
mod tests;
