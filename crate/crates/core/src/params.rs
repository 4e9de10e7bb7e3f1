//! Named parameter collections and the layers built on them.

use crate::autodiff::{Grads, Graph, Var};
use crate::tensor::Tensor;
use rand::Rng;
use sha2::{Digest, Sha256};
use std::ops::Index;

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Register every tensor on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(self.values.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
    }

    /// Gradient per tensor (zeros where nothing flowed).
    pub fn collect_grads(&self, grads: &Grads, bound: &Bound) -> Vec<Tensor> {
        bound
            .0
            .iter()
            .zip(&self.values)
            .map(|(v, t)| grads.get_or_zeros(*v, t))
            .collect()
    }

    /// Replace values by name-matched tensors, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if other.names != self.names {
            return Err("parameter names differ".into());
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(format!("shape {:?} vs {:?}", a.shape(), b.shape()));
            }
            *a = b.clone();
        }
        Ok(())
    }

    /// SHA-256 of every value's bit pattern, for freeze and schedule checks.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.values) {
            h.update(n.as_bytes());
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Graph handles for one [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<Var>);

impl Index<usize> for Bound {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )
}

/// Same-length 1-D convolution over frames.
#[derive(Clone, Debug)]
pub struct Conv1d {
    w: usize,
    b: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let w = ps.push(format!("{name}.w"), uniform(rng, &[cout, cin, k], bound));
        let b = ps.push(format!("{name}.b"), uniform(rng, &[cout], bound));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.conv1d(x, p[self.w], p[self.b])
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, rng: &mut R, name: &str, i: usize, o: usize) -> Self {
        let bound = 1.0 / (i as f64).sqrt();
        let w = ps.push(format!("{name}.w"), uniform(rng, &[o, i], bound));
        let b = ps.push(format!("{name}.b"), uniform(rng, &[o], bound));
        Self { w, b }
    }

    /// A linear layer starting at exactly zero output.
    pub fn zeros(ps: &mut ParamStore, name: &str, i: usize, o: usize) -> Self {
        let w = ps.push(format!("{name}.w"), Tensor::zeros(&[o, i]));
        let b = ps.push(format!("{name}.b"), Tensor::zeros(&[o]));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.linear(x, p[self.w], p[self.b])
    }

    pub fn weight_index(&self) -> usize {
        self.w
    }

    pub fn bias_index(&self) -> usize {
        self.b
    }
}

/// One linear head per domain; each sample is routed by its domain code.
#[derive(Clone, Debug)]
pub struct DomainLinear {
    w: usize,
    b: usize,
    domains: usize,
}

impl DomainLinear {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        rng: &mut R,
        name: &str,
        domains: usize,
        i: usize,
        o: usize,
    ) -> Self {
        let bound = 1.0 / (i as f64).sqrt();
        let w = ps.push(format!("{name}.w"), uniform(rng, &[domains, o, i], bound));
        let b = ps.push(format!("{name}.b"), uniform(rng, &[domains, o], bound));
        Self { w, b, domains }
    }

    pub fn domains(&self) -> usize {
        self.domains
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, codes: &[usize]) -> Var {
        g.domain_linear(x, p[self.w], p[self.b], codes)
    }
}
