//! Parameter sets and the Adam optimizer.

use crate::{Graph, Gradients, Real, Tensor, Var};

/// An ordered list of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Inserts every parameter into `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.leaf(t.clone(), requires_grad)).collect()
    }

    /// Collects the gradient of every bound parameter, zero where absent.
    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        assert_eq!(vars.len(), self.tensors.len(), "binding does not match parameter set");
        vars.iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// Flat view over all parameter values, in order.
    pub fn flat_values(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }

    /// Mutable access to the scalar at flat index `i`.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut T {
        for t in &mut self.tensors {
            if i < t.len() {
                return &mut t.data_mut()[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    /// FNV-1a hash over the raw bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut buf = Vec::with_capacity(8);
        for v in self.flat_values() {
            buf.clear();
            v.write_le(&mut buf);
            for &b in &buf {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }
}

/// Adam optimizer state for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, first_moment: zeros(), second_moment: zeros() }
    }

    /// Applies one bias-corrected Adam update.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64c(c.beta1);
        let b2 = T::from_f64c(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64c(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64c(1.0 - c.beta2.powi(t));
        let lr = T::from_f64c(c.lr);
        let eps = T::from_f64c(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.tensors_mut()[i];
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for parameter {i}");
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
