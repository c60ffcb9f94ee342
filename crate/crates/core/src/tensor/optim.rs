//! Named parameter storage with gradient accumulators and the Adam update.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use super::Tensor;

/// Handle to one parameter in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// All trainable parameters of a model, with per-parameter Adam moments.
#[derive(Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        ParamId(self.params.len() - 1)
    }

    /// Matrix initialized uniformly in +-sqrt(6 / (rows + cols)).
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(&[rows, cols], data))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// LSTM cell weights `<prefix>.w` `[4h x (input + h)]` and bias
    /// `<prefix>.b` with the forget-gate slice set to 1.0.
    pub fn lstm(
        &mut self,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> (ParamId, ParamId) {
        let w = self.xavier(&format!("{prefix}.w"), 4 * hidden, input + hidden, rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = self.add(&format!("{prefix}.b"), bias);
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    /// Insertion-ordered `(name, value)` walk; the order is stable and drives
    /// checkpoint layout.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Multiplies every accumulated gradient by `s` (batch-mean scaling).
    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            for g in p.grad.data_mut().iter_mut() {
                *g *= s;
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let grad = self.params[id.0].grad.data_mut();
        assert_eq!(grad.len(), g.len(), "gradient length mismatch for {}", self.params[id.0].name);
        for (gi, c) in grad.iter_mut().zip(g) {
            *gi += c;
        }
    }

    pub fn grad_global_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in {param:?}; step aborted")]
    NonFinite { param: String },
}

/// Adam with bias correction and optional global-norm gradient clipping.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip: Option<f64>,
    t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: Some(5.0), t: 0 }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients. A non-finite
    /// gradient aborts before touching any parameter or moment.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<(), OptimError> {
        for p in &params.params {
            if p.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(OptimError::NonFinite { param: p.name.clone() });
            }
        }
        let scale = match self.clip {
            Some(cap) => {
                let norm = params.grad_global_norm();
                if norm > cap {
                    cap / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in &mut params.params {
            let n = p.value.len();
            for i in 0..n {
                let g = p.grad.data()[i] * scale;
                let m = self.beta1 * p.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.v.data()[i] + (1.0 - self.beta2) * g * g;
                p.m.data_mut()[i] = m;
                p.v.data_mut()[i] = v;
                let update = lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                p.value.data_mut()[i] -= update;
            }
        }
        Ok(())
    }
}
