use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameter bundle with gradient accumulators. Iteration order is
/// registration order, which keeps initialization, optimizer sweeps, and
/// checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.rows(), value.cols());
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        ParamId(id)
    }

    /// Xavier-uniform initialized parameter: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
    pub fn register_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.random_range(-a..a);
        }
        self.register(name, t)
    }

    pub fn register_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.register(name, Tensor::zeros(rows, cols))
    }

    /// Uniform U(-scale, scale) init, for layers that want a spread other
    /// than Xavier's.
    pub fn register_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
        self.register(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let grad = &mut self.params[id.0].grad;
        debug_assert!(grad.same_shape(g));
        for (dst, src) in grad.data_mut().iter_mut().zip(g.data()) {
            *dst += src;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_global_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// If the global gradient norm exceeds `max_norm`, rescale every gradient
    /// by `max_norm / norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        assert!(max_norm > 0.0, "max_norm must be positive");
        let norm = self.grad_global_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for p in &mut self.params {
                for v in p.grad.data_mut() {
                    *v *= scale;
                }
            }
        }
        norm
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.is_finite())
    }

    /// Copies values from `other`, which must have identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(CoreError::InvalidArgument(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            if dst.name != src.name || !dst.value.same_shape(&src.value) {
                return Err(CoreError::InvalidArgument(format!(
                    "parameter layout mismatch at {}",
                    dst.name
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// target <- tau * main + (1 - tau) * target, parameter-wise.
    pub fn ema_from(&mut self, main: &ParamStore, tau: f64) {
        assert_eq!(self.params.len(), main.params.len());
        for (tgt, src) in self.params.iter_mut().zip(main.params.iter()) {
            for (t, m) in tgt.value.data_mut().iter_mut().zip(src.value.data()) {
                *t = tau * m + (1.0 - tau) * *t;
            }
        }
    }

    /// Bitwise equality of all values (for target-isolation checks).
    pub fn values_bit_equal(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|(a, b)| {
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
