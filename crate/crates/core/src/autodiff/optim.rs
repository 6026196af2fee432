use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN/inf; parameters and moments untouched.
    SkippedNonFinite,
}

/// Adam with bias correction and decoupled weight decay. Moments are laid
/// out in parameter-store order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let first_moment = store
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        let second_moment = first_moment.clone();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn halve_learning_rate(&mut self) {
        self.learning_rate *= 0.5;
    }

    /// One update from the accumulated gradients in `store`. Skips entirely
    /// (including the step counter) if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> StepOutcome {
        if !store.grads_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, id) in store.ids().enumerate().map(|(i, id)| (i, id)).collect::<Vec<_>>() {
            let grad = store.grad(id).clone();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for ((mv, vv), g) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(grad.data())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
            }
            let value = store.value_mut(id);
            for ((p, mv), vv) in value
                .data_mut()
                .iter_mut()
                .zip(m.data())
                .zip(v.data())
            {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                // decoupled weight decay, applied outside the moments
                *p -= self.learning_rate * self.weight_decay * *p;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        StepOutcome::Applied
    }
}
