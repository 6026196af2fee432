//! Gated recurrent unit cell on the tape.
//!
//! Gate equations (Cho-style):
//!   z = σ(x·Wz + h·Uz + bz)
//!   r = σ(x·Wr + h·Ur + br)
//!   ĥ = tanh(x·Wn + (r ⊙ h)·Un + bn)
//!   h' = z ⊙ h + (1 − z) ⊙ ĥ
//!
//! z and r share a fused [in, 2H] / [H, 2H] weight pair.

use rand::Rng;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_zr: ParamId,
    pub u_zr: ParamId,
    pub b_zr: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        GruParams {
            w_zr: store.register_xavier(&format!("{prefix}.w_zr"), input_dim, 2 * hidden_dim, rng),
            u_zr: store.register_xavier(&format!("{prefix}.u_zr"), hidden_dim, 2 * hidden_dim, rng),
            b_zr: store.register_zeros(&format!("{prefix}.b_zr"), 1, 2 * hidden_dim),
            w_n: store.register_xavier(&format!("{prefix}.w_n"), input_dim, hidden_dim, rng),
            u_n: store.register_xavier(&format!("{prefix}.u_n"), hidden_dim, hidden_dim, rng),
            b_n: store.register_zeros(&format!("{prefix}.b_n"), 1, hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    pub fn leaf(&self, tape: &Tape, store_key: u32, store: &ParamStore) -> GruLeaves {
        GruLeaves {
            w_zr: tape.param(store_key, store, self.w_zr),
            u_zr: tape.param(store_key, store, self.u_zr),
            b_zr: tape.param(store_key, store, self.b_zr),
            w_n: tape.param(store_key, store, self.w_n),
            u_n: tape.param(store_key, store, self.u_n),
            b_n: tape.param(store_key, store, self.b_n),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Per-tape leafed copy of the cell parameters; create once per forward
/// pass and reuse across timesteps.
pub struct GruLeaves {
    w_zr: Var,
    u_zr: Var,
    b_zr: Var,
    w_n: Var,
    u_n: Var,
    b_n: Var,
    hidden_dim: usize,
}

impl GruLeaves {
    /// One step: input `[B, in]`, hidden `[B, H]` -> new hidden `[B, H]`.
    /// Rejects non-finite inputs.
    pub fn step(&self, input: &Var, hidden: &Var) -> Result<Var> {
        if !input.value().is_finite() || !hidden.value().is_finite() {
            return Err(CoreError::NonFinite {
                context: "gru_cell input".into(),
            });
        }
        let h = self.hidden_dim;
        let zr = input
            .matmul(&self.w_zr)?
            .add(&hidden.matmul(&self.u_zr)?)?
            .add_bias(&self.b_zr)?
            .sigmoid();
        let z = zr.slice_cols(0, h)?;
        let r = zr.slice_cols(h, h)?;
        let candidate = input
            .matmul(&self.w_n)?
            .add(&r.mul(hidden)?.matmul(&self.u_n)?)?
            .add_bias(&self.b_n)?
            .tanh();
        // h' = z ⊙ h + (1 − z) ⊙ ĥ  =  ĥ + z ⊙ (h − ĥ)
        candidate.add(&z.mul(&hidden.sub(&candidate)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop reference for the gate equations, independent of the
    /// tape path.
    fn reference_step(
        store: &ParamStore,
        p: &GruParams,
        x: &[f64],
        h: &[f64],
    ) -> Vec<f64> {
        let hd = p.hidden_dim;
        let w_zr = store.value(p.w_zr);
        let u_zr = store.value(p.u_zr);
        let b_zr = store.value(p.b_zr);
        let w_n = store.value(p.w_n);
        let u_n = store.value(p.u_n);
        let b_n = store.value(p.b_n);
        let gate = |j: usize| {
            let mut s = b_zr.at(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w_zr.at(i, j);
            }
            for (i, hi) in h.iter().enumerate() {
                s += hi * u_zr.at(i, j);
            }
            sigmoid(s)
        };
        let z: Vec<f64> = (0..hd).map(gate).collect();
        let r: Vec<f64> = (hd..2 * hd).map(gate).collect();
        let mut out = vec![0.0; hd];
        for j in 0..hd {
            let mut s = b_n.at(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w_n.at(i, j);
            }
            for i in 0..hd {
                s += r[i] * h[i] * u_n.at(i, j);
            }
            let cand = s.tanh();
            out[j] = z[j] * h[j] + (1.0 - z[j]) * cand;
        }
        out
    }

    #[test]
    fn zero_everything_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GruParams::init(&mut store, "g", 3, 4, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let tape = Tape::new();
        let leaves = p.leaf(&tape, 0, &store);
        let x = tape.constant(Tensor::zeros(1, 3));
        let h = tape.constant(Tensor::zeros(1, 4));
        let out = leaves.step(&x, &h).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let mut store = ParamStore::new();
            let p = GruParams::init(&mut store, "g", 5, 6, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..6).map(|_| rng.random_range(-0.9..0.9)).collect();
            let expect = reference_step(&store, &p, &x, &h);

            let tape = Tape::new();
            let leaves = p.leaf(&tape, 0, &store);
            let xv = tape.constant(Tensor::from_vec(1, 5, x).unwrap());
            let hv = tape.constant(Tensor::from_vec(1, 6, h).unwrap());
            let out = leaves.step(&xv, &hv).unwrap();
            for (a, b) in out.value().data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn hidden_stays_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = GruParams::init(&mut store, "g", 4, 8, &mut rng);
        let tape = Tape::new();
        let leaves = p.leaf(&tape, 0, &store);
        let mut h = tape.constant(Tensor::zeros(2, 8));
        for _ in 0..20 {
            let mut x = Tensor::zeros(2, 4);
            for v in x.data_mut() {
                *v = rng.random_range(-3.0..3.0);
            }
            h = leaves.step(&tape.constant(x), &h).unwrap();
            assert!(h.value().data().iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = GruParams::init(&mut store, "g", 2, 3, &mut rng);
        let tape = Tape::new();
        let leaves = p.leaf(&tape, 0, &store);
        let x = tape.constant(Tensor::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap());
        let h = tape.constant(Tensor::zeros(1, 3));
        assert!(leaves.step(&x, &h).is_err());
    }
}
