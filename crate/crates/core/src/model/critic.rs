//! Soft-Q critic ensemble: two main networks, two exponential-moving-average
//! target copies. Each network duplicates the agent architecture; in the
//! supervised setup the critic encoder consumes the reference sentence
//! rather than the source, and the decoder is teacher-forced over the
//! sampled prefix so Q(s, ·) shares the policy's sequential structure.

use rand::Rng;

use crate::autodiff::Tape;
use crate::corpus::BOS;
use crate::error::{CoreError, Result};
use crate::model::agent::{max_decode_len, ModelConfig, Seq2SeqAgent};

#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub main1: Seq2SeqAgent,
    pub main2: Seq2SeqAgent,
    pub target1: Seq2SeqAgent,
    pub target2: Seq2SeqAgent,
    /// EMA rate for target updates.
    pub tau: f64,
}

impl CriticEnsemble {
    /// Two independently initialized mains; targets start as exact copies.
    pub fn new(cfg: ModelConfig, tau: f64, rng: &mut impl Rng) -> Self {
        let main1 = Seq2SeqAgent::new(cfg, rng);
        let main2 = Seq2SeqAgent::new(cfg, rng);
        let target1 = main1.clone();
        let target2 = main2.clone();
        CriticEnsemble {
            main1,
            main2,
            target1,
            target2,
            tau,
        }
    }

    /// target <- tau * main + (1 - tau) * target for both pairs. The only
    /// operation that may move target parameters.
    pub fn ema_update(&mut self) {
        self.target1.store.ema_from(&self.main1.store, self.tau);
        self.target2.store.ema_from(&self.main2.store, self.tau);
    }

    pub fn targets_match_mains_bitwise(&self) -> bool {
        self.target1.store.values_bit_equal(&self.main1.store)
            && self.target2.store.values_bit_equal(&self.main2.store)
    }
}

/// Per-action Q values of one critic network for the state defined by
/// `prefix` under `conditioning` (the reference in supervised mode). The
/// decoder is fed BOS followed by the prefix; the final step's outputs are
/// the Q values.
pub fn q_values(
    critic: &Seq2SeqAgent,
    conditioning: &[usize],
    prefix: &[usize],
) -> Result<Vec<f64>> {
    if conditioning.is_empty() {
        return Err(CoreError::InvalidArgument(
            "q_values: empty conditioning sentence".into(),
        ));
    }
    if prefix.len() >= max_decode_len(conditioning.len()) {
        return Err(CoreError::InvalidArgument(format!(
            "q_values: prefix length {} at or past the decode bound {}",
            prefix.len(),
            max_decode_len(conditioning.len())
        )));
    }
    let tape = Tape::new();
    let g = critic.graph(&tape, 0);
    let enc = g.encode(&[conditioning.to_vec()], &[conditioning.len()])?;
    let mut inputs = vec![vec![BOS]];
    inputs.extend(prefix.iter().map(|&t| vec![t]));
    let logits = g.forced_logits(&enc, &inputs)?;
    let q = logits.last().unwrap().value().data().to_vec();
    Ok(q)
}

/// Elementwise minimum of the two critics' outputs (double Q-learning).
pub fn min_q(q1: &[f64], q2: &[f64]) -> Result<Vec<f64>> {
    if q1.len() != q2.len() {
        return Err(CoreError::ShapeMismatch {
            op: "min_q",
            lhs: vec![q1.len()],
            rhs: vec![q2.len()],
        });
    }
    Ok(q1.iter().zip(q2).map(|(a, b)| a.min(*b)).collect())
}

/// Soft state value: V = Σ_a π(a) (Q(a) − α log π(a)), an exact expectation
/// over the action set. Zero-probability actions contribute 0.
pub fn soft_value(q: &[f64], policy_probs: &[f64], alpha: f64) -> f64 {
    debug_assert_eq!(q.len(), policy_probs.len());
    q.iter()
        .zip(policy_probs)
        .map(|(&qa, &pa)| {
            if pa > 0.0 {
                pa * (qa - alpha * pa.ln())
            } else {
                0.0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            src_vocab: 10,
            tgt_vocab: 10,
            embed_dim: 8,
            hidden_dim: 9,
            attn_dim: 7,
        }
    }

    #[test]
    fn q_vector_spans_the_vocabulary_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ens = CriticEnsemble::new(small_cfg(), 0.005, &mut rng);
        let q1 = q_values(&ens.main1, &[4, 5, 6], &[7, 8]).unwrap();
        assert_eq!(q1.len(), 10);
        assert!(q1.iter().all(|v| v.is_finite()));
        let q2 = q_values(&ens.main1, &[4, 5, 6], &[7, 8]).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn q_values_rejects_empty_conditioning_and_long_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ens = CriticEnsemble::new(small_cfg(), 0.005, &mut rng);
        assert!(q_values(&ens.main1, &[], &[1]).is_err());
        let long: Vec<usize> = vec![4; max_decode_len(2)];
        assert!(q_values(&ens.main1, &[4, 5], &long).is_err());
    }

    #[test]
    fn min_q_cases() {
        assert_eq!(min_q(&[2.0, 5.0], &[3.0, 4.0]).unwrap(), vec![2.0, 4.0]);
        let q = vec![1.0, -2.0, 0.5];
        assert_eq!(min_q(&q, &q).unwrap(), q);
        let a = vec![1.0, 7.0];
        let b = vec![2.0, 3.0];
        for (m, (x, y)) in min_q(&a, &b).unwrap().iter().zip(a.iter().zip(&b)) {
            assert!(m <= x && m <= y);
        }
        assert!(min_q(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn soft_value_cases() {
        // constant Q, uniform π over V actions: V = c + α ln V
        let v = 8;
        let q = vec![3.0; v];
        let pi = vec![1.0 / v as f64; v];
        let alpha = 0.7;
        let got = soft_value(&q, &pi, alpha);
        assert!((got - (3.0 + alpha * (v as f64).ln())).abs() < 1e-12);

        // α = 0: plain expectation
        let q = vec![1.0, 2.0, 4.0];
        let pi = vec![0.2, 0.3, 0.5];
        assert!((soft_value(&q, &pi, 0.0) - (0.2 + 0.6 + 2.0)).abs() < 1e-12);

        // one-hot policy: entropy contributes nothing
        let pi = vec![0.0, 1.0, 0.0];
        assert!((soft_value(&q, &pi, 2.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ema_update_cases_and_isolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ens = CriticEnsemble::new(small_cfg(), 1.0, &mut rng);
        assert!(ens.targets_match_mains_bitwise());

        // perturb mains, tau = 1 snaps targets to mains
        for id in ens.main1.store.ids().collect::<Vec<_>>() {
            for v in ens.main1.store.value_mut(id).data_mut() {
                *v += 0.25;
            }
        }
        ens.ema_update();
        assert!(ens.targets_match_mains_bitwise());

        // tau = 0 leaves targets untouched
        ens.tau = 0.0;
        for id in ens.main1.store.ids().collect::<Vec<_>>() {
            for v in ens.main1.store.value_mut(id).data_mut() {
                *v += 1.0;
            }
        }
        let before = ens.target1.clone();
        ens.ema_update();
        assert!(ens.target1.store.values_bit_equal(&before.store));

        // tau = 0.005, main 1, target 0 -> 0.005
        let mut a = crate::autodiff::ParamStore::new();
        a.register("x", crate::autodiff::Tensor::scalar(1.0));
        let mut t = crate::autodiff::ParamStore::new();
        t.register("x", crate::autodiff::Tensor::scalar(0.0));
        t.ema_from(&a, 0.005);
        assert!((t.value(t.lookup("x").unwrap()).item() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn repeated_ema_converges_geometrically() {
        let mut main = crate::autodiff::ParamStore::new();
        main.register("x", crate::autodiff::Tensor::scalar(1.0));
        let mut target = crate::autodiff::ParamStore::new();
        target.register("x", crate::autodiff::Tensor::scalar(0.0));
        let tau = 0.25;
        let mut prev_gap = 1.0;
        for k in 1..=20 {
            target.ema_from(&main, tau);
            let gap = (1.0 - target.value(target.lookup("x").unwrap()).item()).abs();
            assert!(gap <= prev_gap + 1e-15);
            assert!((gap - (1.0 - tau).powi(k)).abs() < 1e-12);
            prev_gap = gap;
        }
    }
}
