//! Dynamic unsupervised skill reward.
//!
//! Each sampled word gets a skill label z drawn uniformly from {0..K-1}. A
//! bag-of-words discriminator predicts z from the pooled source encoding and
//! the word; the reward is log q(z | x, a) − log p(z) with uniform prior
//! p(z) = 1/K. Words that recur under many different z drive q toward the
//! prior and their reward toward zero, so frequent translations are
//! suppressed while novel ones keep a positive reward.

use rand::Rng;

use crate::autodiff::{Adam, ParamId, ParamStore, StepOutcome, Tape, Tensor, Var};
use crate::error::{CoreError, Result};

/// Probability floor before taking logs.
pub const PROB_CLAMP: f64 = 1e-8;

/// Two tanh hidden layers of width 100 by default. The action enters
/// through its own embedding row (equivalent to a one-hot input into the
/// first layer), so actions that never occur in an update batch keep their
/// initial, individually peaked skill posterior.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub store: ParamStore,
    w_src: ParamId,
    w_act: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
    pub source_dim: usize,
    pub vocab: usize,
    pub skill_count: usize,
    pub hidden: usize,
}

impl Discriminator {
    pub fn new(
        source_dim: usize,
        vocab: usize,
        skill_count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_hidden(source_dim, vocab, skill_count, 100, rng)
    }

    pub fn with_hidden(
        source_dim: usize,
        vocab: usize,
        skill_count: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if skill_count < 2 {
            return Err(CoreError::InvalidArgument(
                "discriminator: skill count must be >= 2".into(),
            ));
        }
        let mut store = ParamStore::new();
        // wide per-action init: unseen actions start with a peaked skill
        // posterior that only flattens once they appear in updates
        let w_src = store.register_xavier("disc.w_src", source_dim, hidden, rng);
        let w_act = store.register_uniform("disc.w_act", vocab, hidden, 0.8, rng);
        let b1 = store.register_zeros("disc.b1", 1, hidden);
        let w2 = store.register_xavier("disc.w2", hidden, hidden, rng);
        let b2 = store.register_zeros("disc.b2", 1, hidden);
        let w3 = store.register_uniform("disc.w3", hidden, skill_count, 0.35, rng);
        let b3 = store.register_zeros("disc.b3", 1, skill_count);
        Ok(Discriminator {
            store,
            w_src,
            w_act,
            b1,
            w2,
            b2,
            w3,
            b3,
            source_dim,
            vocab,
            skill_count,
            hidden,
        })
    }

    fn logits(&self, tape: &Tape, pooled: &Var, actions: &[usize]) -> Result<Var> {
        let w_src = tape.param(0, &self.store, self.w_src);
        let w_act = tape.param(0, &self.store, self.w_act);
        let b1 = tape.param(0, &self.store, self.b1);
        let w2 = tape.param(0, &self.store, self.w2);
        let b2 = tape.param(0, &self.store, self.b2);
        let w3 = tape.param(0, &self.store, self.w3);
        let b3 = tape.param(0, &self.store, self.b3);
        let h1 = pooled
            .matmul(&w_src)?
            .add(&w_act.embed(actions)?)?
            .add_bias(&b1)?
            .tanh();
        let h2 = h1.matmul(&w2)?.add_bias(&b2)?.tanh();
        h2.matmul(&w3)?.add_bias(&b3)
    }

    /// q(z | x, a) rows for a batch of (pooled source, action) pairs.
    pub fn skill_probs(&self, pooled: &Tensor, actions: &[usize]) -> Result<Tensor> {
        if pooled.rows() != actions.len() {
            return Err(CoreError::ShapeMismatch {
                op: "skill_probs",
                lhs: pooled.shape().to_vec(),
                rhs: vec![actions.len()],
            });
        }
        let tape = Tape::new();
        let p = tape.constant(pooled.clone());
        Ok(self.logits(&tape, &p, actions)?.softmax().to_tensor())
    }
}

/// r_z = log q(z | x, a) − log(1/K), with q clamped to [1e-8, 1].
pub fn unsup_reward(q: f64, skill_count: usize) -> f64 {
    let q = q.clamp(PROB_CLAMP, 1.0);
    q.ln() - (1.0 / skill_count as f64).ln()
}

/// One independent uniform skill draw per sampled token. K = 1 is rejected
/// (its reward is identically zero).
pub fn assign_skills(n_tokens: usize, skill_count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if skill_count < 2 {
        return Err(CoreError::InvalidArgument(
            "assign_skills: K must be >= 2".into(),
        ));
    }
    Ok((0..n_tokens)
        .map(|_| rng.random_range(0..skill_count))
        .collect())
}

/// One cross-entropy Adam step of the discriminator against the assigned
/// skill labels. Returns the loss, or None when a non-finite loss made the
/// step a no-op.
pub fn discriminator_update(
    disc: &mut Discriminator,
    opt: &mut Adam,
    pooled: &Tensor,
    actions: &[usize],
    skills: &[usize],
    clip_norm: f64,
) -> Result<Option<f64>> {
    if actions.is_empty() {
        return Err(CoreError::InvalidArgument(
            "discriminator_update: empty batch".into(),
        ));
    }
    if actions.len() != skills.len() || pooled.rows() != actions.len() {
        return Err(CoreError::ShapeMismatch {
            op: "discriminator_update",
            lhs: vec![pooled.rows(), actions.len()],
            rhs: vec![skills.len()],
        });
    }
    let tape = Tape::new();
    let p = tape.constant(pooled.clone());
    let logits = disc.logits(&tape, &p, actions)?;
    let picked = logits.log_softmax().pick_per_row(skills)?;
    let loss = picked.mean_rows().scale(-1.0);
    let loss_value = loss.item();
    if !loss_value.is_finite() {
        return Ok(None);
    }
    disc.store.zero_grads();
    tape.backward_into(&loss, &mut disc.store)?;
    disc.store.clip_global_norm(clip_norm);
    match opt.step(&mut disc.store) {
        StepOutcome::Applied => Ok(Some(loss_value)),
        StepOutcome::SkippedNonFinite => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_at_prior_is_zero_and_bounds_hold() {
        let k = 4;
        assert!(unsup_reward(0.25, k).abs() < 1e-15);
        assert!((unsup_reward(1.0, k) - (k as f64).ln()).abs() < 1e-12);
        for q in [0.0, 1e-12, 0.1, 0.3, 0.9, 1.0] {
            let r = unsup_reward(q, k);
            assert!(r <= (k as f64).ln() + 1e-15);
            assert!(r >= PROB_CLAMP.ln() - (1.0 / k as f64).ln() - 1e-15);
            if q > 0.0 && q < 1.0 {
                assert_eq!(r < 0.0, q.clamp(PROB_CLAMP, 1.0) < 0.25);
            }
        }
    }

    #[test]
    fn skill_assignment_uniform_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = 4;
        let n = 10_000;
        let draws = assign_skills(n, k, &mut rng).unwrap();
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) * n as f64).sqrt();
        for z in 0..k {
            let count = draws.iter().filter(|&&d| d == z).count() as f64;
            assert!(
                (count - n as f64 * p).abs() <= 3.0 * sigma,
                "skill {z}: {count}"
            );
        }
        assert!(assign_skills(10, 1, &mut rng).is_err());
    }

    #[test]
    fn skill_assignment_independent_of_token_identity() {
        // chi-square independence between 5 token classes and 4 skills;
        // draws don't see the token, so dependence would indicate a
        // broken assignment path. df = (5-1)(4-1) = 12; 0.99 quantile
        // 26.217.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let tokens: Vec<usize> = (0..5000).map(|_| rng.random_range(0..5)).collect();
        let skills = assign_skills(tokens.len(), 4, &mut rng).unwrap();
        let mut table = [[0f64; 4]; 5];
        for (&t, &z) in tokens.iter().zip(&skills) {
            table[t][z] += 1.0;
        }
        let n = tokens.len() as f64;
        let row: Vec<f64> = (0..5).map(|t| table[t].iter().sum()).collect();
        let col: Vec<f64> = (0..4).map(|z| (0..5).map(|t| table[t][z]).sum()).collect();
        let mut chi2 = 0.0;
        for t in 0..5 {
            for z in 0..4 {
                let expect = row[t] * col[z] / n;
                chi2 += (table[t][z] - expect).powi(2) / expect;
            }
        }
        assert!(chi2 < 26.217, "chi2 = {chi2}");
    }

    fn toy_disc(seed: u64) -> (Discriminator, Adam) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Discriminator::with_hidden(6, 12, 4, 32, &mut rng).unwrap();
        let opt = Adam::new(&d.store, 0.003, 0.0);
        (d, opt)
    }

    #[test]
    fn untrained_loss_near_uniform_cross_entropy() {
        let (mut d, mut opt) = toy_disc(3);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let b = 64;
        let mut pooled = Tensor::zeros(b, 6);
        for v in pooled.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let actions: Vec<usize> = (0..b).map(|_| rng.random_range(0..12)).collect();
        let skills = assign_skills(b, 4, &mut rng).unwrap();
        let loss = discriminator_update(&mut d, &mut opt, &pooled, &actions, &skills, 1.0)
            .unwrap()
            .unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 0.45, "loss {loss}");
    }

    #[test]
    fn overfits_a_fixed_mapping() {
        let (mut d, mut opt) = toy_disc(5);
        opt.learning_rate = 0.01;
        let pooled = Tensor::from_vec(2, 6, vec![0.3; 12]).unwrap();
        let actions = vec![3, 7];
        let skills = vec![1, 2];
        for _ in 0..400 {
            discriminator_update(&mut d, &mut opt, &pooled, &actions, &skills, 5.0).unwrap();
        }
        let probs = d.skill_probs(&pooled, &actions).unwrap();
        assert!(probs.at(0, 1) > 0.95, "q = {:?}", probs.row(0));
        assert!(probs.at(1, 2) > 0.95, "q = {:?}", probs.row(1));
    }

    #[test]
    fn uniformly_random_skills_drive_reward_to_zero() {
        // a token always paired with uniform z keeps q near the prior, so
        // its expected reward stays near zero
        let (mut d, mut opt) = toy_disc(9);
        opt.learning_rate = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pooled_row = vec![0.25, -0.5, 0.1, 0.9, -0.3, 0.0];
        for _ in 0..300 {
            let b = 32;
            let pooled =
                Tensor::from_vec(b, 6, pooled_row.repeat(b)).unwrap();
            let actions = vec![5usize; b];
            let skills = assign_skills(b, 4, &mut rng).unwrap();
            discriminator_update(&mut d, &mut opt, &pooled, &actions, &skills, 5.0).unwrap();
        }
        let pooled = Tensor::from_vec(1, 6, pooled_row).unwrap();
        let probs = d.skill_probs(&pooled, &[5]).unwrap();
        let expected_r: f64 = (0..4)
            .map(|z| 0.25 * unsup_reward(probs.at(0, z), 4))
            .sum();
        assert!(expected_r.abs() < 0.05, "E[r_z] = {expected_r}");
        // and it is never positive in expectation (it is -KL(prior || q))
        assert!(expected_r <= 1e-12);
    }
}
