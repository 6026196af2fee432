//! Training loops: MLE pretraining, critic pretraining, the off-policy
//! joint update, the oracle-mode unsupervised update, and the full
//! schedule with early stopping, learning-rate halving, and resumable
//! epoch-level state.
//!
//! Every stochastic stream derives its generator from (seed, stage tag,
//! epoch), so a resumed run replays the exact same randomness as an
//! uninterrupted one.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, StepOutcome, Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::corpus::{
    batch_iter, load_parallel, make_batch, synth_corpus, Batch, ParallelCorpus, Vocabulary, BOS,
    EOS, PAD,
};
use crate::error::{CoreError, Result};
use crate::metrics::corpus_bleu;
use crate::model::{min_q, soft_value, AgentGraph, CriticEnsemble, ModelConfig, Seq2SeqAgent};
use crate::par;
use crate::rewards::{
    assign_skills, discriminator_update, per_step_bleu_reward, unsup_reward, Discriminator,
    RewardMode, RewardSpec,
};
use crate::train::config::{Config, TrainConfig, TrainMode};
use crate::train::replay::{ReplayBuffer, Transition};
use crate::train::report::{EpochRow, TrainingReport, REPORT_HEADER};

const ATTN_MASK: f64 = -1e30;
const MAX_CONSECUTIVE_SKIPS: usize = 3;

/// Deterministic per-(stage, epoch) generator.
pub(crate) fn derive_rng(seed: u64, tag: &str, epoch: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= epoch.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = h.wrapping_mul(0x0000_0100_0000_01b3);
    ChaCha8Rng::seed_from_u64(h)
}

// ---------------------------------------------------------------------------
// Trajectory collection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrajStep {
    /// Sampled prefix before this action (defines s_t).
    pub prefix: Vec<usize>,
    pub action: usize,
    /// Post-rescale reward.
    pub reward: f64,
    pub done: bool,
    pub log_prob: f64,
    /// Skill label in unsupervised mode.
    pub skill: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub source: Vec<usize>,
    pub reference: Option<Vec<usize>>,
    pub steps: Vec<TrajStep>,
}

impl Trajectory {
    pub fn transitions(&self) -> Vec<Transition> {
        self.steps
            .iter()
            .map(|s| Transition {
                source: self.source.clone(),
                prefix: s.prefix.clone(),
                action: s.action,
                reward: s.reward,
                done: s.done,
                reference: self.reference.clone().unwrap_or_default(),
            })
            .collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Samples trajectories for a batch of sources and scores them with the
/// active reward engine. References are required in supervised mode; the
/// discriminator is required in unsupervised mode.
pub fn collect_trajectories(
    agent: &Seq2SeqAgent,
    sources: &[Vec<usize>],
    references: Option<&[Vec<usize>]>,
    spec: &RewardSpec,
    disc: Option<&Discriminator>,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    match spec.mode {
        RewardMode::SupervisedBleu if references.is_none() => {
            return Err(CoreError::InvalidArgument(
                "collect_trajectory: supervised reward needs references".into(),
            ));
        }
        RewardMode::UnsupervisedSkill if disc.is_none() => {
            return Err(CoreError::InvalidArgument(
                "collect_trajectory: skill reward needs a discriminator".into(),
            ));
        }
        _ => {}
    }
    let sampled = agent.sample_batch(sources, 1.0, rng)?;

    match spec.mode {
        RewardMode::SupervisedBleu => {
            let refs = references.unwrap();
            let scale = spec.alpha_for_rescale;
            let coeff = spec.length_penalty_coeff;
            let scored = par::map_indexed(&sampled.tokens, |i, actions| {
                supervised_steps(actions, &sampled.log_probs[i], &refs[i], coeff, scale)
            });
            Ok(scored
                .into_iter()
                .enumerate()
                .map(|(i, steps)| Trajectory {
                    source: sources[i].clone(),
                    reference: Some(refs[i].clone()),
                    steps,
                })
                .collect())
        }
        RewardMode::UnsupervisedSkill => {
            let disc = disc.unwrap();
            let pooled = agent.encode_pooled(sources)?;
            // one flat discriminator call over every (sentence, step) pair
            let mut rows = Vec::new();
            let mut actions = Vec::new();
            for (i, toks) in sampled.tokens.iter().enumerate() {
                for &a in toks {
                    rows.push(i);
                    actions.push(a);
                }
            }
            let skills = assign_skills(actions.len(), spec.skill_count, rng)?;
            let probs = if actions.is_empty() {
                Tensor::zeros(1, spec.skill_count)
            } else {
                let mut pooled_flat = Tensor::zeros(rows.len(), pooled.cols());
                for (r, &src_row) in rows.iter().enumerate() {
                    pooled_flat.row_mut(r).copy_from_slice(pooled.row(src_row));
                }
                disc.skill_probs(&pooled_flat, &actions)?
            };
            let mut flat = 0usize;
            let mut out = Vec::with_capacity(sources.len());
            for (i, toks) in sampled.tokens.iter().enumerate() {
                let mut steps = Vec::with_capacity(toks.len());
                let mut prefix: Vec<usize> = Vec::new();
                for (t, &a) in toks.iter().enumerate() {
                    let z = skills[flat];
                    let q = probs.at(flat, z);
                    let r = unsup_reward(q, spec.skill_count) / spec.alpha_for_rescale;
                    steps.push(TrajStep {
                        prefix: prefix.clone(),
                        action: a,
                        reward: r,
                        done: t + 1 == toks.len(),
                        log_prob: sampled.log_probs[i][t],
                        skill: Some(z),
                    });
                    prefix.push(a);
                    flat += 1;
                }
                out.push(Trajectory {
                    source: sources[i].clone(),
                    reference: None,
                    steps,
                });
            }
            Ok(out)
        }
    }
}

/// Single-sentence wrapper around [`collect_trajectories`].
pub fn collect_trajectory(
    agent: &Seq2SeqAgent,
    source: &[usize],
    reference: Option<&[usize]>,
    spec: &RewardSpec,
    disc: Option<&Discriminator>,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let refs = reference.map(|r| vec![r.to_vec()]);
    Ok(
        collect_trajectories(agent, &[source.to_vec()], refs.as_deref(), spec, disc, rng)?
            .pop()
            .unwrap(),
    )
}

fn supervised_steps(
    actions: &[usize],
    log_probs: &[f64],
    reference: &[usize],
    coeff: f64,
    scale: f64,
) -> Vec<TrajStep> {
    let mut steps = Vec::with_capacity(actions.len());
    let mut prefix: Vec<usize> = Vec::new();
    let mut content: Vec<usize> = Vec::new();
    for (t, &a) in actions.iter().enumerate() {
        let is_content = a != PAD && a != BOS && a != EOS;
        let reward = if is_content {
            content.push(a);
            per_step_bleu_reward(&content, reference, coeff) / scale
        } else {
            // non-content action: the hypothesis is unchanged, only the
            // per-step length penalty applies
            -crate::rewards::length_penalty(content.len(), reference.len(), coeff) / scale
        };
        steps.push(TrajStep {
            prefix: prefix.clone(),
            action: a,
            reward,
            done: t + 1 == actions.len(),
            log_prob: log_probs[t],
            skill: None,
        });
        prefix.push(a);
    }
    steps
}

// ---------------------------------------------------------------------------
// Batched prefix evaluation
// ---------------------------------------------------------------------------

/// Rows grouped by prefix length: the graph output [k, V] at that step,
/// with the original batch indices it covers.
struct PrefixGroup {
    out: Var,
    rows: Vec<usize>,
}

/// Teacher-forces `[BOS] + prefix` through the decoder and gathers each
/// row's per-action outputs at its own final position, differentiably.
fn prefix_outputs(
    g: &AgentGraph,
    conditioning: &[Vec<usize>],
    prefixes: &[Vec<usize>],
) -> Result<Vec<PrefixGroup>> {
    let (cond_padded, cond_lens) = crate::model::agent::pad_sources(conditioning);
    let enc = g.encode(&cond_padded, &cond_lens)?;
    let b = prefixes.len();
    let max_len = prefixes.iter().map(Vec::len).max().unwrap_or(0);
    let inputs: Vec<Vec<usize>> = (0..=max_len)
        .map(|t| {
            (0..b)
                .map(|row| {
                    if t == 0 {
                        BOS
                    } else {
                        prefixes[row].get(t - 1).copied().unwrap_or(PAD)
                    }
                })
                .collect()
        })
        .collect();
    let logits = g.forced_logits(&enc, &inputs)?;
    let mut groups = Vec::new();
    for (t, step_logits) in logits.iter().enumerate() {
        let rows: Vec<usize> = (0..b).filter(|&r| prefixes[r].len() == t).collect();
        if rows.is_empty() {
            continue;
        }
        groups.push(PrefixGroup {
            out: step_logits.select_rows(&rows)?,
            rows,
        });
    }
    Ok(groups)
}

/// Value-only variant: per-row output vectors in original order.
fn prefix_outputs_values(
    net: &Seq2SeqAgent,
    conditioning: &[Vec<usize>],
    prefixes: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let g = net.graph(&tape, 0);
    let groups = prefix_outputs(&g, conditioning, prefixes)?;
    let mut out = vec![Vec::new(); prefixes.len()];
    for grp in groups {
        let vals = grp.out.to_tensor();
        for (local, &row) in grp.rows.iter().enumerate() {
            out[row] = vals.row(local).to_vec();
        }
    }
    Ok(out)
}

/// PAD-masked softmax of raw logits.
fn masked_probs(logits: &[f64]) -> Vec<f64> {
    let mut row = logits.to_vec();
    row[PAD] = ATTN_MASK;
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}

// ---------------------------------------------------------------------------
// Critic training
// ---------------------------------------------------------------------------

/// y_i = r_i for terminal transitions, else r_i + gamma * v_next_i.
pub fn td_targets(rewards: &[f64], dones: &[bool], v_next: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(v_next)
        .map(|((&r, &d), &v)| if d { r } else { r + gamma * v })
        .collect()
}

/// Bellman targets for a batch: the next state's soft value under the
/// current policy, with the elementwise minimum of the two target critics.
fn bellman_targets(
    batch: &[&Transition],
    critics: &CriticEnsemble,
    agent: &Seq2SeqAgent,
    alpha: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    let mut v_next = vec![0.0; batch.len()];
    if !live.is_empty() {
        let cond: Vec<Vec<usize>> = live.iter().map(|&i| batch[i].reference.clone()).collect();
        let next_prefix: Vec<Vec<usize>> = live
            .iter()
            .map(|&i| {
                let mut p = batch[i].prefix.clone();
                p.push(batch[i].action);
                p
            })
            .collect();
        let sources: Vec<Vec<usize>> = live.iter().map(|&i| batch[i].source.clone()).collect();
        let q1 = prefix_outputs_values(&critics.target1, &cond, &next_prefix)?;
        let q2 = prefix_outputs_values(&critics.target2, &cond, &next_prefix)?;
        let pol = prefix_outputs_values(agent, &sources, &next_prefix)?;
        for (k, &i) in live.iter().enumerate() {
            let qmin = min_q(&q1[k], &q2[k])?;
            let probs = masked_probs(&pol[k]);
            v_next[i] = soft_value(&qmin, &probs, alpha);
        }
    }
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
    Ok(td_targets(&rewards, &dones, &v_next, gamma))
}

/// Mean squared Bellman error over the batch and both main critics
/// (evaluation only; the gradient path lives in [`sac_update`]).
pub fn critic_loss(
    batch: &[&Transition],
    critics: &CriticEnsemble,
    agent: &Seq2SeqAgent,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::InvalidArgument("critic_loss: empty batch".into()));
    }
    let y = bellman_targets(batch, critics, agent, alpha, gamma)?;
    let cond: Vec<Vec<usize>> = batch.iter().map(|t| t.reference.clone()).collect();
    let prefixes: Vec<Vec<usize>> = batch.iter().map(|t| t.prefix.clone()).collect();
    let mut total = 0.0;
    for main in [&critics.main1, &critics.main2] {
        let q = prefix_outputs_values(main, &cond, &prefixes)?;
        for (i, t) in batch.iter().enumerate() {
            let d = q[i][t.action] - y[i];
            total += d * d;
        }
    }
    Ok(total / (2 * batch.len()) as f64)
}

/// One gradient step of one main critic toward the shared targets y.
/// Returns the loss, or None when it was non-finite and skipped.
fn critic_main_step(
    main: &mut Seq2SeqAgent,
    opt: &mut Adam,
    batch: &[&Transition],
    y: &[f64],
    clip_norm: f64,
) -> Result<Option<f64>> {
    let cond: Vec<Vec<usize>> = batch.iter().map(|t| t.reference.clone()).collect();
    let prefixes: Vec<Vec<usize>> = batch.iter().map(|t| t.prefix.clone()).collect();
    let tape = Tape::new();
    let g = main.graph(&tape, 0);
    let groups = prefix_outputs(&g, &cond, &prefixes)?;
    let mut acc: Option<Var> = None;
    for grp in &groups {
        let actions: Vec<usize> = grp.rows.iter().map(|&r| batch[r].action).collect();
        let targets: Vec<f64> = grp.rows.iter().map(|&r| y[r]).collect();
        let q_pred = grp.out.pick_per_row(&actions)?;
        let diff = q_pred.sub(&tape.constant(Tensor::col_vector(targets)))?;
        let sq = diff.mul(&diff)?.sum_all();
        acc = Some(match acc {
            None => sq,
            Some(a) => a.add(&sq)?,
        });
    }
    let loss = acc.unwrap().scale(1.0 / batch.len() as f64);
    let loss_value = loss.item();
    if !loss_value.is_finite() {
        return Ok(None);
    }
    main.store.zero_grads();
    tape.backward_into(&loss, &mut main.store)?;
    main.store.clip_global_norm(clip_norm);
    match opt.step(&mut main.store) {
        StepOutcome::Applied => Ok(Some(loss_value)),
        StepOutcome::SkippedNonFinite => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Actor loss
// ---------------------------------------------------------------------------

/// Policy-improvement loss over a batch of states (transition prefixes):
/// mean of π(s)ᵀ (α log π(s) − Q_min(s)) with gradients flowing only
/// through π; Q_min is the elementwise minimum of the two main critics,
/// treated as constant.
fn actor_loss_graph(
    g: &AgentGraph,
    critics: &CriticEnsemble,
    batch: &[&Transition],
    alpha: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(CoreError::InvalidArgument("actor_loss: empty batch".into()));
    }
    let cond: Vec<Vec<usize>> = batch.iter().map(|t| t.reference.clone()).collect();
    let sources: Vec<Vec<usize>> = batch.iter().map(|t| t.source.clone()).collect();
    let prefixes: Vec<Vec<usize>> = batch.iter().map(|t| t.prefix.clone()).collect();
    let q1 = prefix_outputs_values(&critics.main1, &cond, &prefixes)?;
    let q2 = prefix_outputs_values(&critics.main2, &cond, &prefixes)?;

    let groups = prefix_outputs(g, &sources, &prefixes)?;
    let vocab = g.agent.cfg.tgt_vocab;
    let mut acc: Option<Var> = None;
    for grp in &groups {
        let k = grp.rows.len();
        let mut mask = Tensor::zeros(k, vocab);
        let mut qmin = Tensor::zeros(k, vocab);
        for (local, &row) in grp.rows.iter().enumerate() {
            mask.set(local, PAD, ATTN_MASK);
            let q = min_q(&q1[row], &q2[row])?;
            qmin.row_mut(local).copy_from_slice(&q);
        }
        let masked_logits = grp.out.add(&g.tape.constant(mask))?;
        let log_pi = masked_logits.log_softmax();
        let pi = masked_logits.softmax();
        // π ⊙ (α log π − Q)
        let inner = log_pi.scale(alpha).sub(&g.tape.constant(qmin))?;
        let term = pi.mul(&inner)?.sum_all();
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.unwrap().scale(1.0 / batch.len() as f64))
}

/// Value-only policy loss for tests and reporting.
pub fn actor_loss(
    agent: &Seq2SeqAgent,
    critics: &CriticEnsemble,
    batch: &[&Transition],
    alpha: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let g = agent.graph(&tape, 0);
    Ok(actor_loss_graph(&g, critics, batch, alpha)?.item())
}

// ---------------------------------------------------------------------------
// Joint off-policy update
// ---------------------------------------------------------------------------

/// Mutable bundle for the supervised joint stage.
pub struct SacState {
    pub agent: Seq2SeqAgent,
    pub critics: CriticEnsemble,
    pub buffer: ReplayBuffer,
    pub actor_opt: Adam,
    pub critic_opt1: Adam,
    pub critic_opt2: Adam,
    pub consecutive_skips: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SacStepStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mle_loss: f64,
    pub skipped: bool,
}

/// One joint iteration, in order: (1) critic step on a uniform buffer
/// sample, both mains toward the shared targets; (2) actor step minimizing
/// the policy loss plus lambda_mle times the MLE loss on a parallel batch;
/// (3) EMA update of both targets. Alpha stays fixed. A non-finite loss
/// skips the step; three consecutive skips abort.
pub fn sac_update(
    state: &mut SacState,
    mle_batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<SacStepStats> {
    if state.buffer.is_empty() {
        return Err(CoreError::InvalidArgument("sac_update: empty buffer".into()));
    }
    let sample: Vec<&Transition> = state.buffer.sample(cfg.batch_size, rng);

    // (1) critics
    let y = bellman_targets(&sample, &state.critics, &state.agent, cfg.alpha, cfg.gamma)?;
    let l1 = critic_main_step(
        &mut state.critics.main1,
        &mut state.critic_opt1,
        &sample,
        &y,
        cfg.clip_norm,
    )?;
    let l2 = critic_main_step(
        &mut state.critics.main2,
        &mut state.critic_opt2,
        &sample,
        &y,
        cfg.clip_norm,
    )?;

    // (2) actor
    let tape = Tape::new();
    let g = state.agent.graph(&tape, 0);
    let pol = actor_loss_graph(&g, &state.critics, &sample, cfg.alpha)?;
    let mle = state.agent.mle_loss_graph(&g, mle_batch)?;
    let total = pol.add(&mle.scale(cfg.lambda_mle))?;
    let (pol_value, mle_value) = (pol.item(), mle.item());
    let actor_applied = if total.item().is_finite() {
        state.agent.store.zero_grads();
        tape.backward_into(&total, &mut state.agent.store)?;
        state.agent.store.clip_global_norm(cfg.clip_norm);
        state.actor_opt.step(&mut state.agent.store) == StepOutcome::Applied
    } else {
        false
    };

    // (3) targets
    state.critics.ema_update();

    let skipped = l1.is_none() || l2.is_none() || !actor_applied;
    if skipped {
        state.consecutive_skips += 1;
        if state.consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
            return Err(CoreError::Diverged(format!(
                "{MAX_CONSECUTIVE_SKIPS} consecutive non-finite training steps"
            )));
        }
    } else {
        state.consecutive_skips = 0;
    }
    Ok(SacStepStats {
        critic_loss: match (l1, l2) {
            (Some(a), Some(b)) => (a + b) / 2.0,
            _ => f64::NAN,
        },
        actor_loss: pol_value,
        mle_loss: mle_value,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Oracle-mode unsupervised update
// ---------------------------------------------------------------------------

/// Actor update without critics: Monte-Carlo reward-to-go substitutes for
/// Q on the sampled action (other actions take a zero baseline), entering
/// the same policy loss; plus the mixed MLE term. Empty trajectories are a
/// no-op. With `mc_return_actor_update` off, falls back to plain policy
/// gradient on the reward-to-go.
pub fn oracle_mode_update(
    agent: &mut Seq2SeqAgent,
    opt: &mut Adam,
    trajectories: &[Trajectory],
    mle_batch: &Batch,
    cfg: &TrainConfig,
) -> Result<Option<SacStepStats>> {
    let total_steps: usize = trajectories.iter().map(|t| t.steps.len()).sum();
    if total_steps == 0 {
        return Ok(None);
    }
    // flatten to (source, prefix, action, reward-to-go)
    let mut sources = Vec::with_capacity(total_steps);
    let mut prefixes = Vec::with_capacity(total_steps);
    let mut actions = Vec::with_capacity(total_steps);
    let mut returns = Vec::with_capacity(total_steps);
    for traj in trajectories {
        let mut togo = 0.0;
        let mut rev: Vec<f64> = Vec::with_capacity(traj.steps.len());
        for step in traj.steps.iter().rev() {
            togo = step.reward + cfg.gamma * togo;
            rev.push(togo);
        }
        rev.reverse();
        for (step, q_hat) in traj.steps.iter().zip(rev) {
            sources.push(traj.source.clone());
            prefixes.push(step.prefix.clone());
            actions.push(step.action);
            returns.push(q_hat);
        }
    }

    let tape = Tape::new();
    let g = agent.graph(&tape, 0);
    let groups = prefix_outputs(&g, &sources, &prefixes)?;
    let vocab = agent.cfg.tgt_vocab;
    let mut acc: Option<Var> = None;
    for grp in &groups {
        let k = grp.rows.len();
        let grp_actions: Vec<usize> = grp.rows.iter().map(|&r| actions[r]).collect();
        let grp_returns =
            Tensor::col_vector(grp.rows.iter().map(|&r| returns[r]).collect());
        let mut mask = Tensor::zeros(k, vocab);
        for local in 0..k {
            mask.set(local, PAD, ATTN_MASK);
        }
        let masked_logits = grp.out.add(&g.tape.constant(mask))?;
        let log_pi = masked_logits.log_softmax();
        let term = if cfg.mc_return_actor_update {
            // π ⊙ (α log π − Q̂ e_{a_t}): entropy over all actions, the
            // return only on the sampled one
            let pi = masked_logits.softmax();
            let entropy_term = pi.mul(&log_pi)?.scale(cfg.alpha).sum_all();
            let value_term = pi
                .pick_per_row(&grp_actions)?
                .mul(&g.tape.constant(grp_returns))?
                .sum_all()
                .scale(-1.0);
            entropy_term.add(&value_term)?
        } else {
            // plain policy gradient: −log π(a_t) · Q̂_t
            log_pi
                .pick_per_row(&grp_actions)?
                .mul(&g.tape.constant(grp_returns))?
                .sum_all()
                .scale(-1.0)
        };
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    let pol = acc.unwrap().scale(1.0 / total_steps as f64);
    let mle = agent.mle_loss_graph(&g, mle_batch)?;
    let total = pol.add(&mle.scale(cfg.lambda_mle))?;
    let stats = SacStepStats {
        critic_loss: f64::NAN,
        actor_loss: pol.item(),
        mle_loss: mle.item(),
        skipped: !total.item().is_finite(),
    };
    if stats.skipped {
        return Ok(Some(stats));
    }
    agent.store.zero_grads();
    tape.backward_into(&total, &mut agent.store)?;
    agent.store.clip_global_norm(cfg.clip_norm);
    opt.step(&mut agent.store);
    Ok(Some(stats))
}

// ---------------------------------------------------------------------------
// Pretraining stages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

/// Early-stopped MLE pretraining; restores the best checkpoint (final
/// validation loss equals the minimum seen). `on_epoch` observes the model
/// after each epoch (report hooks).
#[allow(clippy::too_many_arguments)]
pub fn pretrain_actor(
    agent: &mut Seq2SeqAgent,
    opt: &mut Adam,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&Seq2SeqAgent, &PretrainEpoch) -> Result<()>,
) -> Result<Vec<PretrainEpoch>> {
    if train.is_empty() || valid.is_empty() {
        return Err(CoreError::InvalidArgument(
            "pretrain_actor: empty corpus or validation split".into(),
        ));
    }
    let mut log: Vec<PretrainEpoch> = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_params = agent.store.clone();
    let mut stale = 0usize;
    let mut stale_lr = 0usize;
    for epoch in 1..=cfg.max_actor_epochs {
        let mut rng = derive_rng(seed, "actor-pretrain", epoch as u64);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in batch_iter(train, src_vocab, tgt_vocab, cfg.batch_size, &mut rng) {
            let tape = Tape::new();
            let g = agent.graph(&tape, 0);
            let loss = agent.mle_loss_graph(&g, &batch)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "MLE pretraining diverged at epoch {epoch} (loss {value})"
                )));
            }
            agent.store.zero_grads();
            tape.backward_into(&loss, &mut agent.store)?;
            agent.store.clip_global_norm(cfg.clip_norm);
            opt.step(&mut agent.store);
            epoch_loss += value;
            batches += 1;
        }
        let valid_loss = validation_loss(agent, valid, src_vocab, tgt_vocab, cfg.batch_size)?;
        let entry = PretrainEpoch {
            epoch,
            train_loss: epoch_loss / batches as f64,
            valid_loss,
        };
        on_epoch(agent, &entry)?;
        log.push(entry);
        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_params = agent.store.clone();
            stale = 0;
            stale_lr = 0;
        } else {
            stale += 1;
            stale_lr += 1;
            if stale_lr >= cfg.lr_halving_patience {
                opt.halve_learning_rate();
                stale_lr = 0;
            }
        }
        if stale >= cfg.actor_patience {
            break;
        }
    }
    agent.store.copy_values_from(&best_params)?;
    Ok(log)
}

/// Mean per-token MLE loss over a held-out split.
pub fn validation_loss(
    agent: &Seq2SeqAgent,
    valid: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    batch_size: usize,
) -> Result<f64> {
    let indices: Vec<usize> = (0..valid.len()).collect();
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in indices.chunks(batch_size) {
        let batch = make_batch(valid, src_vocab, tgt_vocab, chunk);
        let n: usize = batch.target_len.iter().sum();
        total += agent.mle_loss(&batch)? * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Fills the buffer by sampling from the frozen actor and minimizes the
/// Bellman error for a fixed number of epochs, EMA-tracking the targets.
/// Returns per-epoch mean critic losses.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_critic(
    critics: &mut CriticEnsemble,
    copt1: &mut Adam,
    copt2: &mut Adam,
    agent: &Seq2SeqAgent,
    buffer: &mut ReplayBuffer,
    train: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    spec: &RewardSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut epoch_losses = Vec::new();
    for epoch in 1..=cfg.critic_pretrain_epochs {
        let mut rng = derive_rng(seed, "critic-pretrain", epoch as u64);
        let mut total = 0.0;
        let mut steps = 0usize;
        for batch in batch_iter(train, src_vocab, tgt_vocab, cfg.batch_size, &mut rng) {
            let (sources, refs) = batch_sentences(&batch);
            let trajs = collect_trajectories(agent, &sources, Some(&refs), spec, None, &mut rng)?;
            for traj in &trajs {
                for t in traj.transitions() {
                    buffer.push(t);
                }
            }
            let sample: Vec<&Transition> = buffer.sample(cfg.batch_size, &mut rng);
            let y = bellman_targets(&sample, critics, agent, cfg.alpha, cfg.gamma)?;
            let l1 = critic_main_step(&mut critics.main1, copt1, &sample, &y, cfg.clip_norm)?;
            let l2 = critic_main_step(&mut critics.main2, copt2, &sample, &y, cfg.clip_norm)?;
            critics.ema_update();
            if let (Some(a), Some(b)) = (l1, l2) {
                total += (a + b) / 2.0;
                steps += 1;
            }
        }
        if steps == 0 {
            return Err(CoreError::Diverged(
                "critic pretraining produced no finite steps".into(),
            ));
        }
        epoch_losses.push(total / steps as f64);
    }
    Ok(epoch_losses)
}

/// Unpadded id sentences of a batch (sources and content references
/// without the trailing EOS).
pub fn batch_sentences(batch: &Batch) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let sources: Vec<Vec<usize>> = batch
        .source
        .iter()
        .zip(&batch.source_len)
        .map(|(s, &l)| s[..l].to_vec())
        .collect();
    let refs: Vec<Vec<usize>> = batch
        .target
        .iter()
        .zip(&batch.target_len)
        .map(|(t, &l)| t[..l - 1].to_vec())
        .collect();
    (sources, refs)
}

// ---------------------------------------------------------------------------
// Full schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct ScheduleState {
    actor_done: bool,
    critic_done: bool,
    sac_epochs_done: usize,
    best_valid_bleu: Option<f64>,
    stale: usize,
    stale_lr: usize,
    finished: bool,
}

#[derive(Serialize, Deserialize)]
struct OptimBundle {
    actor_opt: Adam,
    critic_opt1: Option<Adam>,
    critic_opt2: Option<Adam>,
    disc_opt: Option<Adam>,
    buffer: Option<ReplayBuffer>,
}

/// Everything a finished (or halted) run reports back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainingReport,
    pub best_valid_bleu: Option<f64>,
    pub completed_sac_epochs: usize,
    pub agent: Seq2SeqAgent,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    /// Checkpoint files the schedule wrote.
    pub checkpoints: Vec<PathBuf>,
    pub halted: bool,
}

/// Runs the configured schedule end to end, writing checkpoints, the CSV
/// report, and resumable state into `out_dir`. `halt_after_sac_epoch`
/// stops the joint stage early (the hook behind resume testing and manual
/// interruption).
pub fn train_schedule(
    cfg: &Config,
    mode: TrainMode,
    out_dir: &Path,
    resume: bool,
    halt_after_sac_epoch: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate(mode)?;
    std::fs::create_dir_all(out_dir)?;
    let seed = cfg.seed;

    let (train, valid, _test) = load_data(cfg)?;
    let src_vocab = crate::corpus::build_vocab(&train.source, 1, None)?;
    let tgt_vocab = crate::corpus::build_vocab(&train.target, 1, None)?;
    save_vocab(out_dir, &src_vocab, &tgt_vocab)?;

    let model_cfg = ModelConfig {
        src_vocab: src_vocab.len(),
        tgt_vocab: tgt_vocab.len(),
        embed_dim: cfg.model.embed_dim,
        hidden_dim: cfg.model.hidden_dim,
        attn_dim: cfg.model.attn_dim,
    };

    let mut agent = Seq2SeqAgent::new(model_cfg, &mut derive_rng(seed, "agent-init", 0));
    let mut report = TrainingReport::default();
    let mut state = ScheduleState::default();
    let mut checkpoints = Vec::new();

    let state_path = out_dir.join("training_state.json");
    let report_path = out_dir.join("report.csv");
    if resume && state_path.exists() {
        state = serde_json::from_str(&std::fs::read_to_string(&state_path)?)?;
        report = read_report(&report_path)?;
    }

    let valid_sources: Vec<Vec<usize>> =
        valid.source.iter().map(|s| src_vocab.encode(s)).collect();
    let valid_refs: Vec<Vec<String>> = valid.target.clone();

    // --- stage 1: actor MLE pretraining ---
    let pretrained_path = out_dir.join("agent_pretrained.json");
    let mut actor_opt = Adam::new(
        &agent.store,
        cfg.train.lr_actor_pretrain,
        cfg.train.weight_decay,
    );
    if state.actor_done && pretrained_path.exists() {
        Checkpoint::load(&pretrained_path)?.restore_into(&mut agent.store)?;
    } else {
        let rows = std::cell::RefCell::new(Vec::new());
        pretrain_actor(
            &mut agent,
            &mut actor_opt,
            &train,
            &valid,
            &src_vocab,
            &tgt_vocab,
            &cfg.train,
            seed,
            |model, e| {
                let (bleu, entropy) =
                    valid_bleu_and_entropy(model, &valid_sources, &valid_refs, &tgt_vocab)?;
                rows.borrow_mut().push(EpochRow {
                    epoch: 0, // renumbered below
                    mle_loss: Some(e.train_loss),
                    critic_loss: None,
                    actor_loss: None,
                    mean_reward: None,
                    mean_entropy: Some(entropy),
                    valid_bleu: Some(bleu),
                });
                Ok(())
            },
        )?;
        for mut row in rows.into_inner() {
            row.epoch = report.rows.len() + 1;
            report.push(row);
        }
        save_store(&agent.store, &pretrained_path, "agent", model_cfg)?;
        checkpoints.push(pretrained_path.clone());
        state.actor_done = true;
        persist(&state_path, &state, &report_path, &report)?;
    }

    if mode == TrainMode::Mle {
        let best_path = out_dir.join("agent_best.json");
        save_store(&agent.store, &best_path, "agent", model_cfg)?;
        checkpoints.push(best_path);
        state.best_valid_bleu = report.best_valid_bleu();
        state.finished = true;
        persist(&state_path, &state, &report_path, &report)?;
        return Ok(TrainOutcome {
            best_valid_bleu: state.best_valid_bleu,
            completed_sac_epochs: 0,
            report,
            agent,
            src_vocab,
            tgt_vocab,
            checkpoints,
            halted: false,
        });
    }

    let rescale_alpha = if cfg.train.rescale_rewards && cfg.train.alpha > 0.0 {
        cfg.train.alpha
    } else {
        1.0
    };

    let halted = match mode {
        TrainMode::SacBleu => {
            let spec = RewardSpec::supervised(cfg.train.length_penalty, rescale_alpha);
            run_supervised_sac(SupervisedArgs {
                cfg,
                agent: &mut agent,
                spec,
                train: &train,
                valid_sources: &valid_sources,
                valid_refs: &valid_refs,
                src_vocab: &src_vocab,
                tgt_vocab: &tgt_vocab,
                model_cfg,
                out_dir,
                report: &mut report,
                state: &mut state,
                checkpoints: &mut checkpoints,
                halt_after: halt_after_sac_epoch,
            })?
        }
        TrainMode::SacUnsup => {
            let spec = RewardSpec::unsupervised(cfg.train.skill_count, rescale_alpha);
            run_unsupervised(UnsupArgs {
                cfg,
                agent: &mut agent,
                spec,
                train: &train,
                valid_sources: &valid_sources,
                valid_refs: &valid_refs,
                src_vocab: &src_vocab,
                tgt_vocab: &tgt_vocab,
                model_cfg,
                out_dir,
                report: &mut report,
                state: &mut state,
                checkpoints: &mut checkpoints,
                halt_after: halt_after_sac_epoch,
            })?
        }
        TrainMode::Mle => unreachable!(),
    };

    // the returned agent is the best checkpoint
    let best_path = out_dir.join("agent_best.json");
    if best_path.exists() {
        Checkpoint::load(&best_path)?.restore_into(&mut agent.store)?;
    }
    let state_final: ScheduleState =
        serde_json::from_str(&std::fs::read_to_string(&state_path)?)?;
    Ok(TrainOutcome {
        best_valid_bleu: state_final.best_valid_bleu,
        completed_sac_epochs: state_final.sac_epochs_done,
        report,
        agent,
        src_vocab,
        tgt_vocab,
        checkpoints,
        halted,
    })
}

struct SupervisedArgs<'a> {
    cfg: &'a Config,
    agent: &'a mut Seq2SeqAgent,
    spec: RewardSpec,
    train: &'a ParallelCorpus,
    valid_sources: &'a [Vec<usize>],
    valid_refs: &'a [Vec<String>],
    src_vocab: &'a Vocabulary,
    tgt_vocab: &'a Vocabulary,
    model_cfg: ModelConfig,
    out_dir: &'a Path,
    report: &'a mut TrainingReport,
    state: &'a mut ScheduleState,
    checkpoints: &'a mut Vec<PathBuf>,
    halt_after: Option<usize>,
}

fn run_supervised_sac(a: SupervisedArgs) -> Result<bool> {
    let cfg = a.cfg;
    let seed = cfg.seed;
    let t = &cfg.train;
    let out_dir = a.out_dir;

    // the critic encoder consumes the reference: its source vocabulary is
    // the target vocabulary
    let critic_cfg = ModelConfig {
        src_vocab: a.model_cfg.tgt_vocab,
        ..a.model_cfg
    };
    let mut critics =
        CriticEnsemble::new(critic_cfg, t.tau, &mut derive_rng(seed, "critic-init", 0));
    let mut copt1 = Adam::new(&critics.main1.store, t.lr_critic_pretrain, t.weight_decay);
    let mut copt2 = Adam::new(&critics.main2.store, t.lr_critic_pretrain, t.weight_decay);
    let mut buffer = ReplayBuffer::new(t.buffer_capacity);
    let mut actor_opt = Adam::new(&a.agent.store, t.lr_joint, t.weight_decay);

    let critic_paths = [
        out_dir.join("critic_main1.json"),
        out_dir.join("critic_main2.json"),
        out_dir.join("critic_target1.json"),
        out_dir.join("critic_target2.json"),
    ];
    let bundle_path = out_dir.join("optim_state.json");
    let last_agent_path = out_dir.join("agent_last.json");

    // --- stage 2: critic pretraining ---
    if a.state.critic_done && critic_paths.iter().all(|p| p.exists()) {
        restore_critics(&mut critics, &critic_paths)?;
        let bundle: OptimBundle = serde_json::from_str(&std::fs::read_to_string(&bundle_path)?)?;
        actor_opt = bundle.actor_opt;
        copt1 = bundle.critic_opt1.expect("critic optimizer state");
        copt2 = bundle.critic_opt2.expect("critic optimizer state");
        if let Some(b) = bundle.buffer {
            buffer = b;
        }
        if a.state.sac_epochs_done > 0 && last_agent_path.exists() {
            Checkpoint::load(&last_agent_path)?.restore_into(&mut a.agent.store)?;
        }
    } else {
        let losses = pretrain_critic(
            &mut critics, &mut copt1, &mut copt2, a.agent, &mut buffer, a.train, a.src_vocab,
            a.tgt_vocab, &a.spec, t, seed,
        )?;
        for loss in losses {
            a.report.push(EpochRow {
                epoch: a.report.rows.len() + 1,
                mle_loss: None,
                critic_loss: Some(loss),
                actor_loss: None,
                mean_reward: None,
                mean_entropy: None,
                valid_bleu: None,
            });
        }
        // joint-stage learning rates from here on
        copt1.learning_rate = t.lr_joint;
        copt2.learning_rate = t.lr_joint;
        a.state.critic_done = true;
        save_critics(&critics, &critic_paths, critic_cfg)?;
        save_bundle(
            &bundle_path,
            &actor_opt,
            Some(&copt1),
            Some(&copt2),
            None,
            Some(&buffer),
        )?;
        persist(
            &out_dir.join("training_state.json"),
            a.state,
            &out_dir.join("report.csv"),
            a.report,
        )?;
    }
    a.checkpoints.extend(critic_paths.iter().cloned());

    // --- stage 3: joint training ---
    let mut sac = SacState {
        agent: a.agent.clone(),
        critics,
        buffer,
        actor_opt,
        critic_opt1: copt1,
        critic_opt2: copt2,
        consecutive_skips: 0,
    };
    let best_path = out_dir.join("agent_best.json");
    if a.state.best_valid_bleu.is_none() && !best_path.exists() {
        save_store(&sac.agent.store, &best_path, "agent", a.model_cfg)?;
    }

    let mut halted = false;
    for epoch in (a.state.sac_epochs_done + 1)..=t.max_sac_epochs {
        let mut rng = derive_rng(seed, "sac-joint", epoch as u64);
        let mut reward_sum = 0.0;
        let mut reward_steps = 0usize;
        let mut critic_sum = 0.0;
        let mut actor_sum = 0.0;
        let mut mle_sum = 0.0;
        let mut batches = 0usize;
        for batch in batch_iter(a.train, a.src_vocab, a.tgt_vocab, t.batch_size, &mut rng) {
            let (sources, refs) = batch_sentences(&batch);
            let trajs = collect_trajectories(
                &sac.agent, &sources, Some(&refs), &a.spec, None, &mut rng,
            )?;
            for traj in &trajs {
                reward_sum += traj.total_reward();
                reward_steps += traj.steps.len();
                for tr in traj.transitions() {
                    sac.buffer.push(tr);
                }
            }
            let stats = sac_update(&mut sac, &batch, t, &mut rng)?;
            critic_sum += stats.critic_loss;
            actor_sum += stats.actor_loss;
            mle_sum += stats.mle_loss;
            batches += 1;
        }
        let (bleu, entropy) =
            valid_bleu_and_entropy(&sac.agent, a.valid_sources, a.valid_refs, a.tgt_vocab)?;
        a.report.push(EpochRow {
            epoch: a.report.rows.len() + 1,
            mle_loss: Some(mle_sum / batches as f64),
            critic_loss: Some(critic_sum / batches as f64),
            actor_loss: Some(actor_sum / batches as f64),
            mean_reward: Some(reward_sum / reward_steps.max(1) as f64),
            mean_entropy: Some(entropy),
            valid_bleu: Some(bleu),
        });
        a.state.sac_epochs_done = epoch;

        let improved = a.state.best_valid_bleu.is_none_or(|b| bleu > b);
        if improved {
            a.state.best_valid_bleu = Some(bleu);
            a.state.stale = 0;
            a.state.stale_lr = 0;
            save_store(&sac.agent.store, &best_path, "agent", a.model_cfg)?;
        } else {
            a.state.stale += 1;
            a.state.stale_lr += 1;
            if a.state.stale_lr >= t.lr_halving_patience {
                sac.actor_opt.halve_learning_rate();
                sac.critic_opt1.halve_learning_rate();
                sac.critic_opt2.halve_learning_rate();
                a.state.stale_lr = 0;
            }
        }

        save_store(&sac.agent.store, &last_agent_path, "agent", a.model_cfg)?;
        save_critics(&sac.critics, &critic_paths, critic_cfg)?;
        save_bundle(
            &bundle_path,
            &sac.actor_opt,
            Some(&sac.critic_opt1),
            Some(&sac.critic_opt2),
            None,
            Some(&sac.buffer),
        )?;
        let stop = a.state.stale >= t.sac_patience;
        a.state.finished = stop || epoch == t.max_sac_epochs;
        persist(
            &out_dir.join("training_state.json"),
            a.state,
            &out_dir.join("report.csv"),
            a.report,
        )?;
        if stop {
            break;
        }
        if a.halt_after == Some(epoch) && !a.state.finished {
            halted = true;
            break;
        }
    }
    a.checkpoints.push(best_path);
    *a.agent = sac.agent;
    Ok(halted)
}

struct UnsupArgs<'a> {
    cfg: &'a Config,
    agent: &'a mut Seq2SeqAgent,
    spec: RewardSpec,
    train: &'a ParallelCorpus,
    valid_sources: &'a [Vec<usize>],
    valid_refs: &'a [Vec<String>],
    src_vocab: &'a Vocabulary,
    tgt_vocab: &'a Vocabulary,
    model_cfg: ModelConfig,
    out_dir: &'a Path,
    report: &'a mut TrainingReport,
    state: &'a mut ScheduleState,
    checkpoints: &'a mut Vec<PathBuf>,
    halt_after: Option<usize>,
}

fn run_unsupervised(a: UnsupArgs) -> Result<bool> {
    let cfg = a.cfg;
    let seed = cfg.seed;
    let t = &cfg.train;
    let out_dir = a.out_dir;

    let mut disc = Discriminator::new(
        a.model_cfg.hidden_dim,
        a.model_cfg.tgt_vocab,
        t.skill_count,
        &mut derive_rng(seed, "disc-init", 0),
    )?;
    let mut disc_opt = Adam::new(&disc.store, t.lr_discriminator, t.weight_decay);
    let mut actor_opt = Adam::new(&a.agent.store, t.lr_joint, t.weight_decay);

    let disc_path = out_dir.join("discriminator.json");
    let bundle_path = out_dir.join("optim_state.json");
    let last_agent_path = out_dir.join("agent_last.json");
    let best_path = out_dir.join("agent_best.json");

    if a.state.sac_epochs_done > 0 && bundle_path.exists() {
        let bundle: OptimBundle = serde_json::from_str(&std::fs::read_to_string(&bundle_path)?)?;
        actor_opt = bundle.actor_opt;
        disc_opt = bundle.disc_opt.expect("discriminator optimizer state");
        Checkpoint::load(&disc_path)?.restore_into(&mut disc.store)?;
        if last_agent_path.exists() {
            Checkpoint::load(&last_agent_path)?.restore_into(&mut a.agent.store)?;
        }
    }
    if a.state.best_valid_bleu.is_none() && !best_path.exists() {
        save_store(&a.agent.store, &best_path, "agent", a.model_cfg)?;
    }

    let mut halted = false;
    for epoch in (a.state.sac_epochs_done + 1)..=t.max_sac_epochs {
        let mut rng = derive_rng(seed, "sac-unsup", epoch as u64);
        let mut reward_sum = 0.0;
        let mut reward_steps = 0usize;
        let mut actor_sum = 0.0;
        let mut mle_sum = 0.0;
        let mut disc_sum = 0.0;
        let mut batches = 0usize;
        for batch in batch_iter(a.train, a.src_vocab, a.tgt_vocab, t.batch_size, &mut rng) {
            let (sources, _) = batch_sentences(&batch);
            let trajs =
                collect_trajectories(a.agent, &sources, None, &a.spec, Some(&disc), &mut rng)?;
            for traj in &trajs {
                reward_sum += traj.total_reward();
                reward_steps += traj.steps.len();
            }
            if let Some(stats) = oracle_mode_update(a.agent, &mut actor_opt, &trajs, &batch, t)? {
                actor_sum += stats.actor_loss;
                mle_sum += stats.mle_loss;
            }
            // the discriminator trains on the labels just assigned
            let pooled = a.agent.encode_pooled(&sources)?;
            let mut rows = Vec::new();
            let mut acts = Vec::new();
            let mut skills = Vec::new();
            for (i, traj) in trajs.iter().enumerate() {
                for s in &traj.steps {
                    rows.push(i);
                    acts.push(s.action);
                    skills.push(s.skill.expect("skill labels in unsupervised mode"));
                }
            }
            if !acts.is_empty() {
                let mut flat = Tensor::zeros(rows.len(), pooled.cols());
                for (r, &src_row) in rows.iter().enumerate() {
                    flat.row_mut(r).copy_from_slice(pooled.row(src_row));
                }
                if let Some(dl) =
                    discriminator_update(&mut disc, &mut disc_opt, &flat, &acts, &skills, t.clip_norm)?
                {
                    disc_sum += dl;
                }
            }
            batches += 1;
        }
        let (bleu, entropy) =
            valid_bleu_and_entropy(a.agent, a.valid_sources, a.valid_refs, a.tgt_vocab)?;
        let _ = disc_sum; // discriminator loss has no column in the fixed header
        a.report.push(EpochRow {
            epoch: a.report.rows.len() + 1,
            mle_loss: Some(mle_sum / batches as f64),
            critic_loss: None,
            actor_loss: Some(actor_sum / batches as f64),
            mean_reward: Some(reward_sum / reward_steps.max(1) as f64),
            mean_entropy: Some(entropy),
            valid_bleu: Some(bleu),
        });
        a.state.sac_epochs_done = epoch;

        let improved = a.state.best_valid_bleu.is_none_or(|b| bleu > b);
        if improved {
            a.state.best_valid_bleu = Some(bleu);
            a.state.stale = 0;
            a.state.stale_lr = 0;
            save_store(&a.agent.store, &best_path, "agent", a.model_cfg)?;
        } else {
            a.state.stale += 1;
            a.state.stale_lr += 1;
            if a.state.stale_lr >= t.lr_halving_patience {
                actor_opt.halve_learning_rate();
                a.state.stale_lr = 0;
            }
        }

        save_store(&a.agent.store, &last_agent_path, "agent", a.model_cfg)?;
        save_store(
            &disc.store,
            &disc_path,
            "discriminator",
            a.model_cfg,
        )?;
        save_bundle(&bundle_path, &actor_opt, None, None, Some(&disc_opt), None)?;
        let stop = a.state.stale >= t.sac_patience;
        a.state.finished = stop || epoch == t.max_sac_epochs;
        persist(
            &out_dir.join("training_state.json"),
            a.state,
            &out_dir.join("report.csv"),
            a.report,
        )?;
        if stop {
            break;
        }
        if a.halt_after == Some(epoch) && !a.state.finished {
            halted = true;
            break;
        }
    }
    a.checkpoints.push(disc_path);
    a.checkpoints.push(best_path);
    Ok(halted)
}

// ---------------------------------------------------------------------------
// Schedule helpers
// ---------------------------------------------------------------------------

/// Loads (train, valid, test) from files or generates them from the synth
/// section. The test split may be empty for file-based configs without
/// test paths.
pub fn load_data(cfg: &Config) -> Result<(ParallelCorpus, ParallelCorpus, ParallelCorpus)> {
    if let Some(synth) = &cfg.data.synth {
        let out = synth_corpus(synth, cfg.seed)?;
        return Ok((out.train, out.valid, out.test));
    }
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| CoreError::Config(format!("missing data path: {what}")))
    };
    let train = load_parallel(
        &need(&cfg.data.train_source, "train_source")?,
        &need(&cfg.data.train_target, "train_target")?,
    )?;
    let valid = load_parallel(
        &need(&cfg.data.valid_source, "valid_source")?,
        &need(&cfg.data.valid_target, "valid_target")?,
    )?;
    let test = match (&cfg.data.test_source, &cfg.data.test_target) {
        (Some(s), Some(t)) => load_parallel(s, t)?,
        _ => ParallelCorpus::default(),
    };
    Ok((train, valid, test))
}

/// Greedy-decodes the validation sources; returns (corpus BLEU, mean
/// per-step policy entropy along the greedy paths).
pub fn valid_bleu_and_entropy(
    agent: &Seq2SeqAgent,
    valid_sources: &[Vec<usize>],
    valid_refs: &[Vec<String>],
    tgt_vocab: &Vocabulary,
) -> Result<(f64, f64)> {
    let (tokens, entropy) = agent.greedy_with_entropy(valid_sources)?;
    let hyps: Vec<Vec<String>> = tokens.iter().map(|t| tgt_vocab.decode(t)).collect();
    let bleu = corpus_bleu(&hyps, valid_refs)?;
    Ok((bleu, entropy))
}

fn save_store(
    store: &crate::autodiff::ParamStore,
    path: &Path,
    kind: &str,
    model_cfg: ModelConfig,
) -> Result<()> {
    Checkpoint::from_store(kind, serde_json::to_value(model_cfg)?, store).save(path)
}

fn save_critics(critics: &CriticEnsemble, paths: &[PathBuf; 4], cfg: ModelConfig) -> Result<()> {
    save_store(&critics.main1.store, &paths[0], "critic-main1", cfg)?;
    save_store(&critics.main2.store, &paths[1], "critic-main2", cfg)?;
    save_store(&critics.target1.store, &paths[2], "critic-target1", cfg)?;
    save_store(&critics.target2.store, &paths[3], "critic-target2", cfg)?;
    Ok(())
}

fn restore_critics(critics: &mut CriticEnsemble, paths: &[PathBuf; 4]) -> Result<()> {
    Checkpoint::load(&paths[0])?.restore_into(&mut critics.main1.store)?;
    Checkpoint::load(&paths[1])?.restore_into(&mut critics.main2.store)?;
    Checkpoint::load(&paths[2])?.restore_into(&mut critics.target1.store)?;
    Checkpoint::load(&paths[3])?.restore_into(&mut critics.target2.store)?;
    Ok(())
}

fn save_bundle(
    path: &Path,
    actor_opt: &Adam,
    copt1: Option<&Adam>,
    copt2: Option<&Adam>,
    disc_opt: Option<&Adam>,
    buffer: Option<&ReplayBuffer>,
) -> Result<()> {
    let bundle = OptimBundle {
        actor_opt: actor_opt.clone(),
        critic_opt1: copt1.cloned(),
        critic_opt2: copt2.cloned(),
        disc_opt: disc_opt.cloned(),
        buffer: buffer.cloned(),
    };
    std::fs::write(path, serde_json::to_string(&bundle)?)?;
    Ok(())
}

fn save_vocab(out_dir: &Path, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
    std::fs::write(out_dir.join("vocab_src.json"), serde_json::to_string(src)?)?;
    std::fs::write(out_dir.join("vocab_tgt.json"), serde_json::to_string(tgt)?)?;
    Ok(())
}

/// Loads the vocabulary pair a schedule saved next to its checkpoints.
pub fn load_vocab(out_dir: &Path) -> Result<(Vocabulary, Vocabulary)> {
    let mut src: Vocabulary =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("vocab_src.json"))?)?;
    let mut tgt: Vocabulary =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("vocab_tgt.json"))?)?;
    src.rebuild_index();
    tgt.rebuild_index();
    Ok((src, tgt))
}

fn persist(
    state_path: &Path,
    state: &ScheduleState,
    report_path: &Path,
    report: &TrainingReport,
) -> Result<()> {
    std::fs::write(state_path, serde_json::to_string_pretty(state)?)?;
    report.write_csv(report_path)?;
    Ok(())
}

fn read_report(path: &Path) -> Result<TrainingReport> {
    if !path.exists() {
        return Ok(TrainingReport::default());
    }
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != REPORT_HEADER {
                return Err(CoreError::Checkpoint(format!(
                    "unexpected report header: {line}"
                )));
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(CoreError::Checkpoint(format!(
                "bad report row at line {}",
                i + 1
            )));
        }
        let num = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(EpochRow {
            epoch: cells[0].parse().unwrap_or(i),
            mle_loss: num(cells[1]),
            critic_loss: num(cells[2]),
            actor_loss: num(cells[3]),
            mean_reward: num(cells[4]),
            mean_entropy: num(cells[5]),
            valid_bleu: num(cells[6]),
        });
    }
    Ok(TrainingReport { rows })
}
