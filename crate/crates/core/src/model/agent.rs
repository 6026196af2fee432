//! The sequence-to-sequence network.
//!
//! Encoder: source embedding into two stacked GRU layers, one state per
//! source position. Decoder: conditional GRU — layer 1 consumes the previous
//! target embedding, additive attention over encoder states runs between the
//! layers, layer 2 consumes the context vector. A deep-output layer combines
//! decoder state, context, and previous embedding; logits project onto the
//! target embedding table (input and output embeddings share storage).
//! Decoder layers initialize from the mean encoder state through a learned
//! tanh projection.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{GruLeaves, GruParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{Batch, BOS, EOS, PAD};
use crate::error::{CoreError, Result};

const ATTN_MASK: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
}

impl ModelConfig {
    /// Dimensions used for the full-size model: embeddings 200, hidden 320.
    pub fn full_size(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim: 200,
            hidden_dim: 320,
            attn_dim: 320,
        }
    }

    /// Small dimensions for desk-scale synthetic tasks.
    pub fn desk_size(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim: 24,
            hidden_dim: 32,
            attn_dim: 32,
        }
    }
}

/// Hard decoding bound: twice the source length plus five.
pub fn max_decode_len(src_len: usize) -> usize {
    2 * src_len + 5
}

#[derive(Debug, Clone)]
struct AgentIds {
    src_emb: ParamId,
    /// Shared with the output projection.
    tgt_emb: ParamId,
    enc1: GruParams,
    enc2: GruParams,
    init1_w: ParamId,
    init1_b: ParamId,
    init2_w: ParamId,
    init2_b: ParamId,
    dec1: GruParams,
    dec2: GruParams,
    attn_ws: ParamId,
    attn_uh: ParamId,
    attn_v: ParamId,
    out_wh: ParamId,
    out_wc: ParamId,
    out_we: ParamId,
    out_b: ParamId,
    out_bias: ParamId,
}

/// Policy network; the same structure serves as a Q network when its
/// per-action outputs are read as values instead of logits.
#[derive(Debug, Clone)]
pub struct Seq2SeqAgent {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    ids: AgentIds,
}

impl Seq2SeqAgent {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let (e, h, a) = (cfg.embed_dim, cfg.hidden_dim, cfg.attn_dim);
        let ids = AgentIds {
            src_emb: store.register_xavier("src_emb", cfg.src_vocab, e, rng),
            tgt_emb: store.register_xavier("tgt_emb", cfg.tgt_vocab, e, rng),
            enc1: GruParams::init(&mut store, "enc1", e, h, rng),
            enc2: GruParams::init(&mut store, "enc2", h, h, rng),
            init1_w: store.register_xavier("init1.w", h, h, rng),
            init1_b: store.register_zeros("init1.b", 1, h),
            init2_w: store.register_xavier("init2.w", h, h, rng),
            init2_b: store.register_zeros("init2.b", 1, h),
            dec1: GruParams::init(&mut store, "dec1", e, h, rng),
            dec2: GruParams::init(&mut store, "dec2", h, h, rng),
            attn_ws: store.register_xavier("attn.ws", h, a, rng),
            attn_uh: store.register_xavier("attn.uh", h, a, rng),
            attn_v: store.register_xavier("attn.v", a, 1, rng),
            out_wh: store.register_xavier("out.wh", h, e, rng),
            out_wc: store.register_xavier("out.wc", h, e, rng),
            out_we: store.register_xavier("out.we", e, e, rng),
            out_b: store.register_zeros("out.b", 1, e),
            out_bias: store.register_zeros("out.bias", 1, cfg.tgt_vocab),
        };
        Seq2SeqAgent { cfg, store, ids }
    }

    /// Leafs every parameter onto `tape` once; reuse the graph across the
    /// whole forward pass.
    pub fn graph<'a>(&'a self, tape: &Tape, store_key: u32) -> AgentGraph<'a> {
        let s = &self.store;
        AgentGraph {
            agent: self,
            tape: tape.clone(),
            src_emb: tape.param(store_key, s, self.ids.src_emb),
            tgt_emb: tape.param(store_key, s, self.ids.tgt_emb),
            enc1: self.ids.enc1.leaf(tape, store_key, s),
            enc2: self.ids.enc2.leaf(tape, store_key, s),
            init1_w: tape.param(store_key, s, self.ids.init1_w),
            init1_b: tape.param(store_key, s, self.ids.init1_b),
            init2_w: tape.param(store_key, s, self.ids.init2_w),
            init2_b: tape.param(store_key, s, self.ids.init2_b),
            dec1: self.ids.dec1.leaf(tape, store_key, s),
            dec2: self.ids.dec2.leaf(tape, store_key, s),
            attn_ws: tape.param(store_key, s, self.ids.attn_ws),
            attn_uh: tape.param(store_key, s, self.ids.attn_uh),
            attn_v: tape.param(store_key, s, self.ids.attn_v),
            out_wh: tape.param(store_key, s, self.ids.out_wh),
            out_wc: tape.param(store_key, s, self.ids.out_wc),
            out_we: tape.param(store_key, s, self.ids.out_we),
            out_b: tape.param(store_key, s, self.ids.out_b),
            out_bias: tape.param(store_key, s, self.ids.out_bias),
        }
    }

    /// Mean encoder state per sentence, evaluated without gradients. This is
    /// the discriminator's source representation.
    pub fn encode_pooled(&self, sources: &[Vec<usize>]) -> Result<Tensor> {
        let (padded, lens) = pad_sources(sources);
        let tape = Tape::new();
        let g = self.graph(&tape, 0);
        let enc = g.encode(&padded, &lens)?;
        let pooled = g.mean_encoder_state(&enc)?;
        Ok(pooled.to_tensor())
    }

    /// One encoder state per source position for a single sentence.
    pub fn encode_states(&self, source: &[usize]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let g = self.graph(&tape, 0);
        let enc = g.encode(&[source.to_vec()], &[source.len()])?;
        Ok(enc
            .states
            .iter()
            .map(|s| s.value().data().to_vec())
            .collect())
    }

    /// Stochastic decoding at the given temperature. Returned log-probs are
    /// the log-softmax of the emitted (PAD-masked, temperature-scaled)
    /// logits at each chosen id. Sequences end with EOS or at the per-row
    /// length bound.
    pub fn sample_batch(
        &self,
        sources: &[Vec<usize>],
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Sampled> {
        if temperature <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "sample: temperature must be positive, got {temperature}"
            )));
        }
        self.rollout(sources, Some(temperature), rng)
    }

    /// Deterministic argmax decoding.
    pub fn greedy_batch(&self, sources: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        let mut dummy = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self.rollout(sources, None, &mut dummy)?.tokens)
    }

    /// Greedy decoding plus the mean per-step entropy of the policy
    /// distribution along the greedy path.
    pub fn greedy_with_entropy(&self, sources: &[Vec<usize>]) -> Result<(Vec<Vec<usize>>, f64)> {
        let mut dummy = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let s = self.rollout(sources, None, &mut dummy)?;
        Ok((s.tokens, s.mean_entropy))
    }

    fn rollout(
        &self,
        sources: &[Vec<usize>],
        temperature: Option<f64>,
        rng: &mut impl Rng,
    ) -> Result<Sampled> {
        let mut dec =
            StepDecoder::start(self, sources)?.with_temperature(temperature.unwrap_or(1.0));
        let b = sources.len();
        let limits: Vec<usize> = sources.iter().map(|s| max_decode_len(s.len())).collect();
        let max_limit = limits.iter().copied().max().unwrap_or(0);

        let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut log_probs: Vec<Vec<f64>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut prev = vec![BOS; b];
        let mut entropy_sum = 0.0;
        let mut entropy_steps = 0usize;

        for t in 0..max_limit {
            let out = dec.step(&prev)?;
            let dist = &out.masked_log_probs;
            for row in 0..b {
                if done[row] {
                    prev[row] = PAD;
                    continue;
                }
                let lp_row = dist.row(row);
                entropy_sum -= lp_row
                    .iter()
                    .map(|&lp| {
                        let p = lp.exp();
                        if p > 0.0 {
                            p * lp
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>();
                entropy_steps += 1;
                let choice = if t + 1 >= limits[row] {
                    EOS // per-row hard bound
                } else {
                    match temperature {
                        None => argmax(lp_row),
                        Some(_) => sample_from_log_probs(lp_row, rng),
                    }
                };
                tokens[row].push(choice);
                log_probs[row].push(lp_row[choice]);
                if choice == EOS {
                    done[row] = true;
                }
                prev[row] = choice;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(Sampled {
            tokens,
            log_probs,
            mean_entropy: if entropy_steps == 0 {
                0.0
            } else {
                entropy_sum / entropy_steps as f64
            },
            temperature: temperature.unwrap_or(0.0),
        })
    }

    /// Teacher-forced mean negative log-likelihood per non-PAD target
    /// position, as a differentiable node on the caller's graph.
    pub fn mle_loss_graph(&self, g: &AgentGraph, batch: &Batch) -> Result<Var> {
        if batch.source.is_empty() {
            return Err(CoreError::InvalidArgument("mle_loss: empty batch".into()));
        }
        let enc = g.encode(&batch.source, &batch.source_len)?;
        let b = batch.source.len();
        let t_max = batch.target[0].len();
        // decoder inputs: BOS then the reference shifted right
        let inputs: Vec<Vec<usize>> = (0..t_max)
            .map(|t| {
                (0..b)
                    .map(|row| if t == 0 { BOS } else { batch.target[row][t - 1] })
                    .collect()
            })
            .collect();
        let logits = g.forced_logits(&enc, &inputs)?;

        let total_tokens: usize = batch.target_len.iter().sum();
        let mut acc: Option<Var> = None;
        for (t, step_logits) in logits.iter().enumerate() {
            let targets: Vec<usize> = (0..b).map(|row| batch.target[row][t]).collect();
            let mask: Vec<f64> = (0..b)
                .map(|row| if t < batch.target_len[row] { 1.0 } else { 0.0 })
                .collect();
            let picked = step_logits.log_softmax().pick_per_row(&targets)?;
            let masked = picked.mul(&g.tape.constant(Tensor::col_vector(mask)))?;
            let s = masked.sum_all();
            acc = Some(match acc {
                None => s,
                Some(a) => a.add(&s)?,
            });
        }
        Ok(acc.unwrap().scale(-1.0 / total_tokens as f64))
    }

    /// Value-only MLE loss.
    pub fn mle_loss(&self, batch: &Batch) -> Result<f64> {
        let tape = Tape::new();
        let g = self.graph(&tape, 0);
        Ok(self.mle_loss_graph(&g, batch)?.item())
    }

    pub fn save(&self, path: &std::path::Path, kind: &str) -> Result<()> {
        crate::checkpoint::Checkpoint::from_store(kind, serde_json::to_value(self.cfg)?, &self.store)
            .save(path)
    }

    /// Rebuilds the network from a checkpoint written by [`Seq2SeqAgent::save`]
    /// (the model dimensions live in the checkpoint metadata).
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = crate::checkpoint::Checkpoint::load(path)?;
        let cfg: ModelConfig = serde_json::from_value(ckpt.meta.clone()).map_err(|e| {
            CoreError::Checkpoint(format!("checkpoint lacks model dimensions: {e}"))
        })?;
        let mut agent = Seq2SeqAgent::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        ckpt.restore_into(&mut agent.store)?;
        Ok(agent)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_from_log_probs(lp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.len() - 1
}

pub(crate) fn pad_sources(sources: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let lens: Vec<usize> = sources.iter().map(Vec::len).collect();
    let max = lens.iter().copied().max().unwrap_or(0);
    let padded = sources
        .iter()
        .map(|s| {
            let mut p = s.clone();
            p.resize(max, PAD);
            p
        })
        .collect();
    (padded, lens)
}

/// Sampled batch output.
#[derive(Debug, Clone)]
pub struct Sampled {
    /// Per sentence: chosen action ids, ending with EOS unless the length
    /// bound cut the rollout.
    pub tokens: Vec<Vec<usize>>,
    /// Log-probability of each chosen action under the sampling
    /// distribution.
    pub log_probs: Vec<Vec<f64>>,
    /// Mean per-step policy entropy over all generated steps.
    pub mean_entropy: f64,
    pub temperature: f64,
}

/// Per-tape leafed parameters plus the forward-pass builders.
pub struct AgentGraph<'a> {
    pub agent: &'a Seq2SeqAgent,
    pub tape: Tape,
    src_emb: Var,
    tgt_emb: Var,
    enc1: GruLeaves,
    enc2: GruLeaves,
    init1_w: Var,
    init1_b: Var,
    init2_w: Var,
    init2_b: Var,
    dec1: GruLeaves,
    dec2: GruLeaves,
    attn_ws: Var,
    attn_uh: Var,
    attn_v: Var,
    out_wh: Var,
    out_wc: Var,
    out_we: Var,
    out_b: Var,
    out_bias: Var,
}

/// Encoder output: one layer-2 state per source position, pre-computed
/// attention keys, and the additive PAD mask.
#[derive(Clone)]
pub struct EncoderStates {
    pub states: Vec<Var>,
    att_keys: Vec<Var>,
    mask: Tensor,
    pub src_len: Vec<usize>,
    pub batch: usize,
}

/// Decoder recurrent state; holds a reference to the encoder states it
/// attends over.
pub struct DecoderState {
    pub s1: Var,
    pub s2: Var,
    pub t: usize,
    pub enc: Rc<EncoderStates>,
    pub max_len: usize,
}

/// One decode step's outputs.
pub struct StepOutput {
    pub logits: Var,
    pub attn: Var,
    /// log-softmax of PAD-masked (and temperature-scaled, when sampling)
    /// logits; plain Tensor since choice happens outside the graph.
    pub masked_log_probs: Tensor,
}

impl<'a> AgentGraph<'a> {
    /// Encodes a padded id batch; rejects out-of-vocabulary ids and empty
    /// sentences.
    pub fn encode(&self, sources: &[Vec<usize>], lens: &[usize]) -> Result<EncoderStates> {
        let b = sources.len();
        if b == 0 || lens.iter().any(|&l| l == 0) {
            return Err(CoreError::InvalidArgument(
                "encode: empty source sequence".into(),
            ));
        }
        let t_max = sources[0].len();
        for s in sources {
            if s.len() != t_max {
                return Err(CoreError::InvalidArgument(
                    "encode: sources must be padded to equal length".into(),
                ));
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= self.agent.cfg.src_vocab) {
                return Err(CoreError::InvalidArgument(format!(
                    "encode: id {bad} outside source vocabulary of size {}",
                    self.agent.cfg.src_vocab
                )));
            }
        }
        let h_dim = self.agent.cfg.hidden_dim;
        let mut h1 = self.tape.constant(Tensor::zeros(b, h_dim));
        let mut h2 = self.tape.constant(Tensor::zeros(b, h_dim));
        let mut states = Vec::with_capacity(t_max);
        let mut att_keys = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let ids: Vec<usize> = sources.iter().map(|s| s[t]).collect();
            let x = self.src_emb.embed(&ids)?;
            h1 = self.enc1.step(&x, &h1)?;
            h2 = self.enc2.step(&h1, &h2)?;
            att_keys.push(h2.matmul(&self.attn_uh)?);
            states.push(h2.clone());
        }
        let mut mask = Tensor::zeros(b, t_max);
        for (row, &len) in lens.iter().enumerate() {
            for t in len..t_max {
                mask.set(row, t, ATTN_MASK);
            }
        }
        Ok(EncoderStates {
            states,
            att_keys,
            mask,
            src_len: lens.to_vec(),
            batch: b,
        })
    }

    /// Mean of the valid (non-PAD) encoder states per sentence.
    pub fn mean_encoder_state(&self, enc: &EncoderStates) -> Result<Var> {
        let t_max = enc.states.len();
        let mut w = Tensor::zeros(enc.batch, t_max);
        for (row, &len) in enc.src_len.iter().enumerate() {
            for t in 0..len {
                w.set(row, t, 1.0 / len as f64);
            }
        }
        let weights = self.tape.constant(w);
        let refs: Vec<&Var> = enc.states.iter().collect();
        self.tape.attn_mix(&weights, &refs)
    }

    /// Fresh decoder state: both layers initialize from the mean encoder
    /// state through a learned tanh projection.
    pub fn init_state(&self, enc: Rc<EncoderStates>) -> Result<DecoderState> {
        let pooled = self.mean_encoder_state(&enc)?;
        let s1 = pooled
            .matmul(&self.init1_w)?
            .add_bias(&self.init1_b)?
            .tanh();
        let s2 = pooled
            .matmul(&self.init2_w)?
            .add_bias(&self.init2_b)?
            .tanh();
        let max_len = enc.src_len.iter().map(|&l| max_decode_len(l)).max().unwrap();
        Ok(DecoderState {
            s1,
            s2,
            t: 0,
            enc,
            max_len,
        })
    }

    /// One decoder step: previous token ids in, per-action logits and
    /// attention weights out. Rejects stepping past the decode bound.
    pub fn step(&self, state: &DecoderState, prev: &[usize]) -> Result<(Var, Var, DecoderState)> {
        if state.t >= state.max_len {
            return Err(CoreError::InvalidArgument(format!(
                "decode_step: past the maximum decode length {}",
                state.max_len
            )));
        }
        let enc = &state.enc;
        let emb = self.tgt_emb.embed(prev)?;
        let s1 = self.dec1.step(&emb, &state.s1)?;

        // additive attention between the decoder layers
        let query = s1.matmul(&self.attn_ws)?;
        let mut scores = Vec::with_capacity(enc.states.len());
        for key in &enc.att_keys {
            scores.push(query.add(key)?.tanh().matmul(&self.attn_v)?);
        }
        let score_refs: Vec<&Var> = scores.iter().collect();
        let stacked = self.tape.concat_cols(&score_refs)?;
        let masked = stacked.add(&self.tape.constant(enc.mask.clone()))?;
        let attn = masked.softmax();
        let state_refs: Vec<&Var> = enc.states.iter().collect();
        let context = self.tape.attn_mix(&attn, &state_refs)?;

        let s2 = self.dec2.step(&context, &state.s2)?;

        // deep output onto the shared embedding
        let readout = s2
            .matmul(&self.out_wh)?
            .add(&context.matmul(&self.out_wc)?)?
            .add(&emb.matmul(&self.out_we)?)?
            .add_bias(&self.out_b)?
            .tanh();
        let logits = readout.matmul_tb(&self.tgt_emb)?.add_bias(&self.out_bias)?;

        Ok((
            logits,
            attn,
            DecoderState {
                s1,
                s2,
                t: state.t + 1,
                enc: Rc::clone(enc),
                max_len: state.max_len,
            },
        ))
    }

    /// Teacher-forced sweep: feeds `inputs[t]` (one id per row) at step t
    /// and returns each step's logits.
    pub fn forced_logits(&self, enc: &EncoderStates, inputs: &[Vec<usize>]) -> Result<Vec<Var>> {
        let mut state = self.init_state(Rc::new(enc.clone()))?;
        // forced sweeps over padded batches may exceed the generation bound
        state.max_len = state.max_len.max(inputs.len());
        let mut out = Vec::with_capacity(inputs.len());
        for step_inputs in inputs {
            let (logits, _, next) = self.step(&state, step_inputs)?;
            state = next;
            out.push(logits);
        }
        Ok(out)
    }
}

/// Stateful stepwise decoder over one tape, used by sampling, greedy
/// decoding, and the tests that exercise single steps.
pub struct StepDecoder<'a> {
    g: AgentGraph<'a>,
    state: DecoderState,
    pad_mask: Tensor,
    temperature: f64,
}

impl<'a> StepDecoder<'a> {
    pub fn start(agent: &'a Seq2SeqAgent, sources: &[Vec<usize>]) -> Result<Self> {
        let tape = Tape::new();
        let g = agent.graph(&tape, 0);
        let (padded, lens) = pad_sources(sources);
        let enc = Rc::new(g.encode(&padded, &lens)?);
        let state = g.init_state(enc)?;
        let mut pad_mask = Tensor::zeros(sources.len(), agent.cfg.tgt_vocab);
        for row in 0..sources.len() {
            pad_mask.set(row, PAD, ATTN_MASK);
        }
        Ok(StepDecoder {
            g,
            state,
            pad_mask,
            temperature: 1.0,
        })
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn timestep(&self) -> usize {
        self.state.t
    }

    /// Advances one step. PAD is masked out of the choice distribution.
    pub fn step(&mut self, prev: &[usize]) -> Result<StepOutput> {
        let (logits, attn, next) = self.g.step(&self.state, prev)?;
        self.state = next;
        let mut masked = logits.to_tensor();
        for (row, mrow) in self.pad_mask.data().chunks(masked.cols()).enumerate() {
            for (v, m) in masked.row_mut(row).iter_mut().zip(mrow) {
                *v = *v / self.temperature + m;
            }
        }
        let n = masked.cols();
        crate::autodiff::kernels::log_softmax_rows(masked.data_mut(), n);
        Ok(StepOutput {
            logits,
            attn,
            masked_log_probs: masked,
        })
    }
}
