//! Policy and critic networks: a 2-layer GRU encoder and a 2-layer
//! conditional-GRU decoder with additive attention and shared target
//! embeddings. Critics reuse the same architecture with per-action outputs
//! read as Q values.

pub mod agent;
pub mod critic;

pub use agent::{
    max_decode_len, AgentGraph, DecoderState, EncoderStates, ModelConfig, Sampled, Seq2SeqAgent,
    StepDecoder,
};
pub use critic::{min_q, soft_value, CriticEnsemble};
