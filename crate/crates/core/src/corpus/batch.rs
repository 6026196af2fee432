use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{ParallelCorpus, Vocabulary, EOS, PAD};

/// One padded id batch. Targets carry a trailing EOS; both sides are
/// right-padded with PAD.
#[derive(Debug, Clone)]
pub struct Batch {
    /// [batch][src_len] padded source ids.
    pub source: Vec<Vec<usize>>,
    /// [batch][tgt_len+1] padded target ids ending with EOS.
    pub target: Vec<Vec<usize>>,
    /// Unpadded source lengths.
    pub source_len: Vec<usize>,
    /// Unpadded target lengths (including the EOS).
    pub target_len: Vec<usize>,
    /// Indices of the batch's sentences in the corpus.
    pub indices: Vec<usize>,
}

fn pad_to(ids: &mut Vec<usize>, len: usize) {
    while ids.len() < len {
        ids.push(PAD);
    }
}

/// Builds one padded batch from explicit corpus indices.
pub fn make_batch(
    corpus: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    indices: &[usize],
) -> Batch {
    let mut source = Vec::with_capacity(indices.len());
    let mut target = Vec::with_capacity(indices.len());
    let mut source_len = Vec::with_capacity(indices.len());
    let mut target_len = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = src_vocab.encode(&corpus.source[i]);
        let mut t = tgt_vocab.encode(&corpus.target[i]);
        t.push(EOS);
        source_len.push(s.len());
        target_len.push(t.len());
        source.push(s);
        target.push(t);
    }
    let max_s = source_len.iter().copied().max().unwrap_or(0);
    let max_t = target_len.iter().copied().max().unwrap_or(0);
    for s in &mut source {
        pad_to(s, max_s);
    }
    for t in &mut target {
        pad_to(t, max_t);
    }
    Batch {
        source,
        target,
        source_len,
        target_len,
        indices: indices.to_vec(),
    }
}

/// One epoch of shuffled, padded batches. Every sentence appears exactly
/// once; the last batch may be smaller but never empty.
pub fn batch_iter(
    corpus: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| make_batch(corpus, src_vocab, tgt_vocab, chunk))
        .collect()
}
