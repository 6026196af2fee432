//! Clipped n-gram statistics shared by the corpus metric and the sentence
//! reward.

use std::collections::HashMap;

pub const MAX_NGRAM: usize = 4;

/// Clipped match and candidate counts for n = 1..=4 plus lengths. Additive
/// across sentences for corpus-level pooling and bootstrap resampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_NGRAM],
    pub totals: [u64; MAX_NGRAM],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_NGRAM {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

/// Modified (clipped) n-gram counts of `hyp` against `reference` for one n.
pub fn clipped_matches<T: Eq + std::hash::Hash>(
    hyp: &[T],
    reference: &[T],
    n: usize,
) -> (u64, u64) {
    if hyp.len() < n {
        return (0, 0);
    }
    let total = (hyp.len() - n + 1) as u64;
    let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
    if reference.len() >= n {
        for g in reference.windows(n) {
            *ref_counts.entry(g).or_insert(0) += 1;
        }
    }
    let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
    for g in hyp.windows(n) {
        *hyp_counts.entry(g).or_insert(0) += 1;
    }
    let matches = hyp_counts
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, total)
}

pub fn sentence_bleu_stats<T: Eq + std::hash::Hash>(hyp: &[T], reference: &[T]) -> BleuStats {
    let mut s = BleuStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_NGRAM {
        let (m, t) = clipped_matches(hyp, reference, n);
        s.matches[n - 1] = m;
        s.totals[n - 1] = t;
    }
    s
}

/// Corpus BLEU (0..1 scale) from pooled stats: geometric mean of the four
/// pooled precisions times the brevity penalty. Any zero precision (or an
/// empty hypothesis side) gives 0.
pub fn bleu_from_stats(stats: &BleuStats) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_NGRAM {
        if stats.matches[n] == 0 || stats.totals[n] == 0 {
            return 0.0;
        }
        log_sum += (stats.matches[n] as f64 / stats.totals[n] as f64).ln();
    }
    brevity_penalty(stats.hyp_len, stats.ref_len) * (log_sum / MAX_NGRAM as f64).exp()
}

pub fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn clipping_caps_repeated_ngrams() {
        // "the the the" vs "the cat": unigram matches clipped to 1
        let (m, t) = clipped_matches(&toks("the the the"), &toks("the cat"), 1);
        assert_eq!((m, t), (1, 3));
    }

    #[test]
    fn short_hypothesis_has_no_ngrams() {
        let (m, t) = clipped_matches(&toks("a"), &toks("a b c"), 2);
        assert_eq!((m, t), (0, 0));
    }
}
