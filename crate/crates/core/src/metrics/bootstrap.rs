//! Paired bootstrap significance testing over sentence indices.
//!
//! Each resample draws sentences with replacement and recomputes both
//! systems' corpus scores from precomputed per-sentence sufficient
//! statistics. The p-value is the fraction of resamples in which the
//! observed winner does not strictly win; ties never count as wins, so two
//! identical systems are never significant. The definition is symmetric in
//! the two systems. Resamples derive their own seeds, so the parallel and
//! sequential paths agree exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::metrics::ngrams::{bleu_from_stats, sentence_bleu_stats, BleuStats};
use crate::metrics::ter::ter_counts;
use crate::par;

pub const MIN_SENTENCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Higher is better.
    Bleu,
    /// Lower is better.
    Ter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    SystemA,
    SystemB,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub metric: MetricKind,
    pub score_a: f64,
    pub score_b: f64,
    /// None when the corpus scores tie exactly ("no difference").
    pub winner: Option<Winner>,
    pub p_value: f64,
    pub resamples: usize,
}

impl BootstrapResult {
    pub fn is_significant(&self, level: f64) -> bool {
        self.winner.is_some() && self.p_value < level
    }
}

enum SentenceStats {
    Bleu(Vec<BleuStats>, Vec<BleuStats>),
    Ter(Vec<(usize, usize, usize)>, Vec<(usize, usize, usize)>),
}

impl SentenceStats {
    fn corpus_scores(&self, indices: &[usize]) -> (f64, f64) {
        match self {
            SentenceStats::Bleu(a, b) => {
                let mut ta = BleuStats::default();
                let mut tb = BleuStats::default();
                for &i in indices {
                    ta.add(&a[i]);
                    tb.add(&b[i]);
                }
                (bleu_from_stats(&ta) * 100.0, bleu_from_stats(&tb) * 100.0)
            }
            SentenceStats::Ter(a, b) => {
                let pool = |xs: &[(usize, usize, usize)]| {
                    let (mut e, mut r) = (0usize, 0usize);
                    for &i in indices {
                        e += xs[i].0 + xs[i].1;
                        r += xs[i].2;
                    }
                    e as f64 / r as f64
                };
                (pool(a), pool(b))
            }
        }
    }
}

pub fn paired_bootstrap(
    hyp_a: &[Vec<String>],
    hyp_b: &[Vec<String>],
    references: &[Vec<String>],
    metric: MetricKind,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    paired_bootstrap_impl(hyp_a, hyp_b, references, metric, resamples, seed, true)
}

/// Sequential reference path (identical output; used by benches).
pub fn paired_bootstrap_seq(
    hyp_a: &[Vec<String>],
    hyp_b: &[Vec<String>],
    references: &[Vec<String>],
    metric: MetricKind,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    paired_bootstrap_impl(hyp_a, hyp_b, references, metric, resamples, seed, false)
}

fn paired_bootstrap_impl(
    hyp_a: &[Vec<String>],
    hyp_b: &[Vec<String>],
    references: &[Vec<String>],
    metric: MetricKind,
    resamples: usize,
    seed: u64,
    parallel: bool,
) -> Result<BootstrapResult> {
    let n = references.len();
    if hyp_a.len() != n || hyp_b.len() != n {
        return Err(CoreError::InvalidArgument(format!(
            "bootstrap: misaligned systems ({} / {} hypotheses vs {} references)",
            hyp_a.len(),
            hyp_b.len(),
            n
        )));
    }
    if n < MIN_SENTENCES {
        return Err(CoreError::InvalidArgument(format!(
            "bootstrap: {n} sentences is underpowered (need at least {MIN_SENTENCES})"
        )));
    }
    if resamples == 0 {
        return Err(CoreError::InvalidArgument(
            "bootstrap: need at least one resample".into(),
        ));
    }

    let stats = match metric {
        MetricKind::Bleu => SentenceStats::Bleu(
            par::map_indexed(hyp_a, |i, h| sentence_bleu_stats(h, &references[i])),
            par::map_indexed(hyp_b, |i, h| sentence_bleu_stats(h, &references[i])),
        ),
        MetricKind::Ter => {
            let counts = |hyps: &[Vec<String>]| {
                par::map_indexed(hyps, |i, h| {
                    let (e, s) = ter_counts(h, &references[i]);
                    (e, s, references[i].len())
                })
            };
            SentenceStats::Ter(counts(hyp_a), counts(hyp_b))
        }
    };

    let all: Vec<usize> = (0..n).collect();
    let (score_a, score_b) = stats.corpus_scores(&all);
    let winner = observed_winner(metric, score_a, score_b);

    let Some(winner) = winner else {
        return Ok(BootstrapResult {
            metric,
            score_a,
            score_b,
            winner: None,
            p_value: 1.0,
            resamples,
        });
    };

    let one_resample = |r: usize| -> u32 {
        // per-resample derived seed keeps the result independent of
        // scheduling
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let (ra, rb) = stats.corpus_scores(&indices);
        let wins = match (metric, winner) {
            (MetricKind::Bleu, Winner::SystemA) => ra > rb,
            (MetricKind::Bleu, Winner::SystemB) => rb > ra,
            (MetricKind::Ter, Winner::SystemA) => ra < rb,
            (MetricKind::Ter, Winner::SystemB) => rb < ra,
        };
        u32::from(!wins)
    };
    let losses: u32 = if parallel {
        par::map_range(resamples, one_resample).into_iter().sum()
    } else {
        par::map_range_seq(resamples, one_resample).into_iter().sum()
    };

    Ok(BootstrapResult {
        metric,
        score_a,
        score_b,
        winner: Some(winner),
        p_value: losses as f64 / resamples as f64,
        resamples,
    })
}

fn observed_winner(metric: MetricKind, a: f64, b: f64) -> Option<Winner> {
    let better = match metric {
        MetricKind::Bleu => a > b,
        MetricKind::Ter => a < b,
    };
    let worse = match metric {
        MetricKind::Bleu => a < b,
        MetricKind::Ter => a > b,
    };
    if better {
        Some(Winner::SystemA)
    } else if worse {
        Some(Winner::SystemB)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn corpus(n: usize) -> Vec<Vec<String>> {
        (0..n).map(|i| toks(&format!("a b c d w{i} x y z"))).collect()
    }

    #[test]
    fn identical_systems_never_significant() {
        let refs = corpus(20);
        let hyp = refs.clone();
        let r = paired_bootstrap(&hyp, &hyp, &refs, MetricKind::Bleu, 200, 1).unwrap();
        assert!(r.winner.is_none());
        assert_eq!(r.p_value, 1.0);
        assert!(!r.is_significant(0.05));
    }

    #[test]
    fn dominant_system_is_significant() {
        let refs = corpus(30);
        let hyp_a = refs.clone();
        let hyp_b: Vec<Vec<String>> = refs.iter().map(|_| toks("q q q q")).collect();
        let r = paired_bootstrap(&hyp_a, &hyp_b, &refs, MetricKind::Bleu, 1000, 1).unwrap();
        assert_eq!(r.winner, Some(Winner::SystemA));
        assert!(r.p_value < 0.01, "p = {}", r.p_value);

        let r = paired_bootstrap(&hyp_a, &hyp_b, &refs, MetricKind::Ter, 1000, 1).unwrap();
        assert_eq!(r.winner, Some(Winner::SystemA));
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn symmetric_in_the_two_systems() {
        let refs = corpus(25);
        let hyp_a: Vec<Vec<String>> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| if i % 3 == 0 { toks("a b q z") } else { r.clone() })
            .collect();
        let hyp_b: Vec<Vec<String>> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| if i % 2 == 0 { toks("a q") } else { r.clone() })
            .collect();
        let ab = paired_bootstrap(&hyp_a, &hyp_b, &refs, MetricKind::Bleu, 400, 7).unwrap();
        let ba = paired_bootstrap(&hyp_b, &hyp_a, &refs, MetricKind::Bleu, 400, 7).unwrap();
        assert_eq!(ab.p_value, ba.p_value);
        assert!(ab.p_value >= 0.0 && ab.p_value <= 1.0);
    }

    #[test]
    fn reproducible_under_fixed_seed_and_matches_sequential() {
        let refs = corpus(15);
        let hyp_b: Vec<Vec<String>> = refs.iter().map(|r| r[..r.len() - 2].to_vec()).collect();
        let r1 = paired_bootstrap(&refs, &hyp_b, &refs, MetricKind::Bleu, 300, 42).unwrap();
        let r2 = paired_bootstrap(&refs, &hyp_b, &refs, MetricKind::Bleu, 300, 42).unwrap();
        let r3 = paired_bootstrap_seq(&refs, &hyp_b, &refs, MetricKind::Bleu, 300, 42).unwrap();
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.p_value, r3.p_value);
    }

    #[test]
    fn underpowered_input_rejected() {
        let refs = corpus(5);
        assert!(paired_bootstrap(&refs, &refs, &refs, MetricKind::Bleu, 100, 0).is_err());
    }
}
