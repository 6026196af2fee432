//! Translation evaluation: corpus BLEU, TER, lexical-accuracy scores over
//! ambiguity annotations, paired bootstrap significance, and an output-word
//! training-frequency report.

pub mod bootstrap;
pub mod frequency;
pub mod lexical;
pub mod ngrams;
pub mod ter;

use crate::error::{CoreError, Result};
use crate::par;

pub use bootstrap::{paired_bootstrap, paired_bootstrap_seq, BootstrapResult, MetricKind, Winner};
pub use frequency::{frequency_report, word_frequencies, FrequencyReport};
pub use lexical::{ali, load_mlt_tsv, lta, save_mlt_tsv, MltRecord};
pub use ngrams::{bleu_from_stats, sentence_bleu_stats, BleuStats, MAX_NGRAM};
pub use ter::ter;

/// Corpus-level BLEU on a 0..100 scale: clipped n-gram precisions pooled
/// over the corpus, geometric mean for n = 1..4, corpus brevity penalty.
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    corpus_bleu_impl(hypotheses, references, true)
}

/// Sequential reference path (identical output; used by benches).
pub fn corpus_bleu_seq(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    corpus_bleu_impl(hypotheses, references, false)
}

fn corpus_bleu_impl(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    parallel: bool,
) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(CoreError::InvalidArgument(format!(
            "corpus_bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(CoreError::InvalidArgument(
            "corpus_bleu: empty reference".into(),
        ));
    }
    let per_sentence = if parallel {
        par::map_indexed(hypotheses, |i, hyp| sentence_bleu_stats(hyp, &references[i]))
    } else {
        par::map_indexed_seq(hypotheses, |i, hyp| sentence_bleu_stats(hyp, &references[i]))
    };
    let mut total = BleuStats::default();
    for s in &per_sentence {
        total.add(s);
    }
    Ok(bleu_from_stats(&total) * 100.0)
}

/// One evaluation row; `p_value` is set when comparing against a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub metric: String,
    pub score: f64,
    pub p_value: Option<f64>,
}

/// Metric table as produced by the `evaluate` command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push(&mut self, metric: &str, score: f64, p_value: Option<f64>) {
        self.rows.push(EvalRow {
            metric: metric.to_string(),
            score,
            p_value,
        });
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.score)
    }

    /// CSV with the fixed v1 header `metric,score,p_value_vs_baseline`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,score,p_value_vs_baseline\n");
        for r in &self.rows {
            let p = r
                .p_value
                .map(|p| format!("{p:.6}"))
                .unwrap_or_default();
            out.push_str(&format!("{},{:.6},{}\n", r.metric, r.score, p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let refs = vec![toks("a b c d e"), toks("x y z w")];
        let hyp = refs.clone();
        assert!((corpus_bleu(&hyp, &refs).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn all_empty_hypotheses_score_0() {
        let refs = vec![toks("a b c"), toks("d e")];
        let hyp = vec![vec![], vec![]];
        assert_eq!(corpus_bleu(&hyp, &refs).unwrap(), 0.0);
    }

    #[test]
    fn count_mismatch_rejected() {
        let refs = vec![toks("a b")];
        assert!(corpus_bleu(&[], &refs).is_err());
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..60 {
            let rl = rng.random_range(3..12);
            let hl = rng.random_range(1..12);
            refs.push((0..rl).map(|_| format!("w{}", rng.random_range(0..8))).collect());
            hyps.push((0..hl).map(|_| format!("w{}", rng.random_range(0..8))).collect());
        }
        let a = corpus_bleu(&hyps, &refs).unwrap();
        let b = corpus_bleu_seq(&hyps, &refs).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    /// Brute-force counting oracle, written against the definition and not
    /// sharing code with the implementation path.
    pub(crate) fn oracle_corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        let mut matches = [0u64; 4];
        let mut totals = [0u64; 4];
        let (mut hyp_len, mut ref_len) = (0u64, 0u64);
        for (h, r) in hyps.iter().zip(refs) {
            hyp_len += h.len() as u64;
            ref_len += r.len() as u64;
            for n in 1..=4usize {
                if h.len() < n {
                    continue;
                }
                let mut used: Vec<bool> = Vec::new();
                let r_grams: Vec<&[String]> = if r.len() >= n {
                    r.windows(n).collect()
                } else {
                    Vec::new()
                };
                used.resize(r_grams.len(), false);
                for g in h.windows(n) {
                    totals[n - 1] += 1;
                    if let Some(pos) = r_grams
                        .iter()
                        .enumerate()
                        .position(|(i, rg)| !used[i] && *rg == g)
                    {
                        used[pos] = true;
                        matches[n - 1] += 1;
                    }
                }
            }
        }
        if hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..4 {
            if matches[n] == 0 || totals[n] == 0 {
                return 0.0;
            }
            log_sum += (matches[n] as f64 / totals[n] as f64).ln();
        }
        let bp = if hyp_len >= ref_len {
            1.0
        } else {
            (1.0 - ref_len as f64 / hyp_len as f64).exp()
        };
        bp * (log_sum / 4.0).exp() * 100.0
    }

    #[test]
    fn matches_brute_force_oracle_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n_sent = rng.random_range(1..6);
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            for _ in 0..n_sent {
                let rl = rng.random_range(1..10);
                let hl = rng.random_range(0..10);
                refs.push(
                    (0..rl)
                        .map(|_| format!("t{}", rng.random_range(0..5)))
                        .collect::<Vec<_>>(),
                );
                hyps.push(
                    (0..hl)
                        .map(|_| format!("t{}", rng.random_range(0..5)))
                        .collect::<Vec<_>>(),
                );
            }
            let got = corpus_bleu(&hyps, &refs).unwrap();
            let want = oracle_corpus_bleu(&hyps, &refs);
            assert!(
                (got - want).abs() < 1e-12,
                "corpus bleu {got} vs oracle {want}"
            );
        }
    }

    #[test]
    fn eval_report_csv_header_fixed() {
        let mut r = EvalReport::default();
        r.push("bleu", 42.5, None);
        r.push("ter", 0.25, Some(0.01));
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("metric,score,p_value_vs_baseline"));
        assert_eq!(lines.next(), Some("bleu,42.500000,"));
        assert_eq!(lines.next(), Some("ter,0.250000,0.010000"));
    }
}
