//! Reward engines: per-step shaped smoothed-BLEU with a length penalty and
//! inverse-alpha rescaling, and the dynamic unsupervised skill reward with
//! its bag-of-words discriminator.

pub mod skill;

use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::ngrams::{brevity_penalty, clipped_matches, MAX_NGRAM};

pub use skill::{assign_skills, discriminator_update, unsup_reward, Discriminator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    SupervisedBleu,
    UnsupervisedSkill,
}

/// Which reward engine drives training, with its scalar knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardSpec {
    pub mode: RewardMode,
    /// Per-step deduction coefficient on |hypothesis length − reference
    /// length|.
    pub length_penalty_coeff: f64,
    /// Rewards are divided by this (reward scale inverse to the entropy
    /// temperature). Callers pass 1.0 to disable.
    pub alpha_for_rescale: f64,
    /// Skill count K for the unsupervised reward.
    pub skill_count: usize,
}

impl RewardSpec {
    pub fn supervised(length_penalty_coeff: f64, alpha_for_rescale: f64) -> Self {
        RewardSpec {
            mode: RewardMode::SupervisedBleu,
            length_penalty_coeff,
            alpha_for_rescale,
            skill_count: 0,
        }
    }

    pub fn unsupervised(skill_count: usize, alpha_for_rescale: f64) -> Self {
        RewardSpec {
            mode: RewardMode::UnsupervisedSkill,
            length_penalty_coeff: 0.0,
            alpha_for_rescale,
            skill_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_penalty_coeff < 0.0 {
            return Err(CoreError::InvalidArgument(
                "reward spec: negative length penalty".into(),
            ));
        }
        if self.alpha_for_rescale <= 0.0 {
            return Err(CoreError::InvalidArgument(
                "reward spec: rescale alpha must be positive".into(),
            ));
        }
        if self.mode == RewardMode::UnsupervisedSkill && self.skill_count < 2 {
            return Err(CoreError::InvalidArgument(
                "reward spec: skill reward needs K >= 2 (K = 1 is identically zero)".into(),
            ));
        }
        Ok(())
    }
}

/// Sentence BLEU with add-1 smoothing on the n >= 2 precisions:
/// geometric mean over n = 1..4 of p_n, where p_1 is the plain modified
/// precision and p_n = (matches + 1) / (candidates + 1) for n >= 2, times
/// the brevity penalty min(1, e^(1 − |ref|/|hyp|)). Empty hypotheses score
/// 0. The reference must be non-empty.
pub fn smoothed_sentence_bleu<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> f64 {
    assert!(!reference.is_empty(), "smoothed BLEU needs a reference");
    if hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let (matches, total) = clipped_matches(hypothesis, reference, n);
        let p = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        log_sum += p.ln();
    }
    brevity_penalty(hypothesis.len() as u64, reference.len() as u64)
        * (log_sum / MAX_NGRAM as f64).exp()
}

/// Shaped per-step reward at step t (`prefix` = the first t sampled words):
/// the BLEU gain of the prefix over the one-shorter prefix, minus the
/// length penalty. Per-step rewards telescope to the final sentence BLEU
/// minus the accumulated penalties.
pub fn per_step_bleu_reward<T: Eq + Hash>(
    prefix: &[T],
    reference: &[T],
    length_penalty_coeff: f64,
) -> f64 {
    assert!(!prefix.is_empty(), "per-step reward needs t >= 1");
    let current = smoothed_sentence_bleu(prefix, reference);
    let previous = if prefix.len() == 1 {
        0.0 // BLEU of the empty prefix
    } else {
        smoothed_sentence_bleu(&prefix[..prefix.len() - 1], reference)
    };
    current - previous - length_penalty(prefix.len(), reference.len(), length_penalty_coeff)
}

/// coeff * |hypothesis length − reference length|.
pub fn length_penalty(hyp_len: usize, ref_len: usize, coeff: f64) -> f64 {
    coeff * (hyp_len as f64 - ref_len as f64).abs()
}

/// Reward rescaling inverse to the entropy temperature: r / alpha.
pub fn rescale_reward(r: f64, alpha: f64) -> f64 {
    assert!(alpha > 0.0, "rescale alpha must be positive");
    r / alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_sentence_scores_one() {
        let r = toks("a b c d e f");
        assert!((smoothed_sentence_bleu(&r, &r) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_counted_shorter_hypothesis() {
        // precisions 4/4, (3+1)/(3+1), (2+1)/(2+1), (1+1)/(1+1) = 1;
        // BP = e^(1 - 5/4)
        let hyp = toks("a b c d");
        let reference = toks("a b c d e");
        let want = (1.0f64 - 5.0 / 4.0).exp();
        assert!((smoothed_sentence_bleu(&hyp, &reference) - want).abs() < 1e-12);
        assert!((want - 0.7788007830714049).abs() < 1e-12);
    }

    #[test]
    fn zero_fourgram_overlap_stays_positive() {
        let hyp = toks("a x b y c z");
        let reference = toks("a b c d e f");
        let score = smoothed_sentence_bleu(&hyp, &reference);
        assert!(score > 0.0);
    }

    #[test]
    fn no_unigram_overlap_scores_zero() {
        assert_eq!(smoothed_sentence_bleu(&toks("x y"), &toks("a b")), 0.0);
        assert_eq!(smoothed_sentence_bleu::<&str>(&[], &toks("a b")), 0.0);
    }

    /// Brute-force oracle: counts every n-gram of the hypothesis by scanning
    /// the reference with used-flags, then applies the formula directly.
    pub(crate) fn oracle_smoothed_bleu(hyp: &[usize], reference: &[usize]) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 1..=4usize {
            let grams: Vec<&[usize]> = if hyp.len() >= n {
                hyp.windows(n).collect()
            } else {
                Vec::new()
            };
            let ref_grams: Vec<&[usize]> = if reference.len() >= n {
                reference.windows(n).collect()
            } else {
                Vec::new()
            };
            let mut used = vec![false; ref_grams.len()];
            let mut matches = 0u64;
            for g in &grams {
                if let Some(i) = (0..ref_grams.len()).find(|&i| !used[i] && ref_grams[i] == *g) {
                    used[i] = true;
                    matches += 1;
                }
            }
            let total = grams.len() as u64;
            let p = if n == 1 {
                if matches == 0 {
                    return 0.0;
                }
                matches as f64 / total as f64
            } else {
                (matches + 1) as f64 / (total + 1) as f64
            };
            log_sum += p.ln();
        }
        let bp = if hyp.len() >= reference.len() {
            1.0
        } else {
            (1.0 - reference.len() as f64 / hyp.len() as f64).exp()
        };
        bp * (log_sum / 4.0).exp()
    }

    #[test]
    fn matches_brute_force_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let hl = rng.random_range(0..12);
            let rl = rng.random_range(1..12);
            let hyp: Vec<usize> = (0..hl).map(|_| rng.random_range(0..6)).collect();
            let reference: Vec<usize> = (0..rl).map(|_| rng.random_range(0..6)).collect();
            let got = smoothed_sentence_bleu(&hyp, &reference);
            let want = oracle_smoothed_bleu(&hyp, &reference);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn vocabulary_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let hyp: Vec<usize> = (0..rng.random_range(1..10))
                .map(|_| rng.random_range(0..5))
                .collect();
            let reference: Vec<usize> = (0..rng.random_range(1..10))
                .map(|_| rng.random_range(0..5))
                .collect();
            // relabel token v -> v + 100 consistently
            let relabel = |xs: &[usize]| xs.iter().map(|&v| v + 100).collect::<Vec<_>>();
            let a = smoothed_sentence_bleu(&hyp, &reference);
            let b = smoothed_sentence_bleu(&relabel(&hyp), &relabel(&reference));
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn one_token_degenerate_case() {
        // single-token match: p1 = 1, smoothed higher orders are (0+1)/(0+1),
        // BP = 1, so the first-step reward is exactly 1
        let r = per_step_bleu_reward(&["w"], &["w"], 0.1);
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn telescoping_to_sentence_bleu() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let len = rng.random_range(1..15);
            let hyp: Vec<usize> = (0..len).map(|_| rng.random_range(0..8)).collect();
            let reference: Vec<usize> = (0..rng.random_range(1..12))
                .map(|_| rng.random_range(0..8))
                .collect();
            let coeff = 0.0001;
            let mut total = 0.0;
            let mut penalties = 0.0;
            for t in 1..=hyp.len() {
                total += per_step_bleu_reward(&hyp[..t], &reference, coeff);
                penalties += length_penalty(t, reference.len(), coeff);
            }
            let bleu = smoothed_sentence_bleu(&hyp, &reference);
            assert!(
                (total + penalties - bleu).abs() < 1e-12,
                "telescoping broke: {} vs {}",
                total + penalties,
                bleu
            );
        }
    }

    #[test]
    fn zero_coeff_and_unchanged_score_gives_zero_reward() {
        // prefix "a a" scores the same as "a" does not hold in general, so
        // build one where the added token changes nothing: impossible for
        // BLEU deltas except via the formula; check the penalty-free EOS-like
        // case directly instead.
        let reference = toks("a b");
        let r1 = smoothed_sentence_bleu(&toks("a"), &reference);
        let r = per_step_bleu_reward(&toks("a"), &reference, 0.0);
        assert!((r - r1).abs() < 1e-15);
    }

    #[test]
    fn rescale_cases() {
        assert!((rescale_reward(0.5, 0.01) - 50.0).abs() < 1e-12);
        assert_eq!(rescale_reward(0.37, 1.0), 0.37);
        // positive scaling preserves the argmax
        let rewards = [0.1, 0.9, 0.4];
        let best = rewards
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let rescaled: Vec<f64> = rewards.iter().map(|&r| rescale_reward(r, 0.01)).collect();
        let best2 = rescaled
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(best, best2);
    }

    #[test]
    fn spec_validation() {
        assert!(RewardSpec::supervised(0.0001, 0.01).validate().is_ok());
        assert!(RewardSpec::unsupervised(4, 0.01).validate().is_ok());
        assert!(RewardSpec::unsupervised(1, 0.01).validate().is_err());
        let mut s = RewardSpec::supervised(0.0001, 0.01);
        s.alpha_for_rescale = 0.0;
        assert!(s.validate().is_err());
    }
}
