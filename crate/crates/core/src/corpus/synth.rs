//! Synthetic desk-scale translation tasks: copy, reverse, and an
//! ambiguous-lexicon task where the correct translation of an ambiguous
//! source word depends on a co-occurring trigger token, with a configurable
//! sense-frequency skew.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::error::{CoreError, Result};
use crate::metrics::MltRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    Copy,
    Reverse,
    AmbiguousLexicon,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTaskSpec {
    pub task: SynthTask,
    /// Filler-token vocabulary size.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    /// Ambiguous-lexicon only: number of ambiguous source words.
    #[serde(default = "default_ambiguous_words")]
    pub ambiguous_words: usize,
    /// Ambiguous-lexicon only: senses per ambiguous word (>= 2).
    #[serde(default = "default_senses")]
    pub senses_per_word: usize,
    /// Ambiguous-lexicon only: sense frequencies, most frequent first;
    /// must sum to 1.
    #[serde(default = "default_skew")]
    pub sense_skew: Vec<f64>,
}

fn default_ambiguous_words() -> usize {
    4
}
fn default_senses() -> usize {
    2
}
fn default_skew() -> Vec<f64> {
    vec![0.8, 0.2]
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(CoreError::InvalidArgument(
                "synth spec: vocab_size must be positive".into(),
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(CoreError::InvalidArgument(format!(
                "synth spec: bad length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if self.train_pairs == 0 || self.valid_pairs == 0 || self.test_pairs == 0 {
            return Err(CoreError::InvalidArgument(
                "synth spec: every split needs at least one pair".into(),
            ));
        }
        if self.task == SynthTask::AmbiguousLexicon {
            if self.ambiguous_words == 0 {
                return Err(CoreError::InvalidArgument(
                    "synth spec: need at least one ambiguous word".into(),
                ));
            }
            if self.senses_per_word < 2 {
                return Err(CoreError::InvalidArgument(
                    "synth spec: senses_per_word must be >= 2".into(),
                ));
            }
            if self.sense_skew.len() != self.senses_per_word {
                return Err(CoreError::InvalidArgument(format!(
                    "synth spec: skew has {} entries for {} senses",
                    self.sense_skew.len(),
                    self.senses_per_word
                )));
            }
            let sum: f64 = self.sense_skew.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || self.sense_skew.iter().any(|&f| f <= 0.0) {
                return Err(CoreError::InvalidArgument(
                    "synth spec: skew frequencies must be positive and sum to 1".into(),
                ));
            }
            if self.vocab_size < 2 {
                return Err(CoreError::InvalidArgument(
                    "synth spec: vocab too small for the ambiguous-lexicon task".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    /// Ground-truth ambiguity annotations for the test split (empty for
    /// copy/reverse tasks).
    pub mlt_records: Vec<MltRecord>,
}

/// The target-side rendering of an ambiguous word's sense `j`.
pub fn sense_token(word: usize, sense: usize) -> String {
    format!("sense{word}_{sense}")
}

/// The source-side trigger marking that sense `j > 0` of `word` is correct.
pub fn trigger_token(word: usize, sense: usize) -> String {
    format!("trig{word}_{sense}")
}

fn filler(i: usize) -> String {
    format!("f{i}")
}

fn filler_target(i: usize) -> String {
    format!("F{i}")
}

/// Generates a corpus from (spec, seed). Identical inputs produce identical
/// corpora.
pub fn synth_corpus(spec: &SynthTaskSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SynthOutput {
        train: ParallelCorpus::default(),
        valid: ParallelCorpus::default(),
        test: ParallelCorpus::default(),
        mlt_records: Vec::new(),
    };
    for (split, count) in [(0, spec.train_pairs), (1, spec.valid_pairs), (2, spec.test_pairs)] {
        for i in 0..count {
            let (src, tgt, record) = generate_pair(spec, &mut rng);
            let corpus = match split {
                0 => &mut out.train,
                1 => &mut out.valid,
                _ => &mut out.test,
            };
            corpus.push(src, tgt);
            if split == 2 {
                if let Some(mut rec) = record {
                    rec.sentence_id = i;
                    out.mlt_records.push(rec);
                }
            }
        }
    }
    Ok(out)
}

fn generate_pair(
    spec: &SynthTaskSpec,
    rng: &mut ChaCha8Rng,
) -> (Vec<String>, Vec<String>, Option<MltRecord>) {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    match spec.task {
        SynthTask::Copy => {
            let src: Vec<String> = (0..len)
                .map(|_| filler(rng.random_range(0..spec.vocab_size)))
                .collect();
            (src.clone(), src, None)
        }
        SynthTask::Reverse => {
            let src: Vec<String> = (0..len)
                .map(|_| filler(rng.random_range(0..spec.vocab_size)))
                .collect();
            let mut tgt = src.clone();
            tgt.reverse();
            (src, tgt, None)
        }
        SynthTask::AmbiguousLexicon => {
            let word = rng.random_range(0..spec.ambiguous_words);
            let sense = sample_categorical(&spec.sense_skew, rng);
            // source = fillers, one ambiguous word, and (for non-default
            // senses) the trigger; target translates token-by-token.
            let mut src: Vec<(String, String)> = (0..len)
                .map(|_| {
                    let f = rng.random_range(0..spec.vocab_size);
                    (filler(f), filler_target(f))
                })
                .collect();
            let amb_pos = rng.random_range(0..=src.len());
            src.insert(
                amb_pos,
                (format!("amb{word}"), sense_token(word, sense)),
            );
            if sense > 0 {
                let trig_pos = rng.random_range(0..=src.len());
                src.insert(
                    trig_pos,
                    (
                        trigger_token(word, sense),
                        trigger_token(word, sense).to_uppercase(),
                    ),
                );
            }
            let (source, target): (Vec<String>, Vec<String>) = src.into_iter().unzip();
            let record = MltRecord {
                sentence_id: 0,
                word: format!("amb{word}"),
                correct: vec![sense_token(word, sense)],
                incorrect: (0..spec.senses_per_word)
                    .filter(|&j| j != sense)
                    .map(|j| sense_token(word, j))
                    .collect(),
            };
            (source, target, Some(record))
        }
    }
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ambig_spec() -> SynthTaskSpec {
        SynthTaskSpec {
            task: SynthTask::AmbiguousLexicon,
            vocab_size: 10,
            min_len: 2,
            max_len: 5,
            train_pairs: 1000,
            valid_pairs: 50,
            test_pairs: 200,
            ambiguous_words: 4,
            senses_per_word: 2,
            sense_skew: vec![0.8, 0.2],
        }
    }

    #[test]
    fn generation_is_pure_in_spec_and_seed() {
        let spec = ambig_spec();
        let a = synth_corpus(&spec, 7).unwrap();
        let b = synth_corpus(&spec, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.mlt_records.len(), b.mlt_records.len());
        let c = synth_corpus(&spec, 8).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rare_sense_count_follows_binomial_skew() {
        let spec = ambig_spec();
        let out = synth_corpus(&spec, 3).unwrap();
        // 0.2 of 1000 train pairs: 200 ± 40 (spec'd tolerance, ~3+ sigma)
        let rare = out
            .train
            .source
            .iter()
            .filter(|s| s.iter().any(|t| t.starts_with("trig")))
            .count();
        assert!((160..=240).contains(&rare), "rare sense count {rare}");
    }

    #[test]
    fn trigger_following_oracle_gets_every_record_right() {
        let spec = ambig_spec();
        let out = synth_corpus(&spec, 11).unwrap();
        assert!(!out.mlt_records.is_empty());
        for rec in &out.mlt_records {
            let src = &out.test.source[rec.sentence_id];
            let word: usize = rec.word.trim_start_matches("amb").parse().unwrap();
            let sense = (1..spec.senses_per_word)
                .find(|&j| src.iter().any(|t| *t == trigger_token(word, j)))
                .unwrap_or(0);
            assert_eq!(rec.correct, vec![sense_token(word, sense)]);
            assert!(!rec.incorrect.contains(&sense_token(word, sense)));
        }
    }

    #[test]
    fn infeasible_specs_rejected() {
        let mut spec = ambig_spec();
        spec.senses_per_word = 1;
        spec.sense_skew = vec![1.0];
        assert!(synth_corpus(&spec, 0).is_err());

        let mut spec = ambig_spec();
        spec.sense_skew = vec![0.5, 0.4];
        assert!(synth_corpus(&spec, 0).is_err());

        let mut spec = ambig_spec();
        spec.vocab_size = 0;
        assert!(synth_corpus(&spec, 0).is_err());
    }

    #[test]
    fn copy_and_reverse_tasks() {
        let spec = SynthTaskSpec {
            task: SynthTask::Copy,
            vocab_size: 20,
            min_len: 1,
            max_len: 8,
            train_pairs: 10,
            valid_pairs: 2,
            test_pairs: 2,
            ambiguous_words: 0,
            senses_per_word: 2,
            sense_skew: vec![0.8, 0.2],
        };
        let out = synth_corpus(&spec, 1).unwrap();
        for (s, t) in out.train.source.iter().zip(&out.train.target) {
            assert_eq!(s, t);
        }
        let spec = SynthTaskSpec {
            task: SynthTask::Reverse,
            ..spec
        };
        let out = synth_corpus(&spec, 1).unwrap();
        for (s, t) in out.train.source.iter().zip(&out.train.target) {
            let mut rev = s.clone();
            rev.reverse();
            assert_eq!(&rev, t);
        }
    }
}
