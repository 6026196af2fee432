//! Corpus ingestion, vocabulary construction, batching, and synthetic
//! desk-scale task generation.

pub mod batch;
pub mod synth;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use batch::{batch_iter, make_batch, Batch};
pub use synth::{synth_corpus, SynthOutput, SynthTask, SynthTaskSpec};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token table with fixed reserved ids: PAD=0, BOS=1, EOS=2, UNK=3.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an ordered token list that already starts with the four
    /// reserved entries.
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Encodes a whitespace-tokenized sentence; unknown tokens map to UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Decodes ids to tokens. PAD/BOS/EOS are structural and dropped; UNK
    /// renders as its token since it is a real output word.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD && i != BOS && i != EOS)
            .map(|&i| self.tokens[i].clone())
            .collect()
    }
}

/// Aligned tokenized sentence pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParallelCorpus {
    pub source: Vec<Vec<String>>,
    pub target: Vec<Vec<String>>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn push(&mut self, src: Vec<String>, tgt: Vec<String>) {
        assert!(!src.is_empty() && !tgt.is_empty());
        self.source.push(src);
        self.target.push(tgt);
    }
}

fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(CoreError::CorpusFormat {
                path: path.display().to_string(),
                line: i + 1,
                message: "empty sentence".into(),
            });
        }
        out.push(tokens);
    }
    Ok(out)
}

/// Loads a parallel corpus from two one-sentence-per-line UTF-8 files.
pub fn load_parallel(source_path: &Path, target_path: &Path) -> Result<ParallelCorpus> {
    let source = read_sentences(source_path)?;
    let target = read_sentences(target_path)?;
    if source.len() != target.len() {
        return Err(CoreError::CorpusFormat {
            path: target_path.display().to_string(),
            line: source.len().min(target.len()) + 1,
            message: format!(
                "sentence count mismatch: {} source lines vs {} target lines",
                source.len(),
                target.len()
            ),
        });
    }
    Ok(ParallelCorpus { source, target })
}

/// Writes a corpus back as two plain-text files (inverse of [`load_parallel`]).
pub fn save_parallel(
    corpus: &ParallelCorpus,
    source_path: &Path,
    target_path: &Path,
) -> Result<()> {
    let render = |sents: &[Vec<String>]| {
        let mut s = String::new();
        for sent in sents {
            let _ = writeln!(s, "{}", sent.join(" "));
        }
        s
    };
    std::fs::write(source_path, render(&corpus.source))?;
    std::fs::write(target_path, render(&corpus.target))?;
    Ok(())
}

/// Builds a vocabulary from one corpus side. Tokens below `min_freq` or
/// beyond `max_size` (excluding reserved slots) map to UNK. Ordering is by
/// descending frequency, then lexicographic, so builds are deterministic.
pub fn build_vocab(
    sentences: &[Vec<String>],
    min_freq: usize,
    max_size: Option<usize>,
) -> Result<Vocabulary> {
    if sentences.is_empty() {
        return Err(CoreError::InvalidArgument(
            "build_vocab: empty corpus".into(),
        ));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for sent in sentences {
        for tok in sent {
            *freq.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(cap) = max_size {
        entries.truncate(cap);
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(entries.into_iter().map(|(t, _)| t.to_string()));
    Ok(Vocabulary::from_tokens(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(text: &[&str]) -> Vec<Vec<String>> {
        text.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn vocab_min_freq_filters() {
        let v = build_vocab(&sents(&["a a b"]), 2, None).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn vocab_reserved_ids_fixed() {
        let v = build_vocab(&sents(&["x"]), 1, None).unwrap();
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(BOS), "<bos>");
        assert_eq!(v.token(EOS), "<eos>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(v.id("x"), 4);
    }

    #[test]
    fn vocab_deterministic_ordering() {
        let data = sents(&["b a b c c c", "a z"]);
        let v1 = build_vocab(&data, 1, None).unwrap();
        let v2 = build_vocab(&data, 1, None).unwrap();
        let t1: Vec<&str> = (0..v1.len()).map(|i| v1.token(i)).collect();
        let t2: Vec<&str> = (0..v2.len()).map(|i| v2.token(i)).collect();
        assert_eq!(t1, t2);
        // c (3) first, then a/b (2) lexicographic, then z (1)
        assert_eq!(t1[4..], ["c", "a", "b", "z"][..]);
    }

    #[test]
    fn vocab_covers_its_own_corpus_with_defaults() {
        let data = sents(&["the quick brown fox", "jumps over the dog"]);
        let v = build_vocab(&data, 1, None).unwrap();
        for sent in &data {
            for tok in sent {
                assert_ne!(v.id(tok), UNK, "token {tok} not covered");
            }
        }
    }

    #[test]
    fn load_parallel_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.txt");
        let tgt = dir.path().join("t.txt");
        std::fs::write(&src, "a b\nc\nd e f\n").unwrap();
        std::fs::write(&tgt, "x\ny z\nw\n").unwrap();
        let c = load_parallel(&src, &tgt).unwrap();
        assert_eq!(c.len(), 3);

        let src2 = dir.path().join("s2.txt");
        let tgt2 = dir.path().join("t2.txt");
        save_parallel(&c, &src2, &tgt2).unwrap();
        assert_eq!(load_parallel(&src2, &tgt2).unwrap(), c);

        // count mismatch names both counts
        std::fs::write(&tgt, "x\ny z\n").unwrap();
        let err = load_parallel(&src, &tgt).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('2'), "{err}");

        // empty line is rejected with its line number
        std::fs::write(&src, "a b\n\nc\n").unwrap();
        let err = load_parallel(&src, &tgt).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
