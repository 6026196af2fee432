//! Lexical translation accuracy over ambiguity annotations.
//!
//! An [`MltRecord`] names an ambiguous source word in one sentence together
//! with its correct translations and known incorrect ones. LTA awards +1
//! when a correct candidate appears in the system output; ALI additionally
//! penalizes known-incorrect candidates with -1. Candidate matching is
//! exact whole-token match after lowercasing. When both a correct and an
//! incorrect candidate appear, the correct one wins.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MltRecord {
    /// Index of the annotated sentence in the evaluated output file.
    pub sentence_id: usize,
    /// The ambiguous source word.
    pub word: String,
    /// Correct translations (non-empty).
    pub correct: Vec<String>,
    /// Known incorrect translations (disjoint from `correct`).
    pub incorrect: Vec<String>,
}

impl MltRecord {
    pub fn validate(&self) -> Result<()> {
        if self.correct.is_empty() {
            return Err(CoreError::InvalidArgument(format!(
                "mlt record for '{}': empty correct-candidate set",
                self.word
            )));
        }
        if self
            .correct
            .iter()
            .any(|c| self.incorrect.iter().any(|i| i.eq_ignore_ascii_case(c)))
        {
            return Err(CoreError::InvalidArgument(format!(
                "mlt record for '{}': correct and incorrect sets overlap",
                self.word
            )));
        }
        Ok(())
    }
}

fn contains_any(output: &[String], candidates: &[String]) -> bool {
    candidates.iter().any(|c| {
        let cl = c.to_lowercase();
        output.iter().any(|t| t.to_lowercase() == cl)
    })
}

fn per_record_scores(outputs: &[Vec<String>], records: &[MltRecord]) -> Result<Vec<(f64, f64)>> {
    records
        .iter()
        .map(|rec| {
            let out = outputs.get(rec.sentence_id).ok_or_else(|| {
                CoreError::InvalidArgument(format!(
                    "mlt record for '{}': sentence id {} beyond {} outputs",
                    rec.word,
                    rec.sentence_id,
                    outputs.len()
                ))
            })?;
            let (lta, ali) = if contains_any(out, &rec.correct) {
                (1.0, 1.0)
            } else if contains_any(out, &rec.incorrect) {
                (0.0, -1.0)
            } else {
                (0.0, 0.0)
            };
            Ok((lta, ali))
        })
        .collect()
}

/// Lexical translation accuracy in [0, 1].
pub fn lta(outputs: &[Vec<String>], records: &[MltRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::InvalidArgument("lta: no records".into()));
    }
    let scores = per_record_scores(outputs, records)?;
    Ok(scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64)
}

/// Ambiguous lexical index in [-1, 1].
pub fn ali(outputs: &[Vec<String>], records: &[MltRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::InvalidArgument("ali: no records".into()));
    }
    let scores = per_record_scores(outputs, records)?;
    Ok(scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64)
}

/// TSV columns: sentence_id, ambiguous word, comma-separated correct
/// candidates, comma-separated incorrect candidates (possibly empty).
pub fn save_mlt_tsv(records: &[MltRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.sentence_id,
            r.word,
            r.correct.join(","),
            r.incorrect.join(",")
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_mlt_tsv(path: &Path) -> Result<Vec<MltRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CoreError::CorpusFormat {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let sentence_id = fields[0].parse().map_err(|_| CoreError::CorpusFormat {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("bad sentence id '{}'", fields[0]),
        })?;
        let split_list = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        let rec = MltRecord {
            sentence_id,
            word: fields[1].to_string(),
            correct: split_list(fields[2]),
            incorrect: split_list(fields[3]),
        };
        rec.validate().map_err(|e| CoreError::CorpusFormat {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn rec(id: usize, correct: &str, incorrect: &str) -> MltRecord {
        MltRecord {
            sentence_id: id,
            word: "w".into(),
            correct: vec![correct.into()],
            incorrect: vec![incorrect.into()],
        }
    }

    #[test]
    fn endpoints_and_mixed_case() {
        let outputs = vec![toks("the Colline stands"), toks("a slope here"), toks("nothing")];
        let records = vec![rec(0, "colline", "pente"), rec(1, "colline", "slope"), rec(2, "colline", "pente")];
        // record 0 correct, record 1 incorrect, record 2 absent
        assert_eq!(lta(&outputs, &records).unwrap(), 1.0 / 3.0);
        assert_eq!(ali(&outputs, &records).unwrap(), 0.0); // (1 - 1 + 0)/3

        let all_correct = vec![records[0].clone()];
        assert_eq!(lta(&outputs, &all_correct).unwrap(), 1.0);
        assert_eq!(ali(&outputs, &all_correct).unwrap(), 1.0);
        let all_wrong = vec![records[1].clone()];
        assert_eq!(ali(&outputs, &all_wrong).unwrap(), -1.0);
    }

    #[test]
    fn incorrect_candidate_scores_zero_lta() {
        let outputs = vec![toks("a pente here")];
        let records = vec![rec(0, "colline", "pente")];
        assert_eq!(lta(&outputs, &records).unwrap(), 0.0);
    }

    #[test]
    fn correct_wins_when_both_present() {
        let outputs = vec![toks("pente and colline")];
        let records = vec![rec(0, "colline", "pente")];
        assert_eq!(ali(&outputs, &records).unwrap(), 1.0);
    }

    #[test]
    fn unresolvable_sentence_id_rejected() {
        let outputs = vec![toks("a")];
        let records = vec![rec(5, "x", "y")];
        assert!(lta(&outputs, &records).is_err());
    }

    #[test]
    fn order_invariance_and_dominance() {
        let outputs = vec![toks("colline"), toks("pente"), toks("rien")];
        let mut records = vec![rec(0, "colline", "pente"), rec(1, "colline", "pente"), rec(2, "colline", "pente")];
        let l1 = lta(&outputs, &records).unwrap();
        let a1 = ali(&outputs, &records).unwrap();
        records.reverse();
        assert_eq!(lta(&outputs, &records).unwrap(), l1);
        assert_eq!(ali(&outputs, &records).unwrap(), a1);
        assert!(a1 <= l1);
    }

    #[test]
    fn tsv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlt.tsv");
        let records = vec![
            MltRecord {
                sentence_id: 3,
                word: "hill".into(),
                correct: vec!["colline".into(), "butte".into()],
                incorrect: vec!["pente".into()],
            },
            MltRecord {
                sentence_id: 7,
                word: "check".into(),
                correct: vec!["scheck".into()],
                incorrect: vec![],
            },
        ];
        save_mlt_tsv(&records, &path).unwrap();
        assert_eq!(load_mlt_tsv(&path).unwrap(), records);
    }

    #[test]
    fn invalid_record_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlt.tsv");
        std::fs::write(&path, "0\tw\t\tx\n").unwrap();
        assert!(load_mlt_tsv(&path).is_err());
        std::fs::write(&path, "0\tw\tsame\tsame\n").unwrap();
        assert!(load_mlt_tsv(&path).is_err());
    }
}
