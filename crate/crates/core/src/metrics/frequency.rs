//! Training-frequency analysis of system output words: how frequent in the
//! training data are the words a system emits? Reported as a percentile
//! table suitable for plotting.

use std::collections::HashMap;

/// Word counts over one corpus side.
pub fn word_frequencies(sentences: &[Vec<String>]) -> HashMap<String, u64> {
    let mut freq = HashMap::new();
    for sent in sentences {
        for tok in sent {
            *freq.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    freq
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    /// (percentile, frequency) at 5-point steps, 0..=100, nearest-rank.
    pub percentiles: Vec<(u8, u64)>,
    pub word_count: usize,
    pub mean_frequency: f64,
}

/// Per output-token training frequency (0 for words absent from training),
/// summarized by percentiles.
pub fn frequency_report(
    outputs: &[Vec<String>],
    train_side: &[Vec<String>],
) -> FrequencyReport {
    let table = word_frequencies(train_side);
    let mut freqs: Vec<u64> = outputs
        .iter()
        .flat_map(|sent| sent.iter())
        .map(|tok| table.get(tok).copied().unwrap_or(0))
        .collect();
    freqs.sort_unstable();
    let percentiles = (0..=20)
        .map(|step| {
            let p = (step * 5) as u8;
            (p, nearest_rank(&freqs, p))
        })
        .collect();
    let mean = if freqs.is_empty() {
        0.0
    } else {
        freqs.iter().sum::<u64>() as f64 / freqs.len() as f64
    };
    FrequencyReport {
        percentiles,
        word_count: freqs.len(),
        mean_frequency: mean,
    }
}

fn nearest_rank(sorted: &[u64], percentile: u8) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    if percentile == 0 {
        return sorted[0];
    }
    let rank = ((percentile as f64 / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl FrequencyReport {
    /// CSV with the fixed v1 header `percentile,frequency`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("percentile,frequency\n");
        for (p, f) in &self.percentiles {
            out.push_str(&format!("{p},{f}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn absent_word_has_frequency_zero() {
        let train = vec![toks("a a b")];
        let rep = frequency_report(&[toks("zzz")], &train);
        assert_eq!(rep.percentiles[0].1, 0);
        assert_eq!(rep.percentiles.last().unwrap().1, 0);
    }

    #[test]
    fn percentiles_monotone_nondecreasing() {
        let train = vec![toks("a a a a b b c")];
        let outputs = vec![toks("a b c zzz a")];
        let rep = frequency_report(&outputs, &train);
        for w in rep.percentiles.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert_eq!(rep.word_count, 5);
    }

    #[test]
    fn matches_brute_force_count_oracle() {
        // oracle: count each word by scanning the whole corpus
        let train: Vec<Vec<String>> = (0..100)
            .map(|i| toks(&format!("w{} w{} common", i % 7, i % 3)))
            .collect();
        let outputs = vec![toks("w0 w1 common absent w2")];
        let oracle = |word: &str| -> u64 {
            train
                .iter()
                .map(|s| s.iter().filter(|t| *t == word).count() as u64)
                .sum()
        };
        let table = word_frequencies(&train);
        for w in ["w0", "w1", "w2", "common", "absent"] {
            assert_eq!(table.get(w).copied().unwrap_or(0), oracle(w), "word {w}");
        }
        let rep = frequency_report(&outputs, &train);
        let mut expect: Vec<u64> = outputs[0].iter().map(|w| oracle(w)).collect();
        expect.sort_unstable();
        assert_eq!(rep.percentiles[0].1, expect[0]);
        assert_eq!(rep.percentiles.last().unwrap().1, *expect.last().unwrap());
    }
}
