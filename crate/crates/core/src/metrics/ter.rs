//! Translation edit rate with the standard greedy block-shift search.
//! Exact TER is NP-hard; this is the usual greedy approximation: repeatedly
//! apply the single block move that most reduces word edit distance (each
//! move costs one shift), then divide total edits by the reference length.

use crate::error::{CoreError, Result};

/// Word-level Levenshtein distance (insert/delete/substitute, unit cost).
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, aw) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bw) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(aw != bw);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn contains_block(reference: &[String], block: &[String]) -> bool {
    reference.len() >= block.len() && reference.windows(block.len()).any(|w| w == block)
}

/// One greedy pass: the block move (restricted to blocks that occur in the
/// reference) that most reduces edit distance. Scan order is longest block
/// first, then leftmost source position, then leftmost insertion point, so
/// ties resolve deterministically.
fn best_shift(hyp: &[String], reference: &[String], current: usize) -> Option<(Vec<String>, usize)> {
    let mut best: Option<(Vec<String>, usize)> = None;
    let mut best_d = current;
    for len in (1..=hyp.len()).rev() {
        for start in 0..=hyp.len() - len {
            let block = &hyp[start..start + len];
            if !contains_block(reference, block) {
                continue;
            }
            let mut rest: Vec<String> = Vec::with_capacity(hyp.len() - len);
            rest.extend_from_slice(&hyp[..start]);
            rest.extend_from_slice(&hyp[start + len..]);
            for insert in 0..=rest.len() {
                if insert == start {
                    continue; // no-op move
                }
                let mut cand = Vec::with_capacity(hyp.len());
                cand.extend_from_slice(&rest[..insert]);
                cand.extend_from_slice(block);
                cand.extend_from_slice(&rest[insert..]);
                let d = edit_distance(&cand, reference);
                if d < best_d {
                    best_d = d;
                    best = Some((cand, d));
                }
            }
        }
    }
    best
}

/// TER = (edits + shifts) / reference length.
pub fn ter(hypothesis: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(CoreError::InvalidArgument("ter: empty reference".into()));
    }
    let (edits, shifts) = ter_counts(hypothesis, reference);
    Ok((edits + shifts) as f64 / reference.len() as f64)
}

/// Raw (edit, shift) counts, additive across sentences for corpus pooling.
pub fn ter_counts(hypothesis: &[String], reference: &[String]) -> (usize, usize) {
    let mut hyp = hypothesis.to_vec();
    let mut dist = edit_distance(&hyp, reference);
    let mut shifts = 0;
    while dist > 0 {
        match best_shift(&hyp, reference, dist) {
            Some((new_hyp, new_dist)) => {
                hyp = new_hyp;
                dist = new_dist;
                shifts += 1;
            }
            None => break,
        }
    }
    (dist, shifts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_sentences_are_zero() {
        assert_eq!(ter(&toks("a b c d"), &toks("a b c d")).unwrap(), 0.0);
    }

    #[test]
    fn single_substitution_in_four_words() {
        assert_eq!(ter(&toks("a b X d"), &toks("a b c d")).unwrap(), 0.25);
    }

    #[test]
    fn block_move_costs_one_shift() {
        // two-word block displaced within a six-word sentence: 1 shift, 1/6
        let got = ter(&toks("c d a b e f"), &toks("a b c d e f")).unwrap();
        assert!((got - 1.0 / 6.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn shift_only_taken_when_it_helps() {
        // no block of the hypothesis appears in the reference: plain edits
        let got = ter(&toks("x y"), &toks("a b c d")).unwrap();
        assert_eq!(got, 1.0); // 2 substitutions + 2 insertions over 4
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(ter(&toks("a"), &[]).is_err());
    }
}
