//! Word error rate from a unit-cost minimal edit alignment.

use serde::{Deserialize, Serialize};

use super::{tokenize, Result, TextError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn from_counts(s: usize, d: usize, i: usize, n: usize) -> Self {
        Self {
            substitutions: s,
            deletions: d,
            insertions: i,
            ref_len: n,
            wer: (s + d + i) as f64 / n as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// Minimal edit alignment of `hyp` against `reference`. On backtrace ties
/// the diagonal (match/substitution) wins, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for (j, c) in cost.iter_mut().take(w).enumerate() {
        *c = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n.max(m));
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if cost[(i - 1) * w + j - 1] + usize::from(!same) == here {
                ops.push(if same { EditOp::Match } else { EditOp::Substitute });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn breakdown_tokens(reference: &[String], hyp: &[String]) -> WerBreakdown {
    let ops = align(reference, hyp);
    let count = |op| ops.iter().filter(|&&o| o == op).count();
    WerBreakdown::from_counts(
        count(EditOp::Substitute),
        count(EditOp::Delete),
        count(EditOp::Insert),
        reference.len(),
    )
}

pub fn wer(reference: &str, hypothesis: &str) -> Result<WerBreakdown> {
    let r = tokenize(reference);
    if r.is_empty() {
        return Err(TextError::EmptyReference);
    }
    Ok(breakdown_tokens(&r, &tokenize(hypothesis)))
}

/// Corpus-level WER: counts are summed over pairs before dividing.
pub fn wer_corpus<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<WerBreakdown> {
    if pairs.is_empty() {
        return Err(TextError::NoPairs);
    }
    let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
    for (r, h) in pairs {
        let b = wer(r.as_ref(), h.as_ref())?;
        s += b.substitutions;
        d += b.deletions;
        i += b.insertions;
        n += b.ref_len;
    }
    Ok(WerBreakdown::from_counts(s, d, i, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical() {
        let b = wer("what is the dog eating", "what is the dog eating").unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions, b.wer), (0, 0, 0, 0.0));
    }

    #[test]
    fn dropped_word() {
        let b = wer("what is the dog eating", "what is dog eating").unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions, b.ref_len), (0, 1, 0, 5));
        assert_eq!(b.wer, 0.2);
    }

    #[test]
    fn all_substituted() {
        let b = wer("a b", "c d").unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (2, 0, 0));
        assert_eq!(b.wer, 1.0);
    }

    #[test]
    fn may_exceed_one() {
        let b = wer("a", "b c d").unwrap();
        assert_eq!(b.edits(), 3);
        assert_eq!((b.substitutions, b.insertions), (1, 2));
        assert_eq!(b.wer, 3.0);
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "a b" vs "b c": distance 2 either as S+S or D+I; diagonal wins
        let b = wer("a b", "b c").unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (2, 0, 0));
    }

    #[test]
    fn empty_reference() {
        assert!(matches!(wer("", "x"), Err(TextError::EmptyReference)));
        assert!(matches!(wer_corpus::<&str, &str>(&[]), Err(TextError::NoPairs)));
    }

    #[test]
    fn corpus_aggregates_counts() {
        let pairs = [("a b c d e", "a b c d x"), ("p q", "r s")];
        let b = wer_corpus(&pairs).unwrap();
        assert_eq!((b.edits(), b.ref_len), (3, 7));
        assert_eq!(b.wer, 3.0 / 7.0);
        let one = wer_corpus(&[("a b c", "a c")]).unwrap();
        assert_eq!(one, wer("a b c", "a c").unwrap());
        assert_eq!(wer_corpus(&[("x y", "x y"), ("z", "z")]).unwrap().wer, 0.0);
    }
}
