use serde::{Deserialize, Serialize};

use super::tokenize::TokenSeq;

/// Length of the longest common subsequence, by the standard two-row
/// dynamic program in `O(|a|·|b|)` time and `O(min(|a|,|b|))` space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut curr = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// Sentence-level ROUGE-L with β = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeLScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeLScore {
    pub const ZERO: RougeLScore = RougeLScore { precision: 0.0, recall: 0.0, f1: 0.0 };

    pub fn from_counts(lcs: usize, hyp_len: usize, ref_len: usize) -> Self {
        if lcs == 0 || hyp_len == 0 || ref_len == 0 {
            return Self::ZERO;
        }
        let precision = lcs as f64 / hyp_len as f64;
        let recall = lcs as f64 / ref_len as f64;
        let f1 = 2.0 * precision * recall / (precision + recall);
        Self { precision, recall, f1 }
    }
}

pub fn rouge_l(hyp: &TokenSeq, reference: &TokenSeq) -> RougeLScore {
    let lcs = lcs_length(&hyp.tokens, &reference.tokens);
    RougeLScore::from_counts(lcs, hyp.len(), reference.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::LangCode;
    use crate::metrics::tokenize::tokenize;
    use proptest::prelude::*;

    /// Exhaustive oracle: longest subsequence of `a` (over all 2^|a| masks)
    /// that is also a subsequence of `b`.
    fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
        fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
            let mut it = hay.iter();
            needle.iter().all(|c| it.any(|h| h == c))
        }
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let sub: Vec<u8> = a.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &c)| c).collect();
                is_subsequence(&sub, b).then_some(sub.len())
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn classic_example() {
        let a = b"ABCBDAB";
        let b = b"BDCABA";
        assert_eq!(brute_force_lcs(a, b), 4);
        assert_eq!(lcs_length(a, b), 4);
    }

    #[test]
    fn identity_and_disjoint() {
        let x = ["a", "b", "c", "d", "e"];
        assert_eq!(lcs_length(&x, &x), 5);
        assert_eq!(lcs_length(&x, &["v", "w", "x", "y", "z"]), 0);
        assert_eq!(lcs_length::<u8>(&[], &[1, 2]), 0);
    }

    #[test]
    fn spot_value() {
        let hyp = tokenize("the cat sat", &LangCode::En);
        let reference = tokenize("the cat sat on the mat", &LangCode::En);
        let s = rouge_l(&hyp, &reference);
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let empty = tokenize("", &LangCode::En);
        let x = tokenize("a b", &LangCode::En);
        assert_eq!(rouge_l(&empty, &x), RougeLScore::ZERO);
        assert_eq!(rouge_l(&x, &empty), RougeLScore::ZERO);
        assert_eq!(rouge_l(&x, &x).f1, 1.0);
    }

    proptest! {
        #[test]
        fn dp_matches_oracle(
            a in proptest::collection::vec(0u8..4, 0..=10),
            b in proptest::collection::vec(0u8..4, 0..=10),
        ) {
            prop_assert_eq!(lcs_length(&a, &b), brute_force_lcs(&a, &b));
        }

        #[test]
        fn lcs_laws(
            a in proptest::collection::vec(0u8..6, 0..30),
            b in proptest::collection::vec(0u8..6, 0..30),
        ) {
            let l = lcs_length(&a, &b);
            prop_assert_eq!(l, lcs_length(&b, &a));
            prop_assert!(l <= a.len().min(b.len()));
            prop_assert_eq!(lcs_length(&a, &a), a.len());
        }

        #[test]
        fn score_components_bounded(
            h in proptest::collection::vec("[abc]", 0..12),
            r in proptest::collection::vec("[abc]", 0..12),
        ) {
            let s = RougeLScore::from_counts(lcs_length(&h, &r), h.len(), r.len());
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if !h.is_empty() {
                prop_assert_eq!(RougeLScore::from_counts(h.len(), h.len(), h.len()).f1, 1.0);
            }
        }
    }
}
