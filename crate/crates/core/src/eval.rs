//! Strict accuracy and loose (ancestor-closure) micro/macro F1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{LabelHierarchy, LabelPath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub strict_acc: f64,
    pub loose_micro_f1: f64,
    pub loose_macro_f1: f64,
    pub n: usize,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores `(gold, predicted)` pairs.
pub fn evaluate(pairs: &[(LabelPath, LabelPath)], h: &LabelHierarchy) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let n = pairs.len() as f64;
    let (mut exact, mut p_sum, mut r_sum) = (0usize, 0.0, 0.0);
    let (mut inter, mut pred_total, mut gold_total) = (0usize, 0usize, 0usize);
    for (gold, pred) in pairs {
        let g: BTreeSet<usize> = h.closure_indices(h.require(gold)?).into_iter().collect();
        let p: BTreeSet<usize> = h.closure_indices(h.require(pred)?).into_iter().collect();
        let both = g.intersection(&p).count();
        exact += usize::from(g == p);
        p_sum += both as f64 / p.len() as f64;
        r_sum += both as f64 / g.len() as f64;
        inter += both;
        pred_total += p.len();
        gold_total += g.len();
    }
    let micro_p = inter as f64 / pred_total as f64;
    let micro_r = inter as f64 / gold_total as f64;
    Ok(EvalResult {
        strict_acc: exact as f64 / n,
        loose_micro_f1: f1(micro_p, micro_r),
        loose_macro_f1: f1(p_sum / n, r_sum / n),
        n: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(s: &str) -> LabelPath {
        LabelPath::parse(s).unwrap()
    }

    fn hier() -> LabelHierarchy {
        LabelHierarchy::from_strs(["/a", "/a/b", "/a/c", "/c", "/c/d"]).unwrap()
    }

    #[test]
    fn exact_match() {
        let r = evaluate(&[(lp("/a/b"), lp("/a/b"))], &hier()).unwrap();
        assert_eq!((r.strict_acc, r.loose_micro_f1, r.loose_macro_f1, r.n), (1.0, 1.0, 1.0, 1));
    }

    /// Closures {a, b} and {a, c} share one label out of two on each side.
    #[test]
    fn sibling_confusion() {
        let r = evaluate(&[(lp("/a/b"), lp("/a/c"))], &hier()).unwrap();
        assert_eq!((r.strict_acc, r.loose_micro_f1, r.loose_macro_f1), (0.0, 0.5, 0.5));
    }

    /// Pooled: 2 shared labels, 4 predicted, 4 gold. Per example P=R in
    /// {1, 0}, so macro P = R = 0.5.
    #[test]
    fn exact_plus_cross_branch() {
        let pairs = [(lp("/a/b"), lp("/a/b")), (lp("/a/b"), lp("/c/d"))];
        let r = evaluate(&pairs, &hier()).unwrap();
        assert_eq!((r.strict_acc, r.loose_micro_f1, r.loose_macro_f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn coarse_prediction_is_partially_right() {
        // Gold {a, b}, predicted {a}: P = 1, R = 0.5.
        let r = evaluate(&[(lp("/a/b"), lp("/a"))], &hier()).unwrap();
        assert_eq!(r.strict_acc, 0.0);
        assert!((r.loose_macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.loose_micro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[], &hier()).is_err());
        assert!(evaluate(&[(lp("/zzz"), lp("/a"))], &hier()).is_err());
    }

    fn label() -> impl Strategy<Value = LabelPath> {
        prop::sample::select(vec!["/a", "/a/b", "/a/c", "/c", "/c/d"]).prop_map(lp)
    }

    /// Pooling lets a shallow exact match be outweighed by deep misses, so
    /// micro F1 can fall below strict accuracy when closure sizes differ.
    #[test]
    fn micro_can_fall_below_strict_with_mixed_depths() {
        let pairs = [(lp("/c"), lp("/c")), (lp("/a/b"), lp("/c"))];
        let r = evaluate(&pairs, &hier()).unwrap();
        assert_eq!(r.strict_acc, 0.5);
        // P = 1/2, R = 1/3.
        assert!((r.loose_micro_f1 - 0.4).abs() < 1e-15);
        assert_eq!(r.loose_macro_f1, 0.5);
    }

    fn leaf() -> impl Strategy<Value = LabelPath> {
        prop::sample::select(vec!["/a/b", "/a/c", "/c/d"]).prop_map(lp)
    }

    proptest! {
        #[test]
        fn strict_bounded_by_macro(pairs in prop::collection::vec((label(), label()), 1..30)) {
            let r = evaluate(&pairs, &hier()).unwrap();
            prop_assert!(r.strict_acc <= r.loose_macro_f1 + 1e-12);
            for m in [r.strict_acc, r.loose_micro_f1, r.loose_macro_f1] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }

        #[test]
        fn strict_bounded_by_micro_at_uniform_depth(pairs in prop::collection::vec((leaf(), leaf()), 1..30)) {
            let r = evaluate(&pairs, &hier()).unwrap();
            prop_assert!(r.strict_acc <= r.loose_micro_f1 + 1e-12);
        }

        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((label(), label()), 1..20), seed in any::<u64>()) {
            let mut shuffled = pairs.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = evaluate(&pairs, &hier()).unwrap();
            let b = evaluate(&shuffled, &hier()).unwrap();
            prop_assert!((a.strict_acc - b.strict_acc).abs() < 1e-12);
            prop_assert!((a.loose_micro_f1 - b.loose_micro_f1).abs() < 1e-12);
            prop_assert!((a.loose_macro_f1 - b.loose_macro_f1).abs() < 1e-12);
        }
    }
}
