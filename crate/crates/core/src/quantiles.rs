//! Conformal order-statistic quantiles.
//!
//! With `m` scores and miscoverage `level`, the conformal threshold is the
//! `k`-th smallest score, `k = ceil((m + 1)(1 - level))`. Out-of-range ranks
//! have fixed meanings: `level < 0` or `k > m` gives `+inf` (the caller
//! abstains), `k <= 0` gives `0`.

use alloc::vec::Vec;


use num_traits::Float;

use crate::error::{Error, Result};

/// Slack absorbed when turning `(m + 1)(1 - level)` into an integer rank, so
/// that decimal levels such as `0.1` do not round up a whole rank.
const RANK_SLACK: f64 = 1e-9;

/// A miscoverage level. Adaptive updates may push it outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(pub(crate) f64);

impl QuantileLevel {
    pub fn new(level: f64) -> Result<Self> {
        if level.is_finite() {
            Ok(Self(level))
        } else {
            Err(Error::InvalidLevel(level))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(level: f64) -> Result<Self> {
        Self::new(level)
    }
}

/// Target mass `(1 - level)(total + 1)`, already slackened.
fn target_mass(level: f64, total: f64) -> f64 {
    let v = total * (1.0 - level);
    v - RANK_SLACK * v.abs().max(1.0)
}

/// 1-based conformal rank for `m` scores; `None` means `+inf`.
pub(crate) fn conformal_rank(m: usize, level: f64) -> Option<usize> {
    if level < 0.0 {
        return None;
    }
    let v = target_mass(level, (m + 1) as f64);
    if v <= 0.0 {
        return Some(0);
    }
    let k = Float::ceil(v) as usize;
    if k > m {
        None
    } else {
        Some(k)
    }
}

/// Conformal-corrected upper quantile of non-negative scores.
pub fn conformal_quantile(scores: &[f64], level: QuantileLevel) -> Result<f64> {
    check_scores(scores)?;
    Ok(match conformal_rank(scores.len(), level.0) {
        None => f64::INFINITY,
        Some(0) => 0.0,
        Some(k) => kth_smallest(scores, k),
    })
}

/// Weighted conformal quantile.
///
/// Weights are normalised as `p_i / (1 + sum p)` and the remaining
/// `1 / (1 + sum p)` sits at `+inf` (the test point). The result is the
/// smallest score whose cumulative normalised weight reaches `1 - level`.
/// With every weight equal to one this coincides with [`conformal_quantile`].
pub fn weighted_quantile(scores: &[f64], weights: &[f64], level: QuantileLevel) -> Result<f64> {
    if scores.len() != weights.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: weights.len() });
    }
    check_scores(scores)?;
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::NonFinite);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let level = level.0;
    if level < 0.0 {
        return Ok(f64::INFINITY);
    }
    let target = target_mass(level, total + 1.0);
    if target <= 0.0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut cumulative = 0.0;
    for i in order {
        cumulative += weights[i];
        if cumulative >= target {
            return Ok(scores[i]);
        }
    }
    Ok(f64::INFINITY)
}

/// Upper tail of signed scores: the conformal `k`-th smallest (may be
/// negative), `+inf` when the rank overflows.
pub fn signed_upper_quantile(scores: &[f64], tail: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(match conformal_rank(scores.len(), tail) {
        None => f64::INFINITY,
        Some(0) => f64::NEG_INFINITY,
        Some(k) => kth_smallest(scores, k),
    })
}

/// Lower tail of signed scores, mirrored: the `k`-th largest with the same
/// rank rule, `-inf` when the rank overflows.
pub fn signed_lower_quantile(scores: &[f64], tail: f64) -> Result<f64> {
    let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
    signed_upper_quantile(&negated, tail).map(|q| -q)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn kth_smallest(scores: &[f64], k: usize) -> f64 {
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Scores sorted once, for repeated quantile queries at different levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedScores {
    sorted: Vec<f64>,
}

impl SortedScores {
    pub fn new(scores: &[f64]) -> Result<Self> {
        check_scores(scores)?;
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sorted
    }

    /// Same result as [`conformal_quantile`] on the unsorted scores.
    pub fn quantile(&self, level: QuantileLevel) -> f64 {
        match conformal_rank(self.sorted.len(), level.0) {
            None => f64::INFINITY,
            Some(0) => 0.0,
            Some(k) => self.sorted[k - 1],
        }
    }

    /// Number of scores strictly greater than `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&s| s <= threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lv(x: f64) -> QuantileLevel {
        QuantileLevel::new(x).unwrap()
    }

    #[test]
    fn nine_scores_at_ten_percent() {
        let s: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(conformal_quantile(&s, lv(0.1)).unwrap(), 9.0);
        assert_eq!(conformal_quantile(&s, lv(0.5)).unwrap(), 5.0);
    }

    #[test]
    fn too_few_scores_give_infinity() {
        assert_eq!(conformal_quantile(&[1.0, 2.0, 3.0, 4.0], lv(0.1)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn degenerate_levels() {
        let s = [3.0, 1.0, 2.0];
        assert_eq!(conformal_quantile(&s, lv(1.0)).unwrap(), 0.0);
        assert_eq!(conformal_quantile(&s, lv(1.7)).unwrap(), 0.0);
        assert_eq!(conformal_quantile(&s, lv(-0.01)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_scores() {
        assert_eq!(conformal_quantile(&[], lv(0.1)), Err(Error::EmptyScores));
        assert_eq!(weighted_quantile(&[], &[], lv(0.1)), Err(Error::EmptyScores));
    }

    #[test]
    fn ties_count_individually() {
        let s = [1.0, 1.0, 1.0, 5.0];
        // k = ceil(5 * 0.6) = 3
        assert_eq!(conformal_quantile(&s, lv(0.4)).unwrap(), 1.0);
        // k = ceil(5 * 0.8) = 4
        assert_eq!(conformal_quantile(&s, lv(0.2)).unwrap(), 5.0);
    }

    #[test]
    fn weighted_all_mass_on_last() {
        let s = [1.0, 2.0, 3.0];
        let w = [0.0, 0.0, 1.0];
        // normalised: 0.5 on the score 3, 0.5 at +inf
        assert_eq!(weighted_quantile(&s, &w, lv(0.5)).unwrap(), 3.0);
        assert_eq!(weighted_quantile(&s, &w, lv(0.4)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn weighted_single_point() {
        assert_eq!(weighted_quantile(&[2.0], &[3.0], lv(0.25)).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&[2.0], &[3.0], lv(0.2)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn weighted_errors() {
        assert_eq!(weighted_quantile(&[1.0], &[1.0, 2.0], lv(0.1)), Err(Error::LengthMismatch { left: 1, right: 2 }));
        assert_eq!(weighted_quantile(&[1.0, 2.0], &[0.0, 0.0], lv(0.1)), Err(Error::AllZeroWeights));
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let s = vec![0.3, 2.2, 1.1, 0.9, 4.0, 2.2, 0.0];
        let w = vec![1.0; s.len()];
        for level in [-0.2, 0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 0.9, 1.0, 1.3] {
            assert_eq!(
                weighted_quantile(&s, &w, lv(level)).unwrap(),
                conformal_quantile(&s, lv(level)).unwrap(),
                "level {level}"
            );
        }
    }

    #[test]
    fn sorted_scores_agree() {
        let s = [0.5, 3.0, 1.5, 2.0, 0.1];
        let sorted = SortedScores::new(&s).unwrap();
        for level in [-1.0, 0.0, 0.1, 0.2, 0.5, 0.99, 1.0] {
            assert_eq!(sorted.quantile(lv(level)), conformal_quantile(&s, lv(level)).unwrap());
        }
        assert_eq!(sorted.count_above(1.5), 2);
        assert_eq!(sorted.count_above(f64::INFINITY), 0);
    }

    #[test]
    fn signed_tails() {
        let s = [-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0];
        // tail 0.1: k = ceil(10 * 0.9) = 9
        assert_eq!(signed_upper_quantile(&s, 0.1).unwrap(), 4.0);
        assert_eq!(signed_lower_quantile(&s, 0.1).unwrap(), -4.0);
        assert_eq!(signed_upper_quantile(&s, 0.05).unwrap(), f64::INFINITY);
        assert_eq!(signed_lower_quantile(&s, 0.05).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_negative_or_nan() {
        assert_eq!(conformal_quantile(&[1.0, -1.0], lv(0.1)), Err(Error::NonFinite));
        assert_eq!(conformal_quantile(&[f64::NAN], lv(0.1)), Err(Error::NonFinite));
        assert!(QuantileLevel::new(f64::NAN).is_err());
    }
}
