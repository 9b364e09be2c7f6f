//! Risk control over a grid of scaling coefficients.
//!
//! Each candidate `(a, b)` is tested against the null "miscoverage exceeds
//! `alpha + tau`" on the calibration set; a family-wise procedure turns the
//! p-values into the validated set.

use alloc::vec::Vec;
use core::cmp::Reverse;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::intervals::{AbstentionPolicy, ComponentQuantiles, ConformalSet, PredictionInterval};
use crate::quantiles::QuantileLevel;
use crate::types::ScoredPoint;

/// Guards `floor(l * risk)` against `l * risk` landing just below an integer.
const COUNT_SLACK: f64 = 1e-9;

/// Ordered candidate set of `(a, b)` pairs with fixed quantile levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    candidates: Vec<(f64, f64)>,
    c: QuantileLevel,
    d: QuantileLevel,
}

impl LambdaGrid {
    /// Sorts the candidates into testing order: descending `a + b`, then
    /// descending `a`.
    pub fn new(mut candidates: Vec<(f64, f64)>, c: QuantileLevel, d: QuantileLevel) -> Result<Self> {
        if candidates.iter().any(|&(a, b)| !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b)) {
            return Err(Error::InvalidSpec("grid coefficients must lie in [0, 1]"));
        }
        // Quantised keys keep the comparator a total order despite rounding
        // in a + b.
        let key = |v: f64| Float::round(v * 1e9) as i64;
        candidates.sort_by_key(|&(a, b)| (Reverse(key(a + b)), Reverse(key(a))));
        Ok(Self { candidates, c, d })
    }

    /// `a, b in {0, 1/steps, ..., 1}`.
    pub fn regular(steps: usize, c: QuantileLevel, d: QuantileLevel) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSpec("grid needs at least one step"));
        }
        let values: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        let candidates = values.iter().flat_map(|&a| values.iter().map(move |&b| (a, b))).collect();
        Self::new(candidates, c, d)
    }

    /// The 11 x 11 grid with step 0.1.
    pub fn default_grid(c: QuantileLevel, d: QuantileLevel) -> Self {
        Self::regular(10, c, d).expect("static grid is valid")
    }

    pub fn candidates(&self) -> &[(f64, f64)] {
        &self.candidates
    }

    pub fn c(&self) -> QuantileLevel {
        self.c
    }

    pub fn d(&self) -> QuantileLevel {
        self.d
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FwerAlgorithm {
    #[default]
    FixedSequence,
    Bonferroni,
}

/// How a candidate's p-value is computed.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RiskTest {
    #[default]
    Binomial,
    /// Concentration bound for a stationary phi-mixing sequence.
    Mixing(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub alpha: f64,
    pub delta: f64,
    pub tau: f64,
    pub test: RiskTest,
    pub fwer: FwerAlgorithm,
}

impl CalibrationSettings {
    pub fn new(alpha: f64, delta: f64) -> Self {
        Self { alpha, delta, tau: 0.0, test: RiskTest::Binomial, fwer: FwerAlgorithm::FixedSequence }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_test(mut self, test: RiskTest) -> Self {
        self.test = test;
        self
    }

    pub fn with_fwer(mut self, fwer: FwerAlgorithm) -> Self {
        self.fwer = fwer;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateRecord {
    pub lambda: (f64, f64),
    pub empirical_risk: f64,
    pub p_value: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationVerdict {
    pub records: Vec<CandidateRecord>,
}

impl CalibrationVerdict {
    /// Accepted candidates in testing order. Empty means abstain.
    pub fn lambda_val(&self) -> Vec<(f64, f64)> {
        self.records.iter().filter(|r| r.accepted).map(|r| r.lambda).collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.records.iter().any(|r| r.accepted)
    }

    pub fn contains(&self, lambda: (f64, f64)) -> bool {
        self.records.iter().any(|r| r.accepted && r.lambda == lambda)
    }
}

/// Fraction of calibration points the interval misses.
pub fn empirical_risk<F>(cal: &[ScoredPoint], policy: AbstentionPolicy, mut interval: F) -> Result<f64>
where
    F: FnMut(&ScoredPoint) -> PredictionInterval,
{
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let misses = cal.iter().filter(|p| !interval(p).covers(p.y, policy)).count();
    Ok(misses as f64 / cal.len() as f64)
}

/// `P(Bin(l, alpha + tau) <= floor(l * risk_hat))`, summed in log space.
pub fn binomial_p_value(l: usize, alpha: f64, tau: f64, risk_hat: f64) -> Result<f64> {
    let p = alpha + tau;
    if l == 0 || !(p > 0.0 && p < 1.0) || tau < 0.0 {
        return Err(Error::InvalidLevel(p));
    }
    if !risk_hat.is_finite() {
        return Err(Error::NonFinite);
    }
    let j = Float::floor(l as f64 * risk_hat + COUNT_SLACK);
    if j < 0.0 {
        return Ok(0.0);
    }
    let j = j as usize;
    if j >= l {
        return Ok(1.0);
    }
    Ok(binomial_cdf(l, p, j))
}

fn binomial_cdf(n: usize, p: f64, j: usize) -> f64 {
    let log_odds = Float::ln(p) - Float::ln_1p(-p);
    let mut log_pmf = Vec::with_capacity(n + 1);
    let mut current = n as f64 * Float::ln_1p(-p);
    log_pmf.push(current);
    for i in 0..n {
        current += Float::ln((n - i) as f64 / (i + 1) as f64) + log_odds;
        log_pmf.push(current);
    }
    // Sum whichever tail is smaller so values near one keep their precision.
    if (j as f64) < n as f64 * p {
        Float::min(log_sum_exp(&log_pmf[..=j]), 1.0)
    } else {
        Float::max(1.0 - log_sum_exp(&log_pmf[j + 1..]), 0.0)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let sum: f64 = terms.iter().map(|t| Float::exp(t - max)).sum();
    Float::exp(max + Float::ln(sum))
}

/// `min(1, 2 exp(-2 l eps^2 / Delta^2))` with `Delta = 1 + sum(phi)` and
/// `eps = max(0, alpha - risk_hat)`.
pub fn mixing_p_value(l: usize, alpha: f64, risk_hat: f64, phi: &[f64]) -> Result<f64> {
    if phi.iter().any(|v| !v.is_finite() || *v < 0.0) || phi.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidMixingCoefficients);
    }
    if l == 0 || !alpha.is_finite() {
        return Err(Error::InvalidLevel(alpha));
    }
    let spread = 1.0 + phi.iter().sum::<f64>();
    let eps = Float::max(alpha - risk_hat, 0.0);
    Ok(Float::min(2.0 * Float::exp(-2.0 * l as f64 * eps * eps / (spread * spread)), 1.0))
}

/// Indices with `p <= delta / u`.
pub fn bonferroni(p_values: &[f64], delta: f64) -> Vec<usize> {
    let threshold = delta / p_values.len().max(1) as f64;
    (0..p_values.len()).filter(|&i| p_values[i] <= threshold).collect()
}

/// The longest prefix with every `p <= delta`.
pub fn fixed_sequence_test(p_values: &[f64], delta: f64) -> Vec<usize> {
    (0..p_values.len()).take_while(|&i| p_values[i] <= delta).collect()
}

fn candidate_p_value(l: usize, level: f64, risk: f64, test: &RiskTest) -> Result<f64> {
    // Outside (0, 1) the null "risk > level" is trivially true (level <= 0)
    // or impossible (level >= 1).
    if level <= 0.0 {
        return Ok(1.0);
    }
    if level >= 1.0 {
        return Ok(0.0);
    }
    match test {
        RiskTest::Binomial => binomial_p_value(l, level, 0.0, risk),
        RiskTest::Mixing(phi) => mixing_p_value(l, level, risk, phi),
    }
}

/// Tests every candidate `y_hat ± (a q1 + b q2)` on `cal`.
///
/// `settings.alpha` may leave `(0, 1)` under online updates: at or below
/// zero nothing is accepted, at or above one everything is.
pub fn calibrate_with_quantiles(
    candidates: &[(f64, f64)],
    quantiles: ComponentQuantiles,
    cal: &[ScoredPoint],
    settings: &CalibrationSettings,
) -> Result<CalibrationVerdict> {
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let level = settings.alpha + settings.tau;
    let mut records = Vec::with_capacity(candidates.len());
    for &(a, b) in candidates {
        let h = quantiles.half_width(a, b);
        let risk = empirical_risk(cal, AbstentionPolicy::Algorithmic, |p| {
            PredictionInterval::symmetric(p.y_hat, h)
        })?;
        let p_value = candidate_p_value(cal.len(), level, risk, &settings.test)?;
        records.push(CandidateRecord { lambda: (a, b), empirical_risk: risk, p_value, accepted: false });
    }
    let p_values: Vec<f64> = records.iter().map(|r| r.p_value).collect();
    let accepted = match settings.fwer {
        FwerAlgorithm::FixedSequence => fixed_sequence_test(&p_values, settings.delta),
        FwerAlgorithm::Bonferroni => bonferroni(&p_values, settings.delta),
    };
    for i in accepted {
        records[i].accepted = true;
    }
    Ok(CalibrationVerdict { records })
}

/// Quantiles from `conf` at the grid's levels, tested on `cal`.
pub fn calibrate(
    grid: &LambdaGrid,
    conf: &ConformalSet,
    cal: &[ScoredPoint],
    settings: &CalibrationSettings,
) -> Result<CalibrationVerdict> {
    calibrate_with_quantiles(grid.candidates(), conf.component_quantiles(grid.c, grid.d), cal, settings)
}

/// Among accepted candidates, the one whose coverage on `conf` is closest
/// to `1 - alpha`; ties go to the narrower interval. `None` abstains.
pub fn select_lambda_nonadaptive(
    lambda_val: &[(f64, f64)],
    conf: &[ScoredPoint],
    quantiles: ComponentQuantiles,
    alpha: f64,
) -> Option<(f64, f64)> {
    let mut best: Option<((f64, f64), f64, f64)> = None;
    for &(a, b) in lambda_val {
        let h = quantiles.half_width(a, b);
        let coverage = if conf.is_empty() {
            1.0
        } else {
            1.0 - empirical_risk(conf, AbstentionPolicy::Reporting, |p| PredictionInterval::symmetric(p.y_hat, h))
                .unwrap_or(1.0)
        };
        let gap = Float::abs(coverage - (1.0 - alpha));
        let better = match best {
            None => true,
            Some((_, g, w)) => gap < g || (gap == g && h < w),
        };
        if better {
            best = Some(((a, b), gap, h));
        }
    }
    best.map(|(lambda, _, _)| lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lv(x: f64) -> QuantileLevel {
        QuantileLevel::new(x).unwrap()
    }

    #[test]
    fn grid_order() {
        let g = LambdaGrid::default_grid(lv(0.05), lv(0.05));
        assert_eq!(g.len(), 121);
        assert_eq!(g.candidates()[0], (1.0, 1.0));
        assert_eq!(g.candidates()[1], (1.0, 0.9));
        assert_eq!(g.candidates()[2], (0.9, 1.0));
        assert_eq!(*g.candidates().last().unwrap(), (0.0, 0.0));
        for w in g.candidates().windows(2) {
            let (s0, s1) = (w[0].0 + w[0].1, w[1].0 + w[1].1);
            assert!(s0 > s1 - 1e-9);
        }
        assert!(LambdaGrid::new(vec![(1.5, 0.0)], lv(0.1), lv(0.1)).is_err());
    }

    #[test]
    fn risk_counting() {
        let cal: Vec<ScoredPoint> = (0..10).map(|i| ScoredPoint::new(i, f64::from(i as i32), 0.0, 0.0)).collect();
        let all = empirical_risk(&cal, AbstentionPolicy::Reporting, |p| PredictionInterval::symmetric(p.y_hat, 100.0));
        assert_eq!(all, Ok(0.0));
        let none = empirical_risk(&cal, AbstentionPolicy::Reporting, |_| PredictionInterval::symmetric(-5.0, 1.0));
        assert_eq!(none, Ok(1.0));
        // points 7, 8, 9 fall outside [-6.5, 6.5]
        let three = empirical_risk(&cal, AbstentionPolicy::Reporting, |_| PredictionInterval::symmetric(0.0, 6.5));
        assert_eq!(three, Ok(0.3));
        assert_eq!(
            empirical_risk(&[], AbstentionPolicy::Reporting, |_| PredictionInterval::symmetric(0.0, 1.0)),
            Err(Error::EmptyCalibration)
        );
    }

    #[test]
    fn binomial_examples() {
        let p = binomial_p_value(10, 0.1, 0.0, 0.0).unwrap();
        assert!((p - 0.9f64.powi(10)).abs() < 1e-12);
        assert_eq!(binomial_p_value(10, 0.1, 0.0, 1.0).unwrap(), 1.0);
        assert!(binomial_p_value(10, 0.0, 0.0, 0.0).is_err());
        assert!(binomial_p_value(10, 0.6, 0.4, 0.0).is_err());
    }

    #[test]
    fn mixing_examples() {
        assert_eq!(mixing_p_value(100, 0.1, 0.2, &[]).unwrap(), 1.0);
        // 2 exp(-0.5) exceeds one and is capped
        assert_eq!(mixing_p_value(100, 0.1, 0.05, &[0.0, 0.0]).unwrap(), 1.0);
        let p = mixing_p_value(400, 0.1, 0.05, &[0.0, 0.0]).unwrap();
        assert!((p - 2.0 * (-2.0f64).exp()).abs() < 1e-12);
        let mut prev = 1.0;
        for l in [100, 200, 400, 800, 1600] {
            let p = mixing_p_value(l, 0.1, 0.05, &[0.5, 0.25]).unwrap();
            assert!(p <= prev);
            prev = p;
        }
        assert!(mixing_p_value(100_000, 0.1, 0.05, &[0.5, 0.25]).unwrap() < 1e-12);
        assert_eq!(mixing_p_value(10, 0.1, 0.0, &[0.1, 0.2]), Err(Error::InvalidMixingCoefficients));
        assert_eq!(mixing_p_value(10, 0.1, 0.0, &[-0.1]), Err(Error::InvalidMixingCoefficients));
    }

    #[test]
    fn fwer_rules() {
        assert_eq!(bonferroni(&[0.01, 0.2], 0.05), vec![0]);
        assert!(bonferroni(&[1.0, 1.0], 0.05).is_empty());
        assert_eq!(bonferroni(&[0.0, 0.0, 0.0], 0.05), vec![0, 1, 2]);
        assert_eq!(fixed_sequence_test(&[0.01, 0.02, 0.5, 0.03], 0.05), vec![0, 1]);
        assert!(fixed_sequence_test(&[0.2, 0.01], 0.05).is_empty());
        assert_eq!(fixed_sequence_test(&[0.01, 0.05], 0.05), vec![0, 1]);
    }

    fn cal_points(residuals: &[f64]) -> Vec<ScoredPoint> {
        residuals.iter().enumerate().map(|(i, &r)| ScoredPoint::new(i as i64, r, 0.0, 0.0)).collect()
    }

    #[test]
    fn calibration_accepts_wide_prefix() {
        let cal = cal_points(&[0.5; 100]);
        let q = ComponentQuantiles { delta_r1: 1.0, r2: 1.0 };
        let grid = LambdaGrid::default_grid(lv(0.1), lv(0.1));
        let settings = CalibrationSettings::new(0.1, 0.1);
        let v = calibrate_with_quantiles(grid.candidates(), q, &cal, &settings).unwrap();
        let val = v.lambda_val();
        // every candidate with a + b >= 0.5 covers all points
        assert!(val.iter().all(|&(a, b)| a + b >= 0.5 - 1e-12));
        assert!(val.contains(&(0.3, 0.2)));
        assert!(!v.contains((0.2, 0.2)));
    }

    #[test]
    fn calibration_levels_outside_unit_interval() {
        let cal = cal_points(&[0.5; 20]);
        let q = ComponentQuantiles { delta_r1: 1.0, r2: 1.0 };
        let cands = [(1.0, 1.0), (0.0, 0.0)];
        let low = calibrate_with_quantiles(&cands, q, &cal, &CalibrationSettings::new(-0.01, 0.1)).unwrap();
        assert!(low.is_empty());
        let high = calibrate_with_quantiles(&cands, q, &cal, &CalibrationSettings::new(1.0, 0.1)).unwrap();
        assert_eq!(high.lambda_val().len(), 2);
    }

    #[test]
    fn nonadaptive_selection() {
        assert_eq!(select_lambda_nonadaptive(&[], &[], ComponentQuantiles { delta_r1: 1.0, r2: 1.0 }, 0.1), None);
        let conf = cal_points(&(1..=100).map(f64::from).collect::<Vec<_>>());
        let q = ComponentQuantiles { delta_r1: 100.0, r2: 0.0 };
        assert_eq!(select_lambda_nonadaptive(&[(0.5, 0.0)], &conf, q, 0.1), Some((0.5, 0.0)));
        // half-widths 92 and 97 cover 0.92 and 0.97 of conf
        assert_eq!(select_lambda_nonadaptive(&[(0.97, 0.0), (0.92, 0.0)], &conf, q, 0.1), Some((0.92, 0.0)));
    }
}
