//! Interval constructions over a conformal set of residual components.
//!
//! All symmetric constructions share the form
//! `y_hat ± (a · Q_{1-c}{dR1} + b · Q_{1-d}{R2})`; split conformal uses the
//! total residual instead. A zero weight masks its component even when the
//! quantile is infinite.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::predictors::TwoStageModel;
use crate::quantiles::{signed_lower_quantile, signed_upper_quantile, QuantileLevel, SortedScores};
use crate::residuals::{ResidualComponents, SignedResidualComponents};
use crate::types::{ScoredPoint, TripletPoint};

/// How an abstained (infinite) interval counts when checking coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AbstentionPolicy {
    /// The infinite interval covers everything. Used by the online updates.
    Algorithmic,
    /// Abstention counts as a miss. Used for reported coverage.
    #[default]
    Reporting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalKind {
    Covered { lo: f64, hi: f64 },
    /// No finite interval: the method declines to predict.
    Abstained,
    /// The empty set, emitted when the working miscoverage level reaches 1.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub kind: IntervalKind,
    pub center: f64,
    pub half_width: f64,
}

impl PredictionInterval {
    /// `center ± half_width`; an infinite half-width abstains.
    pub fn symmetric(center: f64, half_width: f64) -> Self {
        if half_width.is_infinite() {
            return Self::abstained(center);
        }
        Self { kind: IntervalKind::Covered { lo: center - half_width, hi: center + half_width }, center, half_width }
    }

    /// Explicit endpoints; an infinite endpoint abstains.
    pub fn asymmetric(center: f64, lo: f64, hi: f64) -> Self {
        if lo.is_infinite() || hi.is_infinite() {
            return Self::abstained(center);
        }
        if lo > hi {
            return Self::empty(center);
        }
        Self { kind: IntervalKind::Covered { lo, hi }, center, half_width: (hi - lo) / 2.0 }
    }

    pub fn abstained(center: f64) -> Self {
        Self { kind: IntervalKind::Abstained, center, half_width: f64::INFINITY }
    }

    pub fn empty(center: f64) -> Self {
        Self { kind: IntervalKind::Empty, center, half_width: 0.0 }
    }

    pub fn is_abstained(&self) -> bool {
        matches!(self.kind, IntervalKind::Abstained)
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            IntervalKind::Covered { lo, hi } => (lo, hi),
            IntervalKind::Abstained => (f64::NEG_INFINITY, f64::INFINITY),
            IntervalKind::Empty => (self.center, self.center),
        }
    }

    pub fn width(&self) -> f64 {
        match self.kind {
            IntervalKind::Covered { lo, hi } => hi - lo,
            IntervalKind::Abstained => f64::INFINITY,
            IntervalKind::Empty => 0.0,
        }
    }

    pub fn covers(&self, y: f64, policy: AbstentionPolicy) -> bool {
        covers(self, y, policy)
    }
}

pub fn covers(interval: &PredictionInterval, y: f64, policy: AbstentionPolicy) -> bool {
    match interval.kind {
        IntervalKind::Covered { lo, hi } => lo <= y && y <= hi,
        IntervalKind::Abstained => policy == AbstentionPolicy::Algorithmic,
        IntervalKind::Empty => false,
    }
}

/// `weight · quantile`, with a zero weight masking an infinite quantile.
pub fn scaled(weight: f64, quantile: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * quantile
    }
}

/// Scaling coefficients `(a, b)`, quantile levels `(c, d)` and target `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingConfig {
    pub a: f64,
    pub b: f64,
    pub c: QuantileLevel,
    pub d: QuantileLevel,
    pub alpha: f64,
}

impl ScalingConfig {
    pub fn new(a: f64, b: f64, c: f64, d: f64, alpha: f64) -> Result<Self> {
        for w in [a, b] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidLevel(w));
            }
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidLevel(alpha));
        }
        Ok(Self { a, b, c: QuantileLevel::new(c)?, d: QuantileLevel::new(d)?, alpha })
    }

    /// Scaled-component form: both quantiles at `alpha`.
    pub fn scaled_at(a: f64, b: f64, alpha: f64) -> Result<Self> {
        Self::new(a, b, alpha, alpha, alpha)
    }
}

/// `(Q_{1-c}{dR1}, Q_{1-d}{R2})` for one choice of levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentQuantiles {
    pub delta_r1: f64,
    pub r2: f64,
}

impl ComponentQuantiles {
    pub fn half_width(&self, a: f64, b: f64) -> f64 {
        scaled(a, self.delta_r1) + scaled(b, self.r2)
    }
}

/// Residual components of a conformal set, sorted for repeated queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalSet {
    total: SortedScores,
    delta_r1: SortedScores,
    r2: SortedScores,
    upstream_signed: Vec<f64>,
    r2_signed: Vec<f64>,
}

impl ConformalSet {
    pub fn new(conf: &[ScoredPoint]) -> Result<Self> {
        if conf.is_empty() {
            return Err(Error::EmptyScores);
        }
        let comps: Vec<ResidualComponents> = conf.iter().map(ResidualComponents::from).collect();
        let signed: Vec<SignedResidualComponents> = conf.iter().map(SignedResidualComponents::from).collect();
        let pick = |f: fn(&ResidualComponents) -> f64| -> Vec<f64> { comps.iter().map(f).collect() };
        Ok(Self {
            total: SortedScores::new(&pick(|c| c.r_total))?,
            delta_r1: SortedScores::new(&pick(|c| c.delta_r1))?,
            r2: SortedScores::new(&pick(|c| c.r2))?,
            // y - y_hat = r2_signed - delta_r1_signed, so the upstream
            // contribution to the signed error is -delta_r1_signed.
            upstream_signed: signed.iter().map(|s| -s.delta_r1_signed).collect(),
            r2_signed: signed.iter().map(|s| s.r2_signed).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn total(&self) -> &SortedScores {
        &self.total
    }

    pub fn delta_r1(&self) -> &SortedScores {
        &self.delta_r1
    }

    pub fn r2(&self) -> &SortedScores {
        &self.r2
    }

    pub fn component_quantiles(&self, c: QuantileLevel, d: QuantileLevel) -> ComponentQuantiles {
        ComponentQuantiles { delta_r1: self.delta_r1.quantile(c), r2: self.r2.quantile(d) }
    }

    pub fn split_conformal(&self, alpha: QuantileLevel, center: f64) -> PredictionInterval {
        PredictionInterval::symmetric(center, self.total.quantile(alpha))
    }

    pub fn separate(&self, c: QuantileLevel, d: QuantileLevel, center: f64) -> PredictionInterval {
        PredictionInterval::symmetric(center, self.component_quantiles(c, d).half_width(1.0, 1.0))
    }

    pub fn unified(&self, cfg: &ScalingConfig, center: f64) -> PredictionInterval {
        PredictionInterval::symmetric(center, self.component_quantiles(cfg.c, cfg.d).half_width(cfg.a, cfg.b))
    }

    /// Asymmetric interval from the signed components, two-sided tails
    /// `c / 2` and `d / 2`.
    pub fn signed(&self, cfg: &ScalingConfig, center: f64) -> Result<PredictionInterval> {
        let (c, d) = (cfg.c.value() / 2.0, cfg.d.value() / 2.0);
        let lo = center
            + scaled(cfg.a, signed_lower_quantile(&self.upstream_signed, c)?)
            + scaled(cfg.b, signed_lower_quantile(&self.r2_signed, d)?);
        let hi = center
            + scaled(cfg.a, signed_upper_quantile(&self.upstream_signed, c)?)
            + scaled(cfg.b, signed_upper_quantile(&self.r2_signed, d)?);
        Ok(PredictionInterval::asymmetric(center, lo, hi))
    }
}

fn conformal_set<M: TwoStageModel + ?Sized>(p: &M, conf: &[TripletPoint]) -> Result<ConformalSet> {
    if conf.is_empty() {
        return Err(Error::EmptyScores);
    }
    ConformalSet::new(&p.score_all(conf)?)
}

/// Standard split conformal on the total residual.
pub fn interval_split_conformal<M: TwoStageModel + ?Sized>(
    p: &M,
    conf: &[TripletPoint],
    alpha: QuantileLevel,
    w: &[f64],
) -> Result<PredictionInterval> {
    let set = conformal_set(p, conf)?;
    let (_, center) = p.predict_pipeline(w)?;
    Ok(set.split_conformal(alpha, center))
}

/// `y_hat ± (Q_{1-c}{dR1} + Q_{1-d}{R2})`; covers with probability at least
/// `1 - c - d` under exchangeability.
pub fn interval_separate<M: TwoStageModel + ?Sized>(
    p: &M,
    conf: &[TripletPoint],
    c: QuantileLevel,
    d: QuantileLevel,
    w: &[f64],
) -> Result<PredictionInterval> {
    let set = conformal_set(p, conf)?;
    let (_, center) = p.predict_pipeline(w)?;
    Ok(set.separate(c, d, center))
}

pub fn interval_unified<M: TwoStageModel + ?Sized>(
    p: &M,
    conf: &[TripletPoint],
    cfg: &ScalingConfig,
    w: &[f64],
) -> Result<PredictionInterval> {
    let set = conformal_set(p, conf)?;
    let (_, center) = p.predict_pipeline(w)?;
    Ok(set.unified(cfg, center))
}

pub fn interval_signed<M: TwoStageModel + ?Sized>(
    p: &M,
    conf: &[TripletPoint],
    cfg: &ScalingConfig,
    w: &[f64],
) -> Result<PredictionInterval> {
    let set = conformal_set(p, conf)?;
    let (_, center) = p.predict_pipeline(w)?;
    set.signed(cfg, center)
}
