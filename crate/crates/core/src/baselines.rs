//! Comparison methods on the total residual `R`: split conformal, weighted
//! split conformal, and four online level or threshold trackers.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::adaptive::{AdaptiveConformal, StepRecord};
use crate::error::{Error, Result};
use crate::intervals::{AbstentionPolicy, PredictionInterval};
use crate::quantiles::{weighted_quantile, QuantileLevel, SortedScores};
use crate::residuals::ResidualComponents;
use crate::types::ScoredPoint;

/// Anything that emits one interval per step from the preceding window.
pub trait OnlineMethod {
    fn step(&mut self, window: &[ScoredPoint], point: &ScoredPoint) -> Result<StepRecord>;
}

impl OnlineMethod for AdaptiveConformal {
    fn step(&mut self, window: &[ScoredPoint], point: &ScoredPoint) -> Result<StepRecord> {
        AdaptiveConformal::step(self, window, point)
    }
}

/// Runs `method` over `stream[k..]` with windows of the `k` preceding points.
pub fn run_online<M: OnlineMethod + ?Sized>(method: &mut M, stream: &[ScoredPoint], k: usize) -> Result<Vec<StepRecord>> {
    if k == 0 || stream.len() < k {
        return Err(Error::WindowTooShort { t: stream.len(), k });
    }
    (k..stream.len()).map(|t| method.step(&stream[t - k..t], &stream[t])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Sc,
    Wsc,
    Aci,
    DtAci,
    Pid,
    Ocid,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] =
        [BaselineKind::Sc, BaselineKind::Wsc, BaselineKind::Aci, BaselineKind::DtAci, BaselineKind::Pid, BaselineKind::Ocid];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Sc => "SC",
            BaselineKind::Wsc => "WSC",
            BaselineKind::Aci => "ACI",
            BaselineKind::DtAci => "DTACI",
            BaselineKind::Pid => "PID",
            BaselineKind::Ocid => "OCID",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub alpha: f64,
    /// WSC weight of a point `age` steps old is `wsc_decay^age`.
    pub wsc_decay: f64,
    pub aci_gamma: f64,
    pub dtaci_gammas: Vec<f64>,
    /// Local horizon `I` behind the DtACI defaults for `sigma` and `eta`.
    pub dtaci_horizon: usize,
    pub dtaci_sigma: Option<f64>,
    pub dtaci_eta: Option<f64>,
    /// PID proportional step, in units of the score scale `B`.
    pub pid_gamma: f64,
    pub pid_ki: f64,
    /// Saturation level; `None` uses `B`, the largest score in the first window.
    pub pid_csat: Option<f64>,
    pub ocid_gamma0: f64,
    pub ocid_decay: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            wsc_decay: 0.99,
            aci_gamma: 0.01,
            dtaci_gammas: vec![0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128],
            dtaci_horizon: 100,
            dtaci_sigma: None,
            dtaci_eta: None,
            pid_gamma: 0.01,
            pid_ki: 0.1,
            pid_csat: None,
            ocid_gamma0: 0.1,
            ocid_decay: 0.1,
        }
    }
}

impl BaselineParams {
    fn dtaci_sigma(&self) -> f64 {
        self.dtaci_sigma.unwrap_or(1.0 / (2.0 * self.dtaci_horizon as f64))
    }

    fn dtaci_eta(&self) -> f64 {
        self.dtaci_eta.unwrap_or_else(|| {
            let i = self.dtaci_horizon as f64;
            let n = self.dtaci_gammas.len() as f64;
            let a = self.alpha;
            Float::sqrt(3.0 / i) * Float::sqrt((Float::ln(n * i) + 2.0) / ((1.0 - a) * (1.0 - a) * a * a * a))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineState {
    Sc,
    Wsc,
    Aci { alpha_t: f64 },
    DtAci { levels: Vec<f64>, weights: Vec<f64> },
    Pid { p: f64, integral: f64, scale: Option<f64> },
    Ocid { alpha_t: f64, steps: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub params: BaselineParams,
    pub state: BaselineState,
}

impl Baseline {
    pub fn new(kind: BaselineKind, params: BaselineParams) -> Self {
        let a = params.alpha;
        let state = match kind {
            BaselineKind::Sc => BaselineState::Sc,
            BaselineKind::Wsc => BaselineState::Wsc,
            BaselineKind::Aci => BaselineState::Aci { alpha_t: a },
            BaselineKind::DtAci => {
                let n = params.dtaci_gammas.len();
                BaselineState::DtAci { levels: vec![a; n], weights: vec![1.0 / n as f64; n] }
            }
            BaselineKind::Pid => BaselineState::Pid { p: f64::NAN, integral: 0.0, scale: None },
            BaselineKind::Ocid => BaselineState::Ocid { alpha_t: a, steps: 0 },
        };
        Self { kind, params, state }
    }
}

fn scores(window: &[ScoredPoint]) -> Vec<f64> {
    window.iter().map(|p| ResidualComponents::from(p).r_total).collect()
}

/// Interval at working miscoverage `level`: abstain at or below zero, empty
/// at or above one.
pub fn level_interval(sorted: &SortedScores, level: f64, center: f64) -> PredictionInterval {
    if level <= 0.0 {
        PredictionInterval::abstained(center)
    } else if level >= 1.0 {
        PredictionInterval::empty(center)
    } else {
        PredictionInterval::symmetric(center, sorted.quantile(QuantileLevel(level)))
    }
}

/// Interval from a tracked threshold; a negative threshold is empty.
fn threshold_interval(q: f64, center: f64) -> PredictionInterval {
    if q < 0.0 {
        PredictionInterval::empty(center)
    } else {
        PredictionInterval::symmetric(center, q)
    }
}

fn err(interval: &PredictionInterval, y: f64) -> f64 {
    if interval.covers(y, AbstentionPolicy::Algorithmic) {
        0.0
    } else {
        1.0
    }
}

fn pinball(beta: f64, theta: f64, alpha: f64) -> f64 {
    alpha * (beta - theta) - Float::min(beta - theta, 0.0)
}

/// Largest miscoverage level whose conformal interval still contains the
/// score `s`: `(m + 2 - j) / (m + 1)` with `j = #{S_i < s} + 1`.
fn covering_level(sorted: &SortedScores, s: f64) -> f64 {
    let m = sorted.len() as f64;
    let j = sorted.as_slice().partition_point(|&v| v < s) as f64 + 1.0;
    (m + 2.0 - j) / (m + 1.0)
}

pub fn baseline_step(baseline: &mut Baseline, window: &[ScoredPoint], point: &ScoredPoint) -> Result<StepRecord> {
    if window.is_empty() {
        return Err(Error::EmptyScores);
    }
    let params = &baseline.params;
    let alpha = params.alpha;
    let raw = scores(window);
    let sorted = SortedScores::new(&raw)?;
    let center = point.y_hat;
    let y = point.y;
    let s = ResidualComponents::from(point).r_total;

    let (interval, level) = match &mut baseline.state {
        BaselineState::Sc => (level_interval(&sorted, alpha, center), alpha),
        BaselineState::Wsc => {
            let n = raw.len();
            let weights: Vec<f64> = (0..n).map(|i| Float::powi(params.wsc_decay, (n - 1 - i) as i32)).collect();
            let q = weighted_quantile(&raw, &weights, QuantileLevel(alpha))?;
            (PredictionInterval::symmetric(center, q), alpha)
        }
        BaselineState::Aci { alpha_t } => {
            let level = *alpha_t;
            let iv = level_interval(&sorted, level, center);
            *alpha_t += params.aci_gamma * (alpha - err(&iv, y));
            (iv, level)
        }
        BaselineState::DtAci { levels, weights } => {
            let total: f64 = weights.iter().sum();
            let mixed: f64 = levels.iter().zip(weights.iter()).map(|(l, w)| l * w / total).sum();
            let level = Float::min(Float::max(mixed, 0.0), 1.0);
            let iv = level_interval(&sorted, level, center);
            let beta = covering_level(&sorted, s);
            let (eta, sigma) = (params.dtaci_eta(), params.dtaci_sigma());
            let n = levels.len() as f64;
            let mut reweighted: Vec<f64> =
                levels.iter().zip(weights.iter()).map(|(l, w)| w * Float::exp(-eta * pinball(beta, *l, alpha))).collect();
            let sum: f64 = reweighted.iter().sum();
            for w in reweighted.iter_mut() {
                *w = (1.0 - sigma) * *w / sum + sigma / n;
            }
            *weights = reweighted;
            for (l, g) in levels.iter_mut().zip(params.dtaci_gammas.iter()) {
                let e = err(&level_interval(&sorted, *l, center), y);
                *l += g * (alpha - e);
            }
            (iv, level)
        }
        BaselineState::Pid { p, integral, scale } => {
            let b = *scale.get_or_insert_with(|| sorted.as_slice().last().copied().unwrap_or(0.0));
            if p.is_nan() {
                *p = sorted.quantile(QuantileLevel(alpha));
                if p.is_infinite() {
                    *p = b;
                }
            }
            let csat = params.pid_csat.unwrap_or(b);
            let q = *p + csat * Float::tanh(params.pid_ki * *integral);
            let iv = threshold_interval(q, center);
            let e = err(&iv, y);
            *p += params.pid_gamma * b * (e - alpha);
            *integral += e - alpha;
            (iv, f64::NAN)
        }
        BaselineState::Ocid { alpha_t, steps } => {
            let level = *alpha_t;
            let iv = level_interval(&sorted, level, center);
            *steps += 1;
            let gamma = params.ocid_gamma0 * Float::powf(*steps as f64, -(0.5 + params.ocid_decay));
            *alpha_t += gamma * (alpha - err(&iv, y));
            (iv, level)
        }
    };
    Ok(StepRecord::basic(point.t, y, interval, level))
}

impl OnlineMethod for Baseline {
    fn step(&mut self, window: &[ScoredPoint], point: &ScoredPoint) -> Result<StepRecord> {
        baseline_step(self, window, point)
    }
}
