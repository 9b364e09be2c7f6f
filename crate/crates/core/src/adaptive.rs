//! Online recalibration on a sliding window.
//!
//! Each step re-estimates component quantiles on the conf half of the last
//! `k` points, tests the grid on the cal half at the working level `alpha_t`,
//! picks `(a_t, b_t)` and then updates `alpha_t`, `c_t`, `d_t` from the
//! observed coverage.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::intervals::{AbstentionPolicy, ConformalSet, PredictionInterval};
use crate::quantiles::QuantileLevel;
use crate::residuals::ResidualComponents;
use crate::risk_control::{calibrate_with_quantiles, CalibrationSettings, FwerAlgorithm, LambdaGrid, RiskTest};
use crate::types::{conf_split_point, ScoredPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    /// Target miscoverage.
    pub alpha: f64,
    /// Initial working level; defaults to `alpha`.
    pub alpha_init: f64,
    pub gamma: f64,
    pub eta: f64,
    pub k: usize,
    pub conf_ratio: f64,
    pub delta: f64,
    pub tau: f64,
    pub c_init: f64,
    pub d_init: f64,
    pub a_init: f64,
    pub b_init: f64,
    pub test: RiskTest,
    pub fwer: FwerAlgorithm,
    /// Grid coefficients; levels stored on the grid are ignored.
    pub grid: Vec<(f64, f64)>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        let level = QuantileLevel::new(0.05).expect("finite");
        Self {
            alpha: 0.1,
            alpha_init: 0.1,
            gamma: 0.01,
            eta: 0.01,
            k: 100,
            conf_ratio: 0.5,
            delta: 0.1,
            tau: 0.0,
            c_init: 0.05,
            d_init: 0.05,
            a_init: 1.0,
            b_init: 1.0,
            test: RiskTest::Binomial,
            fwer: FwerAlgorithm::FixedSequence,
            grid: LambdaGrid::default_grid(level, level).candidates().to_vec(),
        }
    }
}

impl AdaptiveConfig {
    fn validate(&self) -> Result<()> {
        for v in [self.alpha, self.alpha_init, self.c_init, self.d_init] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidLevel(v));
            }
        }
        if !(self.gamma >= 0.0 && self.eta >= 0.0 && self.tau >= 0.0) {
            return Err(Error::InvalidSpec("gamma, eta and tau must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.a_init) || !(0.0..=1.0).contains(&self.b_init) {
            return Err(Error::InvalidSpec("initial (a, b) must lie in [0, 1]^2"));
        }
        let n_conf = conf_split_point(self.k, self.conf_ratio);
        if self.k < 2 || n_conf == 0 || n_conf == self.k || !(0.0..=1.0).contains(&self.conf_ratio) {
            return Err(Error::InvalidSpec("window must split into non-empty conf and cal halves"));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidSpec("empty grid"));
        }
        Ok(())
    }
}

/// Coverage signals observed after a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentCoverage {
    /// Algorithmic-policy coverage of the emitted interval.
    pub covered: bool,
    /// `max(0, dR1_t - threshold)`.
    pub cov_dr1: f64,
    pub cov_r2: f64,
}

fn excess(value: f64, threshold: f64) -> f64 {
    if threshold.is_infinite() {
        0.0
    } else {
        Float::max(value - threshold, 0.0)
    }
}

pub fn component_coverage(
    components: &ResidualComponents,
    dr1_threshold: f64,
    r2_threshold: f64,
    interval: &PredictionInterval,
    y: f64,
) -> ComponentCoverage {
    ComponentCoverage {
        covered: interval.covers(y, AbstentionPolicy::Algorithmic),
        cov_dr1: excess(components.delta_r1, dr1_threshold),
        cov_r2: excess(components.r2, r2_threshold),
    }
}

/// `alpha_t + gamma (alpha - err_t)`.
pub fn update_alpha(alpha_t: f64, gamma: f64, err: f64, target_alpha: f64) -> f64 {
    alpha_t + gamma * (target_alpha - err)
}

/// Everything `select_lambda_adaptive` looks at besides the validated set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionContext {
    pub prev: (f64, f64),
    pub mean_dr1: f64,
    pub mean_r2: f64,
    /// Signals from the previous step; `None` before the first step.
    pub prev_coverage: Option<ComponentCoverage>,
    /// No upstream excess over the last `k` steps (and at least `k` steps seen).
    pub dr1_clean: bool,
    pub r2_clean: bool,
    pub c_t: f64,
    pub d_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LevelStep {
    Widen,
    Hold,
    Tighten,
}

impl LevelStep {
    pub fn sign(self) -> f64 {
        match self {
            LevelStep::Widen => -1.0,
            LevelStep::Hold => 0.0,
            LevelStep::Tighten => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaChoice {
    pub a: f64,
    pub b: f64,
    pub delta_c: LevelStep,
    pub delta_d: LevelStep,
}

fn tighten(clean: bool, level: f64) -> LevelStep {
    if clean && level < 1.0 {
        LevelStep::Tighten
    } else {
        LevelStep::Hold
    }
}

fn widen(excess: f64, level: f64) -> LevelStep {
    if excess > 0.0 && level > 0.0 {
        LevelStep::Widen
    } else {
        LevelStep::Hold
    }
}

fn nearest(lambda_val: &[(f64, f64)], target: (f64, f64)) -> Option<(f64, f64)> {
    let dist = |p: &(f64, f64)| (p.0 - target.0) * (p.0 - target.0) + (p.1 - target.1) * (p.1 - target.1);
    lambda_val.iter().copied().fold(None, |best, p| match best {
        Some(b) if dist(&b) <= dist(&p) => Some(b),
        _ => Some(p),
    })
}

/// Smallest value of `coord` above `prev_coord`; ties take the other
/// coordinate closest to its previous value.
fn step_up(
    lambda_val: &[(f64, f64)],
    prev: (f64, f64),
    coord: fn(&(f64, f64)) -> f64,
    other: fn(&(f64, f64)) -> f64,
) -> Option<(f64, f64)> {
    let prev_coord = coord(&prev);
    let prev_other = other(&prev);
    lambda_val.iter().copied().filter(|p| coord(p) > prev_coord).fold(None, |best, p| match best {
        None => Some(p),
        Some(b) => {
            let key = |q: &(f64, f64)| (coord(q), Float::abs(other(q) - prev_other));
            let (kb, kp) = (key(&b), key(&p));
            if kp.0 < kb.0 || (kp.0 == kb.0 && kp.1 < kb.1) {
                Some(p)
            } else {
                Some(b)
            }
        }
    })
}

/// Picks `(a_t, b_t)` and the level steps for `c` and `d`.
///
/// Widening is only emitted when the component exceeded its threshold on
/// the previous step and its level is positive; tightening only after a
/// whole clean window with the level below one. Together these keep
/// `c_t, d_t` within `[-eta, 1 + eta]`.
pub fn select_lambda_adaptive(lambda_val: &[(f64, f64)], ctx: &SelectionContext) -> LambdaChoice {
    let prev_cov = ctx.prev_coverage.unwrap_or(ComponentCoverage { covered: true, cov_dr1: 0.0, cov_r2: 0.0 });
    let keep_or_nearest = || {
        if lambda_val.contains(&ctx.prev) {
            ctx.prev
        } else {
            nearest(lambda_val, ctx.prev).unwrap_or(ctx.prev)
        }
    };
    if prev_cov.covered {
        let (a, b) = keep_or_nearest();
        return LambdaChoice {
            a,
            b,
            delta_c: tighten(ctx.dr1_clean, ctx.c_t),
            delta_d: tighten(ctx.r2_clean, ctx.d_t),
        };
    }
    let widest = lambda_val.first().copied().unwrap_or(ctx.prev);
    if ctx.mean_dr1 > ctx.mean_r2 {
        match step_up(lambda_val, ctx.prev, |p| p.0, |p| p.1) {
            Some((a, b)) => LambdaChoice { a, b, delta_c: LevelStep::Hold, delta_d: tighten(ctx.r2_clean, ctx.d_t) },
            None => LambdaChoice {
                a: widest.0,
                b: widest.1,
                delta_c: widen(prev_cov.cov_dr1, ctx.c_t),
                delta_d: tighten(ctx.r2_clean, ctx.d_t),
            },
        }
    } else {
        match step_up(lambda_val, ctx.prev, |p| p.1, |p| p.0) {
            Some((a, b)) => LambdaChoice { a, b, delta_c: tighten(ctx.dr1_clean, ctx.c_t), delta_d: LevelStep::Hold },
            None => LambdaChoice {
                a: widest.0,
                b: widest.1,
                delta_c: tighten(ctx.dr1_clean, ctx.c_t),
                delta_d: widen(prev_cov.cov_r2, ctx.d_t),
            },
        }
    }
}

/// Mutable state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub alpha_t: f64,
    pub a_t: f64,
    pub b_t: f64,
    pub c_t: f64,
    pub d_t: f64,
    pub gamma: f64,
    pub eta: f64,
    pub k: usize,
    history: VecDeque<ComponentCoverage>,
}

impl AdaptiveState {
    pub fn new(config: &AdaptiveConfig) -> Self {
        Self {
            alpha_t: config.alpha_init,
            a_t: config.a_init,
            b_t: config.b_init,
            c_t: config.c_init,
            d_t: config.d_init,
            gamma: config.gamma,
            eta: config.eta,
            k: config.k,
            history: VecDeque::with_capacity(config.k),
        }
    }

    pub fn last_coverage(&self) -> Option<ComponentCoverage> {
        self.history.back().copied()
    }

    fn clean(&self, pick: fn(&ComponentCoverage) -> f64) -> bool {
        self.history.len() >= self.k && self.history.iter().all(|h| pick(h) == 0.0)
    }

    fn push(&mut self, cov: ComponentCoverage) {
        if self.history.len() == self.k {
            self.history.pop_front();
        }
        self.history.push_back(cov);
    }
}

/// One emitted interval plus the state it was produced under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: i64,
    pub y: f64,
    pub interval: PredictionInterval,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha_t: f64,
    pub mean_dr1: f64,
    pub mean_r2: f64,
}

impl StepRecord {
    /// A record with only the interval-related fields set.
    pub fn basic(t: i64, y: f64, interval: PredictionInterval, alpha_t: f64) -> Self {
        Self {
            t,
            y,
            interval,
            a: f64::NAN,
            b: f64::NAN,
            c: f64::NAN,
            d: f64::NAN,
            alpha_t,
            mean_dr1: f64::NAN,
            mean_r2: f64::NAN,
        }
    }

    pub fn covered(&self, policy: AbstentionPolicy) -> bool {
        self.interval.covers(self.y, policy)
    }

    pub fn abstained(&self) -> bool {
        self.interval.is_abstained()
    }
}

/// Window means of `(dR1, R2)`.
pub fn window_means(window: &[ScoredPoint]) -> (f64, f64) {
    let n = window.len().max(1) as f64;
    let (s1, s2) = window.iter().map(ResidualComponents::from).fold((0.0, 0.0), |(s1, s2), c| {
        (s1 + c.delta_r1, s2 + c.r2)
    });
    (s1 / n, s2 / n)
}

#[derive(Debug, Clone)]
pub struct AdaptiveConformal {
    config: AdaptiveConfig,
    state: AdaptiveState,
}

impl AdaptiveConformal {
    pub fn new(config: AdaptiveConfig) -> Result<Self> {
        config.validate()?;
        let state = AdaptiveState::new(&config);
        let mut config = config;
        // Testing order is part of the procedure, not of the caller's input.
        config.grid = LambdaGrid::new(config.grid, QuantileLevel::new(0.0)?, QuantileLevel::new(0.0)?)?
            .candidates()
            .to_vec();
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.config
    }

    pub fn state(&self) -> &AdaptiveState {
        &self.state
    }

    /// Emits the interval for `point` from the `k` preceding points, then
    /// observes `point.y` and updates the state.
    pub fn step(&mut self, window: &[ScoredPoint], point: &ScoredPoint) -> Result<StepRecord> {
        let cfg = &self.config;
        if window.len() < cfg.k {
            return Err(Error::WindowTooShort { t: window.len(), k: cfg.k });
        }
        let window = &window[window.len() - cfg.k..];
        let (conf, cal) = window.split_at(conf_split_point(cfg.k, cfg.conf_ratio));
        let st = &self.state;

        let set = ConformalSet::new(conf)?;
        let quantiles = set.component_quantiles(QuantileLevel::new(st.c_t)?, QuantileLevel::new(st.d_t)?);
        let settings = CalibrationSettings::new(st.alpha_t, cfg.delta)
            .with_tau(cfg.tau)
            .with_test(cfg.test.clone())
            .with_fwer(cfg.fwer);
        let verdict = calibrate_with_quantiles(&cfg.grid, quantiles, cal, &settings)?;
        let lambda_val = verdict.lambda_val();

        let (mean_dr1, mean_r2) = window_means(window);
        let ctx = SelectionContext {
            prev: (st.a_t, st.b_t),
            mean_dr1,
            mean_r2,
            prev_coverage: st.last_coverage(),
            dr1_clean: st.clean(|h| h.cov_dr1),
            r2_clean: st.clean(|h| h.cov_r2),
            c_t: st.c_t,
            d_t: st.d_t,
        };
        let choice = select_lambda_adaptive(&lambda_val, &ctx);

        let interval = if st.alpha_t <= 0.0 || lambda_val.is_empty() {
            PredictionInterval::abstained(point.y_hat)
        } else if st.alpha_t >= 1.0 {
            PredictionInterval::empty(point.y_hat)
        } else {
            PredictionInterval::symmetric(point.y_hat, quantiles.half_width(choice.a, choice.b))
        };

        let record = StepRecord {
            t: point.t,
            y: point.y,
            interval,
            a: choice.a,
            b: choice.b,
            c: st.c_t,
            d: st.d_t,
            alpha_t: st.alpha_t,
            mean_dr1,
            mean_r2,
        };

        let components = ResidualComponents::from(point);
        let cov = component_coverage(&components, quantiles.delta_r1, quantiles.r2, &interval, point.y);
        let err = if cov.covered { 0.0 } else { 1.0 };
        let alpha = cfg.alpha;
        let st = &mut self.state;
        st.alpha_t = update_alpha(st.alpha_t, st.gamma, err, alpha);
        st.a_t = choice.a;
        st.b_t = choice.b;
        st.c_t += st.eta * choice.delta_c.sign();
        st.d_t += st.eta * choice.delta_d.sign();
        st.push(cov);
        Ok(record)
    }
}

/// Runs the online procedure over `stream[k..]`.
pub fn run_adaptive(stream: &[ScoredPoint], config: AdaptiveConfig) -> Result<Vec<StepRecord>> {
    let k = config.k;
    if stream.len() < k {
        return Err(Error::WindowTooShort { t: stream.len(), k });
    }
    let mut method = AdaptiveConformal::new(config)?;
    (k..stream.len()).map(|t| method.step(&stream[t - k..t], &stream[t])).collect()
}

/// `(max(alpha_1, 1 - alpha_1) + gamma) / (gamma T)`.
pub fn regret_bound(alpha_init: f64, gamma: f64, steps: usize) -> f64 {
    (Float::max(alpha_init, 1.0 - alpha_init) + gamma) / (gamma * steps as f64)
}
