//! Seeded synthetic scenarios.
//!
//! Every scenario shares the base structure `x = 3w + nu1`, `y = 4x + nu2`.
//! Points before `origin` get negative time indices and serve as the
//! training prefix; shift schedules are expressed in time indices.

use alloc::vec::Vec;

use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::types::{Seed, TripletPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    IidLinear,
    /// Upstream noise grows slowly after onset.
    GradualUp,
    RapidUp,
    /// Downstream noise grows slowly after onset.
    GradualDown,
    RapidDown,
    /// Upstream shift on `[b0, b1)`, base on `[b1, b2)`, downstream shift from `b2`.
    ThreePhase,
    /// `w` moves between `N(0,1)`, `N(3,2)`, `N(0,1)` and `N(-3,2)`.
    CovariateShift,
    /// AR(1) features with bounded uniform innovations and noise.
    Ar1Mixing,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::IidLinear,
        ScenarioKind::GradualUp,
        ScenarioKind::RapidUp,
        ScenarioKind::GradualDown,
        ScenarioKind::RapidDown,
        ScenarioKind::ThreePhase,
        ScenarioKind::CovariateShift,
        ScenarioKind::Ar1Mixing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::IidLinear => "IID_LINEAR",
            ScenarioKind::GradualUp => "GRADUAL_UP",
            ScenarioKind::RapidUp => "RAPID_UP",
            ScenarioKind::GradualDown => "GRADUAL_DOWN",
            ScenarioKind::RapidDown => "RAPID_DOWN",
            ScenarioKind::ThreePhase => "THREE_PHASE",
            ScenarioKind::CovariateShift => "COVARIATE_SHIFT",
            ScenarioKind::Ar1Mixing => "AR1_MIXING",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Total number of points, including the prefix.
    pub length: usize,
    /// Index of the point with `t = 0`.
    pub origin: usize,
    pub w_std: f64,
    pub noise1_std: f64,
    pub noise2_std: f64,
    /// First time index with growing noise.
    pub shift_start: i64,
    /// Noise std increment per step, as a fraction of the base std.
    pub shift_rate: f64,
    pub phase_boundaries: [i64; 3],
    pub ar_coef: f64,
    /// Uniform innovations and noise live on `[-h, h]`.
    pub ar_half_width: f64,
    pub ar_burn_in: usize,
    pub seed: Seed,
}

impl ScenarioSpec {
    /// Defaults for `kind`; the base noise std is 0.1 except for the
    /// three-phase and covariate scenarios, which use 1.
    pub fn new(kind: ScenarioKind, length: usize, origin: usize, seed: Seed) -> Self {
        let base = match kind {
            ScenarioKind::ThreePhase | ScenarioKind::CovariateShift => 1.0,
            _ => 0.1,
        };
        let shift_rate = match kind {
            ScenarioKind::GradualUp | ScenarioKind::GradualDown => 0.005,
            ScenarioKind::RapidUp | ScenarioKind::RapidDown => 0.05,
            _ => 0.0,
        };
        Self {
            kind,
            length,
            origin,
            w_std: base,
            noise1_std: base,
            noise2_std: base,
            shift_start: 0,
            shift_rate,
            phase_boundaries: [100, 500, 900],
            ar_coef: 0.8,
            ar_half_width: 0.5,
            ar_burn_in: 100,
            seed,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise1_std = 0.0;
        self.noise2_std = 0.0;
        self.ar_half_width = 0.0;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.origin > self.length {
            return Err(Error::InvalidSpec("origin beyond length"));
        }
        if [self.w_std, self.noise1_std, self.noise2_std, self.shift_rate, self.ar_half_width]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidSpec("scales and rates must be finite and non-negative"));
        }
        if !(Float::abs(self.ar_coef) < 1.0) {
            return Err(Error::InvalidSpec("AR coefficient must lie in (-1, 1)"));
        }
        let b = self.phase_boundaries;
        if !(b[0] <= b[1] && b[1] <= b[2]) {
            return Err(Error::InvalidSpec("phase boundaries must be non-decreasing"));
        }
        let t_max = self.length as i64 - self.origin as i64;
        let shifted = !matches!(self.kind, ScenarioKind::IidLinear | ScenarioKind::Ar1Mixing);
        let schedule_ok = match self.kind {
            ScenarioKind::ThreePhase | ScenarioKind::CovariateShift => b[0] >= 0 && b[2] <= t_max,
            _ => self.shift_start >= -(self.origin as i64) && self.shift_start <= t_max,
        };
        if shifted && !schedule_ok {
            return Err(Error::InvalidSpec("shift schedule outside the series"));
        }
        Ok(())
    }

    /// Noise std multiplier at time `t` for the growing-noise scenarios.
    pub fn noise_scale(&self, t: i64) -> f64 {
        if t < self.shift_start {
            1.0
        } else {
            1.0 + self.shift_rate * (t - self.shift_start) as f64
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    Normal::new(mean, std).expect("validated std").sample(rng)
}

fn uniform(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    if h == 0.0 {
        return 0.0;
    }
    Uniform::new_inclusive(-h, h).expect("validated width").sample(rng)
}

pub fn generate(spec: &ScenarioSpec) -> Result<Vec<TripletPoint>> {
    spec.validate()?;
    let mut rng = spec.seed.rng();
    let mut ar_state = 0.0;
    if spec.kind == ScenarioKind::Ar1Mixing {
        for _ in 0..spec.ar_burn_in {
            ar_state = spec.ar_coef * ar_state + uniform(&mut rng, spec.ar_half_width);
        }
    }
    let [b0, b1, b2] = spec.phase_boundaries;
    let mut points = Vec::with_capacity(spec.length);
    for i in 0..spec.length {
        let t = i as i64 - spec.origin as i64;
        let point = match spec.kind {
            ScenarioKind::IidLinear => {
                let w = normal(&mut rng, 0.0, spec.w_std);
                let x = 3.0 * w + normal(&mut rng, 0.0, spec.noise1_std);
                let y = 4.0 * x + normal(&mut rng, 0.0, spec.noise2_std);
                TripletPoint::scalar(w, x, y)
            }
            ScenarioKind::GradualUp | ScenarioKind::RapidUp => {
                let s = spec.noise_scale(t);
                let w = normal(&mut rng, 0.0, spec.w_std);
                let x = 3.0 * w + normal(&mut rng, 0.0, spec.noise1_std * s);
                let y = 4.0 * x + normal(&mut rng, 0.0, spec.noise2_std);
                TripletPoint::scalar(w, x, y)
            }
            ScenarioKind::GradualDown | ScenarioKind::RapidDown => {
                let s = spec.noise_scale(t);
                let w = normal(&mut rng, 0.0, spec.w_std);
                let x = 3.0 * w + normal(&mut rng, 0.0, spec.noise1_std);
                let y = 4.0 * x + normal(&mut rng, 0.0, spec.noise2_std * s);
                TripletPoint::scalar(w, x, y)
            }
            ScenarioKind::ThreePhase => {
                let w = normal(&mut rng, 0.0, spec.w_std);
                let nu1 = normal(&mut rng, 0.0, spec.noise1_std);
                let nu2 = normal(&mut rng, 0.0, spec.noise2_std);
                let x = if (b0..b1).contains(&t) { 8.0 * w + 1.0 + nu1 } else { 3.0 * w + nu1 };
                let y = if t >= b2 { 7.0 * x + 5.0 + nu2 } else { 4.0 * x + nu2 };
                TripletPoint::scalar(w, x, y)
            }
            ScenarioKind::CovariateShift => {
                let (mean, std) = if t < b0 {
                    (0.0, 1.0)
                } else if t < b1 {
                    (3.0, 2.0)
                } else if t < b2 {
                    (0.0, 1.0)
                } else {
                    (-3.0, 2.0)
                };
                let w = normal(&mut rng, mean, std * spec.w_std);
                let x = 3.0 * w + normal(&mut rng, 0.0, spec.noise1_std);
                let y = 4.0 * x + normal(&mut rng, 0.0, spec.noise2_std);
                TripletPoint::scalar(w, x, y)
            }
            ScenarioKind::Ar1Mixing => {
                ar_state = spec.ar_coef * ar_state + uniform(&mut rng, spec.ar_half_width);
                let w = ar_state;
                let x = 3.0 * w + uniform(&mut rng, spec.ar_half_width);
                let y = 4.0 * x + uniform(&mut rng, spec.ar_half_width);
                TripletPoint::scalar(w, x, y)
            }
        };
        points.push(point.at(t));
    }
    Ok(points)
}

/// `phi(i) = coef^i` for `i = 1..=n`, a mixing-coefficient sequence for
/// geometrically ergodic processes.
pub fn geometric_mixing(coef: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut v = 1.0;
    for _ in 0..n {
        v *= coef;
        out.push(v);
    }
    out
}
