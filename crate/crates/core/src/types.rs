//! Shared records: observations, dataset splits, seeds.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use num_traits::Float;

use crate::error::{Error, Result};

/// One observation `(w, x, y)` of a two-stage pipeline.
///
/// `w` feeds the upstream model, `x` is the intermediate quantity the
/// upstream model predicts, `y` is the final target.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletPoint {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    pub y: f64,
    pub t: Option<i64>,
}

impl TripletPoint {
    pub fn new(w: Vec<f64>, x: Vec<f64>, y: f64) -> Self {
        Self { w, x, y, t: None }
    }

    pub fn scalar(w: f64, x: f64, y: f64) -> Self {
        Self::new(alloc::vec![w], alloc::vec![x], y)
    }

    pub fn at(mut self, t: i64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.w.iter().chain(&self.x).all(|v| v.is_finite())
    }
}

/// A triplet with extra second-stage features `x_aux`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryPoint {
    pub base: TripletPoint,
    pub x_aux: Vec<f64>,
}

/// A point reduced to the three numbers every interval construction needs:
/// the target, the downstream prediction from the true intermediate
/// (`mu2(x)`), and the end-to-end prediction (`mu2(mu1(w))`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub t: i64,
    pub y: f64,
    pub y_given_x: f64,
    pub y_hat: f64,
}

impl ScoredPoint {
    pub fn new(t: i64, y: f64, y_given_x: f64, y_hat: f64) -> Self {
        Self { t, y, y_given_x, y_hat }
    }
}

/// Train / conformal / calibration partition of an ordered dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDataset<'a, P = TripletPoint> {
    pub train: &'a [P],
    pub conf: &'a [P],
    pub cal: &'a [P],
}

/// Contiguous, order-preserving split into `n_train`, `n_conf`, `n_cal` points.
pub fn split_dataset<P>(
    points: &[P],
    n_train: usize,
    n_conf: usize,
    n_cal: usize,
) -> Result<SplitDataset<'_, P>> {
    let requested = n_train + n_conf + n_cal;
    if requested > points.len() {
        return Err(Error::InsufficientData { requested, available: points.len() });
    }
    let (train, rest) = points.split_at(n_train);
    let (conf, rest) = rest.split_at(n_conf);
    let cal = &rest[..n_cal];
    Ok(SplitDataset { train, conf, cal })
}

/// The `k` points preceding index `t`, split into conf/cal at `conf_ratio`.
/// The training slice is empty: models are fitted beforehand.
pub fn sliding_window<P>(
    points: &[P],
    t: usize,
    k: usize,
    conf_ratio: f64,
) -> Result<SplitDataset<'_, P>> {
    if t < k {
        return Err(Error::WindowTooShort { t, k });
    }
    if t > points.len() {
        return Err(Error::InsufficientData { requested: t, available: points.len() });
    }
    if !(0.0..=1.0).contains(&conf_ratio) {
        return Err(Error::InvalidLevel(conf_ratio));
    }
    let window = &points[t - k..t];
    let n_conf = conf_split_point(k, conf_ratio);
    let (conf, cal) = window.split_at(n_conf);
    Ok(SplitDataset { train: &points[..0], conf, cal })
}

pub(crate) fn conf_split_point(k: usize, conf_ratio: f64) -> usize {
    let n = Float::round(k as f64 * conf_ratio) as usize;
    n.min(k)
}

/// Root seed for every generator and experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for stream `index` (repetition, scenario, ...).
    pub fn derive(self, index: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
