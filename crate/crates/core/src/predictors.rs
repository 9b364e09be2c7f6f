//! Stage models and the two-stage pipeline.
//!
//! Linear stages are fitted by ordinary least squares with an intercept. Real
//! pipelines whose models live elsewhere are fed in as precomputed
//! predictions keyed by time index.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{ScoredPoint, TripletPoint};

/// Smallest-to-largest singular value ratio below which a design is singular.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A deterministic map from a real vector to a real vector.
pub trait StageModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;
}

/// Affine map `out = W in + intercept`, `W` stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
    intercept: Vec<f64>,
    input_dim: usize,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, intercept: Vec<f64>, input_dim: usize) -> Result<Self> {
        let expected = intercept.len() * input_dim;
        if weights.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: weights.len() });
        }
        Ok(Self { weights, intercept, input_dim })
    }

    /// Scalar `in -> slope * in + intercept`.
    pub fn scalar(slope: f64, intercept: f64) -> Self {
        Self { weights: vec![slope], intercept: vec![intercept], input_dim: 1 }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self { weights, intercept: vec![0.0; dim], input_dim: dim }
    }

    pub fn constant(value: f64, input_dim: usize) -> Self {
        Self { weights: vec![0.0; input_dim], intercept: vec![value], input_dim }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }

    /// Weight from input `col` to output `row`.
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.input_dim + col]
    }

    /// Spectral norm of the weight matrix (Lipschitz constant in Euclidean norm).
    pub fn operator_norm(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.output_dim(), self.input_dim, &self.weights);
        m.singular_values().iter().copied().fold(0.0, f64::max)
    }
}

impl StageModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.intercept.len()
    }

    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, found: input.len() });
        }
        Ok(self
            .intercept
            .iter()
            .zip(self.weights.chunks_exact(self.input_dim.max(1)))
            .map(|(b, row)| b + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }
}

/// Least-squares fit with an intercept column.
///
/// Solved through an SVD of the augmented design; a design whose condition
/// exceeds `1 / RANK_TOLERANCE` is rejected as [`Error::RankDeficient`].
pub fn fit_ols<I, T>(inputs: &[I], targets: &[T]) -> Result<LinearModel>
where
    I: AsRef<[f64]>,
    T: AsRef<[f64]>,
{
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch { left: inputs.len(), right: targets.len() });
    }
    let n = inputs.len();
    if n == 0 {
        return Err(Error::RankDeficient);
    }
    let p = inputs[0].as_ref().len();
    let q = targets[0].as_ref().len();
    for row in inputs {
        check_dim(p, row.as_ref().len())?;
    }
    for row in targets {
        check_dim(q, row.as_ref().len())?;
    }
    if n < p + 1 {
        return Err(Error::RankDeficient);
    }

    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { inputs[i].as_ref()[j - 1] });
    let response = DMatrix::from_fn(n, q, |i, j| targets[i].as_ref()[j]);

    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let largest = sv.iter().copied().fold(0.0, f64::max);
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(largest > 0.0) || smallest < RANK_TOLERANCE * largest {
        return Err(Error::RankDeficient);
    }
    let beta = svd.solve(&response, 0.0).map_err(|_| Error::RankDeficient)?;

    // beta is (p+1) × q; row 0 holds the intercepts.
    let intercept = (0..q).map(|j| beta[(0, j)]).collect();
    let mut weights = Vec::with_capacity(p * q);
    for j in 0..q {
        for i in 0..p {
            weights.push(beta[(i + 1, j)]);
        }
    }
    LinearModel::new(weights, intercept, p)
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Anything that can produce the end-to-end and given-`x` predictions.
pub trait TwoStageModel {
    /// `(x_hat, y_hat)` with `x_hat = mu1(w)`, `y_hat = mu2(x_hat)`.
    fn predict_pipeline(&self, w: &[f64]) -> Result<(Vec<f64>, f64)>;

    /// `mu2(x)` at the true intermediate value.
    fn predict_given_x(&self, x: &[f64]) -> Result<f64>;

    fn score(&self, point: &TripletPoint) -> Result<ScoredPoint> {
        let (_, y_hat) = self.predict_pipeline(&point.w)?;
        let y_given_x = self.predict_given_x(&point.x)?;
        Ok(ScoredPoint::new(point.t.unwrap_or(0), point.y, y_given_x, y_hat))
    }

    fn score_all(&self, points: &[TripletPoint]) -> Result<Vec<ScoredPoint>> {
        points.iter().map(|p| self.score(p)).collect()
    }
}

/// `mu2 ∘ mu1` for an upstream `W -> X` and a downstream `X -> Y` model.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStagePipeline<U = LinearModel, D = LinearModel> {
    pub upstream: U,
    pub downstream: D,
}

impl<U: StageModel, D: StageModel> TwoStagePipeline<U, D> {
    pub fn new(upstream: U, downstream: D) -> Result<Self> {
        if upstream.output_dim() != downstream.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: downstream.input_dim(),
                found: upstream.output_dim(),
            });
        }
        if downstream.output_dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: downstream.output_dim() });
        }
        Ok(Self { upstream, downstream })
    }
}

impl TwoStagePipeline {
    /// Fit both stages by OLS: `w -> x` and `x -> y` on the training triplets.
    pub fn fit(train: &[TripletPoint]) -> Result<Self> {
        let ws: Vec<&[f64]> = train.iter().map(|p| p.w.as_slice()).collect();
        let xs: Vec<&[f64]> = train.iter().map(|p| p.x.as_slice()).collect();
        let ys: Vec<[f64; 1]> = train.iter().map(|p| [p.y]).collect();
        let upstream = fit_ols(&ws, &xs)?;
        let downstream = fit_ols(&xs, &ys)?;
        Self::new(upstream, downstream)
    }
}

impl<U: StageModel, D: StageModel> TwoStageModel for TwoStagePipeline<U, D> {
    fn predict_pipeline(&self, w: &[f64]) -> Result<(Vec<f64>, f64)> {
        let x_hat = self.upstream.predict(w)?;
        let y_hat = self.predict_given_x(&x_hat)?;
        Ok((x_hat, y_hat))
    }

    fn predict_given_x(&self, x: &[f64]) -> Result<f64> {
        Ok(self.downstream.predict(x)?[0])
    }
}

/// Stage predictions supplied externally, looked up by time index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedPredictions {
    by_time: BTreeMap<i64, (f64, f64)>,
}

impl PrecomputedPredictions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record `mu2(x)` and `mu2(x_hat)` for time `t`.
    pub fn insert(&mut self, t: i64, mu2_x: f64, mu2_xhat: f64) {
        self.by_time.insert(t, (mu2_x, mu2_xhat));
    }

    pub fn len(&self) -> usize {
        self.by_time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_time.is_empty()
    }

    pub fn lookup(&self, t: i64) -> Result<(f64, f64)> {
        self.by_time.get(&t).copied().ok_or(Error::UnknownTime(t))
    }

    pub fn score(&self, t: i64, y: f64) -> Result<ScoredPoint> {
        let (y_given_x, y_hat) = self.lookup(t)?;
        Ok(ScoredPoint::new(t, y, y_given_x, y_hat))
    }
}
