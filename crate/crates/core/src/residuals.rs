//! Residual decomposition into upstream and downstream components.
//!
//! For a point `(w, x, y)` and fitted stages `mu1`, `mu2`:
//!
//! ```text
//! R   = |y - mu2(mu1(w))|                      total residual
//! R2  = |y - mu2(x)|                           downstream residual
//! dR1 = | |y - mu2(x)| - |y - mu2(mu1(w))| |   upstream delta
//! ```
//!
//! `R <= dR1 + R2` by the reverse triangle inequality. The bound is kept in
//! floating point as well: if rounding in `dR1` would break it, `dR1` is
//! raised to the next representable value.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::predictors::{StageModel, TwoStageModel};
use crate::types::{AuxiliaryPoint, ScoredPoint, TripletPoint};

/// `(R, dR1, R2)` for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualComponents {
    pub r_total: f64,
    pub delta_r1: f64,
    pub r2: f64,
}

impl ResidualComponents {
    /// Components from the target, `mu2(x)` and `mu2(mu1(w))`.
    pub fn from_predictions(y: f64, y_given_x: f64, y_hat: f64) -> Self {
        let r2 = (y - y_given_x).abs();
        let r_total = (y - y_hat).abs();
        let mut parts = [(r2 - r_total).abs()];
        enforce_upper_bound(r_total, &mut parts, r2);
        Self { r_total, delta_r1: parts[0], r2 }
    }
}

impl From<&ScoredPoint> for ResidualComponents {
    fn from(p: &ScoredPoint) -> Self {
        Self::from_predictions(p.y, p.y_given_x, p.y_hat)
    }
}

/// Signed components whose difference is the signed end-to-end error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedResidualComponents {
    /// `y - mu2(x)`
    pub r2_signed: f64,
    /// `mu2(mu1(w)) - mu2(x)`
    pub delta_r1_signed: f64,
}

impl SignedResidualComponents {
    pub fn from_predictions(y: f64, y_given_x: f64, y_hat: f64) -> Self {
        Self { r2_signed: y - y_given_x, delta_r1_signed: y_hat - y_given_x }
    }

    /// `r2_signed - delta_r1_signed`, i.e. `y - mu2(mu1(w))` up to rounding.
    pub fn full_residual(&self) -> f64 {
        self.r2_signed - self.delta_r1_signed
    }
}

impl From<&ScoredPoint> for SignedResidualComponents {
    fn from(p: &ScoredPoint) -> Self {
        Self::from_predictions(p.y, p.y_given_x, p.y_hat)
    }
}

/// Upstream deltas `dR_1..dR_{N-1}` and the last-stage residual `R_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStageComponents {
    pub deltas: Vec<f64>,
    pub r_last: f64,
    /// `|w_{N+1} - mu_N(...mu_1(w_1))|`
    pub r_total: f64,
}

impl MultiStageComponents {
    pub fn bound(&self) -> f64 {
        component_sum(&self.deltas, self.r_last)
    }
}

pub fn decompose<M: TwoStageModel + ?Sized>(p: &M, point: &TripletPoint) -> Result<ResidualComponents> {
    let s = p.score(point)?;
    Ok(ResidualComponents::from(&s))
}

pub fn decompose_signed<M: TwoStageModel + ?Sized>(
    p: &M,
    point: &TripletPoint,
) -> Result<SignedResidualComponents> {
    let s = p.score(point)?;
    Ok(SignedResidualComponents::from(&s))
}

/// Decomposition when the downstream model also consumes auxiliary features:
/// `mu2_aux` takes the concatenation `[x, x_aux]`.
pub fn decompose_aux<M: StageModel + ?Sized>(
    mu2_aux: &M,
    point: &AuxiliaryPoint,
    x_hat: &[f64],
) -> Result<ResidualComponents> {
    let x = &point.base.x;
    if x_hat.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: x_hat.len() });
    }
    let eval = |inter: &[f64]| -> Result<f64> {
        let mut input = Vec::with_capacity(inter.len() + point.x_aux.len());
        input.extend_from_slice(inter);
        input.extend_from_slice(&point.x_aux);
        let out = mu2_aux.predict(&input)?;
        out.first().copied().ok_or(Error::DimensionMismatch { expected: 1, found: 0 })
    };
    let y_given_x = eval(x)?;
    let y_hat = eval(x_hat)?;
    Ok(ResidualComponents::from_predictions(point.base.y, y_given_x, y_hat))
}

/// Decomposition for an `N`-stage chain `w_1 -> w_2 -> ... -> w_{N+1}`.
///
/// `P_i = mu_N(...mu_i(w_i))` is the prediction obtained by entering the
/// chain at stage `i` with the true input. Then
/// `dR_i = | |w_{N+1} - P_{i+1}| - |w_{N+1} - P_i| |` and
/// `R_N = |w_{N+1} - P_N|`, with Euclidean norms for vector outputs.
pub fn decompose_multistage<S: AsRef<[f64]>>(
    stages: &[&dyn StageModel],
    chain: &[S],
) -> Result<MultiStageComponents> {
    let n = stages.len();
    if n < 2 {
        return Err(Error::TooFewStages(n));
    }
    if chain.len() != n + 1 {
        return Err(Error::LengthMismatch { left: chain.len(), right: n + 1 });
    }
    for (i, stage) in stages.iter().enumerate() {
        let found = chain[i].as_ref().len();
        if stage.input_dim() != found {
            return Err(Error::DimensionMismatch { expected: stage.input_dim(), found });
        }
        if i + 1 < n && stage.output_dim() != stages[i + 1].input_dim() {
            return Err(Error::DimensionMismatch {
                expected: stages[i + 1].input_dim(),
                found: stage.output_dim(),
            });
        }
    }
    let target = chain[n].as_ref();
    if stages[n - 1].output_dim() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: stages[n - 1].output_dim() });
    }

    // errors[i] = |target - P_{i+1}| (0-based stage index i)
    let mut errors = Vec::with_capacity(n);
    for start in 0..n {
        let mut value: Vec<f64> = chain[start].as_ref().to_vec();
        for stage in &stages[start..] {
            value = stage.predict(&value)?;
        }
        errors.push(distance(target, &value));
    }
    let r_total = errors[0];
    let r_last = errors[n - 1];
    let mut deltas: Vec<f64> = (0..n - 1).map(|i| (errors[i + 1] - errors[i]).abs()).collect();
    enforce_upper_bound(r_total, &mut deltas, r_last);
    Ok(MultiStageComponents { deltas, r_last, r_total })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    Float::sqrt(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
}

fn component_sum(deltas: &[f64], last: f64) -> f64 {
    deltas.iter().fold(0.0, |acc, d| acc + d) + last
}

// Raises the first delta by ulps until the rounded sum dominates `total`.
fn enforce_upper_bound(total: f64, deltas: &mut [f64], last: f64) {
    if deltas.is_empty() || !total.is_finite() {
        return;
    }
    while component_sum(deltas, last) < total {
        deltas[0] = deltas[0].next_up();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{LinearModel, TwoStagePipeline};
    use alloc::vec;

    #[test]
    fn worked_example() {
        let c = ResidualComponents::from_predictions(10.0, 9.0, 7.0);
        assert_eq!((c.r_total, c.r2, c.delta_r1), (3.0, 1.0, 2.0));
        assert!(c.r_total <= c.delta_r1 + c.r2);
    }

    #[test]
    fn exact_upstream_has_no_delta() {
        let p = TwoStagePipeline::new(LinearModel::scalar(3.0, 0.0), LinearModel::scalar(4.0, 0.0)).unwrap();
        let c = decompose(&p, &TripletPoint::scalar(1.0, 3.0, 12.5)).unwrap();
        assert_eq!(c.delta_r1, 0.0);
        assert_eq!(c.r2, c.r_total);
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let c = ResidualComponents::from_predictions(4.0, 4.0, 4.0);
        assert_eq!((c.r_total, c.delta_r1, c.r2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn signed_example() {
        let s = SignedResidualComponents::from_predictions(10.0, 9.0, 7.0);
        assert_eq!((s.r2_signed, s.delta_r1_signed), (1.0, -2.0));
        assert_eq!(s.full_residual(), 3.0);
        let zero = SignedResidualComponents::from_predictions(2.0, 2.0, 2.0);
        assert_eq!((zero.r2_signed, zero.delta_r1_signed), (0.0, 0.0));
    }

    #[test]
    fn constant_downstream_kills_signed_delta() {
        let p = TwoStagePipeline::new(LinearModel::scalar(5.0, 1.0), LinearModel::constant(3.0, 1)).unwrap();
        let s = decompose_signed(&p, &TripletPoint::scalar(0.4, -2.0, 8.0)).unwrap();
        assert_eq!(s.delta_r1_signed, 0.0);
    }

    #[test]
    fn aux_example() {
        // mu2(x, x') = x + x'; x = 3, x' = 1, x_hat = 0 -> mu2(x,x') = 4, mu2(x_hat,x') = 1
        let mu2 = LinearModel::new(vec![1.0, 1.0], vec![0.0], 2).unwrap();
        let pt = AuxiliaryPoint { base: TripletPoint::scalar(0.0, 3.0, 5.0), x_aux: vec![1.0] };
        let c = decompose_aux(&mu2, &pt, &[0.0]).unwrap();
        assert_eq!((c.r_total, c.r2, c.delta_r1), (4.0, 1.0, 3.0));
        let exact = decompose_aux(&mu2, &pt, &[3.0]).unwrap();
        assert_eq!(exact.delta_r1, 0.0);
    }

    #[test]
    fn aux_ignored_matches_plain() {
        let up = LinearModel::scalar(2.0, 0.5);
        let down = LinearModel::scalar(-1.5, 2.0);
        let mu2_aux = LinearModel::new(vec![-1.5, 0.0, 0.0], vec![2.0], 3).unwrap();
        let p = TwoStagePipeline::new(up.clone(), down).unwrap();
        let base = TripletPoint::scalar(0.7, 1.9, -0.3);
        let x_hat = up.predict(&base.w).unwrap();
        let aux = AuxiliaryPoint { base: base.clone(), x_aux: vec![4.0, -8.0] };
        assert_eq!(decompose_aux(&mu2_aux, &aux, &x_hat).unwrap(), decompose(&p, &base).unwrap());
    }

    #[test]
    fn aux_dimension_mismatch() {
        let mu2 = LinearModel::new(vec![1.0, 1.0], vec![0.0], 2).unwrap();
        let pt = AuxiliaryPoint { base: TripletPoint::scalar(0.0, 3.0, 5.0), x_aux: vec![1.0, 2.0] };
        assert!(decompose_aux(&mu2, &pt, &[0.0]).is_err());
        assert!(decompose_aux(&mu2, &pt, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn multistage_identity_chain_is_zero() {
        let id = LinearModel::identity(1);
        let stages: [&dyn StageModel; 3] = [&id, &id, &id];
        let c = decompose_multistage(&stages, &[[2.0], [2.0], [2.0], [2.0]]).unwrap();
        assert!(c.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(c.r_last, 0.0);
    }

    #[test]
    fn multistage_rejects_short_chains() {
        let id = LinearModel::identity(1);
        let one: [&dyn StageModel; 1] = [&id];
        assert_eq!(decompose_multistage(&one, &[[1.0], [1.0]]), Err(Error::TooFewStages(1)));
        let two: [&dyn StageModel; 2] = [&id, &id];
        assert!(decompose_multistage(&two, &[[1.0], [1.0]]).is_err());
    }
}
