#![no_std]
//! Conformal prediction intervals for two-stage prediction pipelines.
//!
//! The total residual of a pipeline `w -> x -> y` is split into an upstream
//! delta and a downstream residual; intervals scale the two components
//! separately, with the scaling chosen by family-wise risk control on a
//! calibration set or online on a sliding window.

extern crate alloc;

pub mod adaptive;
pub mod baselines;
pub mod error;
pub mod intervals;
pub mod predictors;
pub mod quantiles;
pub mod residuals;
pub mod risk_control;
pub mod synth;
pub mod types;

pub use adaptive::{run_adaptive, AdaptiveConfig, AdaptiveConformal, AdaptiveState, StepRecord};
pub use baselines::{run_online, Baseline, BaselineKind, BaselineParams, OnlineMethod};
pub use error::{Error, Result};
pub use intervals::{
    covers, AbstentionPolicy, ConformalSet, IntervalKind, PredictionInterval, ScalingConfig,
};
pub use predictors::{fit_ols, LinearModel, PrecomputedPredictions, StageModel, TwoStageModel, TwoStagePipeline};
pub use quantiles::{conformal_quantile, weighted_quantile, QuantileLevel, SortedScores};
pub use residuals::{decompose, decompose_signed, ResidualComponents, SignedResidualComponents};
pub use risk_control::{calibrate, CalibrationSettings, CalibrationVerdict, FwerAlgorithm, LambdaGrid, RiskTest};
pub use synth::{generate, ScenarioKind, ScenarioSpec};
pub use types::{sliding_window, split_dataset, AuxiliaryPoint, Seed, ScoredPoint, SplitDataset, TripletPoint};
