//! Experiment harness for `stagecp`: configuration, CSV ingestion, repeated
//! runs over seeds, metric summaries and SVG reports.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;

pub use config::{ExperimentConfig, Method, Overrides, Protocol, Schema};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, summarize, sweep, ExperimentSummary, MethodSummary, RepetitionRun, SweepParam};

/// Exit code when some method abstained at every step of every repetition.
pub const EXIT_ABSTAINED: i32 = 4;
