//! Latency benchmarks for blockflow nodes.
//!
//! A [`Scenario`] names a model, a cost profile, a core count (optionally
//! oversubscribed through virtual cores) and an activation pattern.
//! [`run_benchmark`] drives the node with a built-in stimulus, checks every
//! run against sequential execution, and reports the central-80% trimmed
//! mean of trigger-to-publish latency.

mod export;
mod harness;
mod scenario;
mod stats;

use std::path::Path;

use blockflow_core::costalloc::AllocError;
use blockflow_core::model::ModelError;
use blockflow_core::planner::PlanError;
use blockflow_runtime::RuntimeError;
use thiserror::Error;

pub use export::{export_results, results_csv, write_atomic, CSV_HEADER};
pub use harness::{
    allocate, check_oracle, measure_plan, run_benchmark, BenchResult, MeasureConfig, Measurement, KEEP_FRACTION,
};
pub use scenario::{load_grid, Builtin, ModelSource, ProfileSource, Scenario};
pub use stats::{trim_per_side, trimmed_mean};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("no samples")]
    EmptyInput,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("output differs from sequential execution: {0}")]
    OracleMismatch(String),
    #[error("plan deadlocks; workers stuck at steps {0:?}")]
    DeadlockedPlan(Vec<usize>),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

impl BenchError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        BenchError::Io(format!("{}: {e}", path.display()))
    }
}
