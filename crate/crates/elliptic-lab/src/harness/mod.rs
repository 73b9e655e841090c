//! Scenario registry, experiment orchestration, result persistence and
//! report emission behind the command-line interface.

mod experiment;
mod report;
mod scenario;

pub use experiment::{
    persist_result, revalidate, run_experiment, ExperimentResult, PointResult, SolveSummary,
    Timings,
};
pub use report::{compare_points, comparison_csv, comparison_text, emit_report, ComparisonRow};
pub use scenario::{
    build_scenario, solve_built, BoundaryField, BoundarySpec, BuiltScenario, CoefficientField,
    CoefficientSpec, FlatnessConfig, Modulus, ScenarioSpec, SourceField, SourceSpec,
};

use thiserror::Error;

use crate::flatness::FlatnessError;
use crate::grid::GridError;
use crate::operators::OperatorError;
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("unknown {kind} id {id:?}")]
    RegistryMiss { kind: &'static str, id: String },
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("solver did not converge (final residual {residual:e})")]
    NonConverged { residual: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Flatness(#[from] FlatnessError),
}

impl HarnessError {
    /// Process exit code contract: 2 invalid spec, 3 solver failure,
    /// 4 insufficient resolution.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Spec(_)
            | HarnessError::RegistryMiss { .. }
            | HarnessError::Parse(_)
            | HarnessError::Operator(_)
            | HarnessError::Io(_) => 2,
            HarnessError::NonConverged { .. } => 3,
            HarnessError::Grid(GridError::InsufficientResolution { .. }) => 4,
            HarnessError::Grid(_) => 2,
            HarnessError::Solver(SolverError::NonMonotoneStencil { .. }) => 2,
            HarnessError::Solver(_) => 3,
            HarnessError::Flatness(FlatnessError::Grid(GridError::InsufficientResolution {
                ..
            })) => 4,
            HarnessError::Flatness(FlatnessError::Solver(_)) => 3,
            HarnessError::Flatness(_) => 2,
        }
    }
}
