use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inadmissible model: {0}")]
    Inadmissible(ValidationReport),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("x = {x} outside sampled range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("grid must be strictly ascending (violated at index {index})")]
    NonAscendingGrid { index: usize },

    #[error("grid must be uniformly spaced (violated at index {index})")]
    NonUniformGrid { index: usize },

    #[error("grid needs at least {required} nodes, got {got}")]
    TooFewNodes { required: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error(
        "process has no stationary distribution: partial integrals still growing at x = {x_max} \
         (relative increment {relative_increment:.3e})"
    )]
    NonErgodic { x_max: f64, relative_increment: f64 },

    #[error("{0}")]
    DomainMismatch(String),

    #[error("large deviations requires a compact domain (two reflecting barriers)")]
    NonCompactDomain,

    #[error("closed form not applicable: {0}")]
    ClosedFormNotApplicable(String),

    #[error("could not bracket the eigenvalue after {expansions} expansions (last bracket [{lo}, {hi}])")]
    BracketFailure { lo: f64, hi: f64, expansions: usize },

    #[error("root bracketing failed: {0}")]
    RootNotBracketed(String),

    #[error("eigenfunction not positive after convergence (theta = {theta}, {sign_changes} sign changes)")]
    PositivityViolation { theta: f64, sign_changes: usize },

    #[error("ODE integration failed: {0}")]
    Integration(String),

    #[error("psi curve failed validation: {0}")]
    InvalidPsiCurve(String),

    #[error("{value} is outside the attainable slope range [{lo}, {hi}]")]
    SlopeOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidMcConfig(String),
}
