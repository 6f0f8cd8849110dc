//! Spec-file driven front end for the `refdiff` solvers.

pub mod error;
pub mod output;
pub mod pipeline;
pub mod spec;

pub use error::{CliError, CliResult};
pub use pipeline::{run, verify, ResultBundle, RunOptions, RunOutput, VerificationReport, SCHEMA_VERSION};
pub use spec::{preset, Output, RunSpec, Thresholds, PRESETS};
