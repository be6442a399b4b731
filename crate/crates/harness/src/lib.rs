//! Config-driven experiment runner for `erl-core`.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod svg;

pub use config::{ExperimentConfig, ExperimentKind, GridSource, Overrides};
pub use error::{HarnessError, Result};
pub use output::emit_outputs;
pub use run::{run, Check, RunArtifact, Summary, ThresholdRow};
