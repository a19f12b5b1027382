//! Full-factorial conjoint experiments on language-model policy scores.
//!
//! The pipeline runs design → prompts → providers → runner → parser →
//! stats → report. [`pipeline`] wires the stages together for the CLI.

pub mod config;
pub mod design;
pub mod error;
pub mod parser;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod report;
pub mod runner;
pub mod stats;

pub use error::{
    ConfigError, DesignError, PipelineError, ProviderError, ReportError, RunnerError, StatsError,
};

/// The shipped five-scenario, seven-factor design.
pub const PAPER_DESIGN_TOML: &str = include_str!("../../../configs/paper_design.toml");

pub fn paper_design() -> design::Design {
    design::Design::from_toml_str(PAPER_DESIGN_TOML).expect("shipped design is valid")
}
