//! Experiment runner for the `mashvco` simulator: layered TOML specs,
//! bundled recipes, result directories with manifests, and regression
//! comparison.

pub mod compare;
pub mod error;
pub mod recipes;
pub mod run;
pub mod spec;
pub mod tools;

pub use error::{CliError, CliResult};
