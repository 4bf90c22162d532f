//! Experiment harness around `fedistill-core`: file formats (IDX input,
//! binary checkpoints, JSON artifacts), run configuration, and the
//! subcommand implementations behind the `fedistill` binary.

// `!(x > 0.0)` rejects NaN where `x <= 0.0` would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod idx;
pub mod report;

pub use error::{CliError, Result};
