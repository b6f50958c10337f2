// `!(x > 0.0)` checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Experiment harness for OMNet agents on the sparse-reward maze: run
//! configuration, training and diagnostic commands, and artifact writers.

pub mod commands;
pub mod config;
pub mod output;

pub use config::{parse_seeds, LoadedConfig, RunConfig};
