//! Overlapping frozen-mask subnetworks inside one dense network, trained with
//! soft actor-critic on a sparse-reward continuous maze.

// `!(x > 0.0)` checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod bits;
pub mod codec;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod mask;
pub mod maze;
pub mod nn;
pub mod strategy;
pub mod train;

pub use error::{Error, Result};
