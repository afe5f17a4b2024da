//! Synchronized optimal transport on staggered space-time grids.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact_io;
pub mod cli;
mod colormap_data;
mod coupling;
pub mod discrete_ot;
pub mod error;
pub mod grid;
pub mod metric;
mod par;
pub mod problems;
pub mod proxops;
pub mod solver;

pub use error::{Error, Result};
