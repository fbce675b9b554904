//! Conditional density estimation with Lindsey's method and boosted trees.

// `!(a < b)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod boost;
pub mod config;
pub mod data;
pub mod error;
pub mod lindsey;
pub mod metrics;
pub mod pretreat;
pub mod simdata;
pub mod tree;

pub use error::{Error, Result};
