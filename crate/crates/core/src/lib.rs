// `!(x > 0.0)` is used throughout to reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assist;
pub mod bernoulli;
pub mod bk;
pub mod cgr;
pub mod chart;
pub mod controllimit;
pub mod dataset;
pub mod datagen;
pub mod error;
mod exposure;
pub mod funnel;
mod linalg;
pub mod riskadjust;
pub mod rng;

pub use error::{Error, Result};
