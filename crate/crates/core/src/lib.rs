//! Fairness-aware tabular classification: synthetic data generation,
//! preprocessing, classical learners, threshold tuning, group-fairness
//! auditing, mitigation and local explanations.

// `!(x > 0.0)` is the NaN-rejecting form; parallel-array loops index by row.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evaluation;
pub mod explain;
pub mod fairness;
pub mod fmt;
pub mod matrix;
pub mod mitigation;
pub mod models;
pub mod preprocess;
pub mod runner;
pub mod schema;

pub use error::{Error, Result};
pub use matrix::Matrix;
