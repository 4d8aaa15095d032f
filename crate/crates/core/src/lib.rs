//! Auditing toolkit for binary student-success predictors.
//!
//! The pipeline goes from clickstream logs to weekly behavioral indicators,
//! cross-validated failure probabilities, confidence-based grouping into
//! known knowns / known unknowns / unknown unknowns, and a regression that
//! characterizes who ends up confidently misclassified.

pub mod characterize;
pub mod error;
pub mod evalcv;
pub mod eventlog;
pub mod features;
pub mod grouping;
pub mod pipeline;
pub mod synth;
pub mod models;

pub use error::{Error, Result};
