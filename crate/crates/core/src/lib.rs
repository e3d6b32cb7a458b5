//! Certified robustness for image classifiers via randomized smoothing.
//!
//! The crate bundles a small double-precision neural network engine, the
//! statistical machinery behind Monte Carlo certification of the smoothed
//! classifier, three trainers (plain cross-entropy, Gaussian augmentation and
//! certified robustness transfer from a teacher network) and the metrics used
//! to compare them (certified accuracy, average certified radius, timing).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod nn;
pub mod smoothing;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
