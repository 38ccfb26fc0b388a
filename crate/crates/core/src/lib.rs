//! Differentially private ReLU regression.
//!
//! The crate is organised around the learning problem `y = ReLU(<x, w*>) + z`:
//!
//! - [`model`]: predictions, GLMtron/SGD pseudo-gradients, empirical and Monte-Carlo risks.
//! - [`datagen`]: synthetic well-specified data with a chosen covariance and design.
//! - [`privacy`]: noise-multiplier calibration and zCDP bookkeeping.
//! - [`threshold`]: norm clipping and the doubling threshold search.
//! - [`trainers`]: GLMtron, DP-GLMtron, DP-MBGLMtron and a DP-SGD baseline.
//! - [`attack`]: the tracing-attack membership statistic and experiment.
//! - [`experiments`]: CSV ingestion, preprocessing, grid sweeps and result files.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod datagen;
mod error;
pub mod experiments;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod privacy;
pub mod rng;
pub mod threshold;
pub mod trainers;

pub use error::{Error, Result};
pub use model::{Dataset, LabeledExample, ModelVector};

/// Version string echoed into result manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
