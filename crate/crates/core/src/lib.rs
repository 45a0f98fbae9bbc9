//! Non-stationary and deep Gaussian process regression with convergence-rate tooling.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod deep_gp;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod numeric;
pub mod special;

pub use error::{Error, Result};
pub use gp::{fit, fit_with, sample_prior, FitOptions, GpPosterior, Precision, TrainingData};
pub use kernels::{FunctionHandle, KernelSpec};
pub use numeric::{Dd, Real};
