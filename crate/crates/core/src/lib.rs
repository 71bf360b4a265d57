//! Parameter identification for noisy, nonlinear continuous-time systems.
//!
//! A mean network `ξ(t)` and a covariance network `ψ(t)` are trained so that
//! they satisfy the extended Kalman-Bucy filter equations of a grey-box model,
//! while the unknown model parameters are optimized jointly with the network
//! weights.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod ekbf;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nets;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
