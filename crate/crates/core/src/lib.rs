//! Stein-rule shrinkage for stochastic gradients.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: flat parameter vectors, parameter groups, seeded RNG.
//! - [`stein`]: the positive-part shrinkage estimator and its statistics.
//! - [`optim`]: SGD, momentum, Adam and SR-Adam over parameter groups.
//! - [`risk`]: Monte Carlo risk experiments for Gaussian location estimators
//!   and stochastic-approximation convergence checks.
//! - [`nn`] and [`data`]: small CPU models with manual backprop, synthetic
//!   and CIFAR datasets, input-noise injection.
//! - [`harness`]: config-driven training grids, record persistence,
//!   aggregation, paired t-tests, plots and reports.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod risk;
pub mod stein;
pub mod tensor;

pub use error::{Error, Result};
pub use optim::{
    adam_step, apply_scope, momentum_step, sgd_step, sr_adam_step, MomentState, OptimConfig, Optimizer, OptimizerKind,
    ShrinkScope, StepTrace,
};
pub use stein::{
    divergence, shrink_factor, sigma2_global, stein_estimate, whitened_shrink, ShrinkageConfig, ShrinkageReport,
};
pub use tensor::{axpy, gauss_vec, sq_norm, GroupKind, ParamGroup, ParamVector, Rng};
