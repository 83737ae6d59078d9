//! Multiple imputation by stacking and analysis-model weighting.
//!
//! Covariates are imputed by chained equations *without* the outcome, the
//! imputations are stacked, each stacked row is weighted by the analysis
//! model density `f(Y | X)` from a complete-case fit, and the analysis model
//! is refit to the weighted stack. Standard errors come from a weighted
//! Monte Carlo version of Louis' observed-information identity.

// `!(a > b)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod generate;
pub mod impute;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod sim;
pub mod stack;
pub mod table;
pub mod variance;

pub use error::{Error, Result};
