//! Multiple imputation of nonignorable item nonresponse in stratified surveys.
//!
//! A binary survey variable `x` is missing for some units, the missingness may
//! depend on `x` itself, and the population total of `x` is known from an
//! auxiliary source. An additive-nonignorable probit selection model is fit by
//! Metropolis-within-Gibbs, and a rejection step keeps the completed datasets'
//! Horvitz–Thompson totals plausible under the known margin.
//!
//! Module map:
//!
//! - [`survey`]: finite populations, stratified sampling, missingness, totals.
//! - [`models`]: probit evaluation and the 2×2×2 identification algebra.
//! - [`mcmc`]: the imputation sampler.
//! - [`estimators`]: completed-data analysis and multiple-imputation combining.
//! - [`sim`]: the simulation-study harness and report writers.

pub mod error;
pub mod estimators;
pub mod mcmc;
pub mod models;
pub mod normal;
pub mod seed;
pub mod sim;
pub mod survey;

pub use error::{Error, Result, RowIssue};
