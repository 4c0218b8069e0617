//! Bayesian neural networks as anchored ensembles with functional priors.
//!
//! The crate trains ensembles of small fully-connected networks in two
//! stages. Stage 1 pre-trains every member to a realization of a
//! Gaussian-process functional prior and extracts a low-rank correlated
//! Gaussian over the flat parameter vector from the spread of the
//! pre-trained weights. Stage 2 fits each member to (resampled) data while
//! regularizing it to its own pre-trained anchor under that prior. The
//! ensemble spread then quantifies epistemic uncertainty, and the prior
//! keeps extrapolation anchored to the supplied function-space knowledge.
//!
//! Entry points:
//! - [`nn`]: network evaluation, exact gradients, parameter flattening.
//! - [`prior`]: GP functional priors, Latin hypercube measurement sets.
//! - [`lowrank`]: degenerate low-rank Gaussian (SVD, density, sampling).
//! - [`transfer`]: stage-1 pre-training and prior diagnostics.
//! - [`data`], [`train`]: datasets, resampling, losses, both training loops.
//! - [`predict`], [`metrics`]: predictive moments and the evaluation suite.
//! - [`bench`]: built-in benchmark generators and the sensitivity screen.
//! - [`cli`], [`config`]: the command-line front end.

pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod lowrank;
pub mod metrics;
pub mod nn;
pub mod opt;
pub mod predict;
pub mod prior;
pub mod seed;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use seed::{Purpose, Seed};
