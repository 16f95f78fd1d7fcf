//! Variational inference for bow-tie neural networks.
//!
//! A bow-tie network replaces each ReLU with a Gaussian pre-activation gated by a
//! Bernoulli unit whose logit is the pre-activation divided by a temperature `T`.
//! Polya-Gamma augmentation of the gate makes every full conditional conjugate, so
//! the mean-field posterior can be fitted by closed-form coordinate ascent.
//! Weights carry normal / generalized-inverse-Gaussian (N-GIG) global-local shrinkage
//! priors, which makes post-hoc node selection by Bayesian FDR effective.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the command line and
//! threading live in the companion `bowtie` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cavi;
pub mod config;
pub mod distributions;
pub mod ensemble;
mod error;
pub mod init;
pub mod linalg;
pub mod predict;
pub mod sparsify;
pub mod special;
pub mod state;
pub mod svi;

pub use cavi::{fit_cavi, CaviOptions, ElboTerms};
pub use config::{NetworkConfig, PriorFamily, Priors};
pub use distributions::{GigMoments, GigParams, InvGammaParams};
pub use error::{Error, Result};
pub use init::InitScheme;
pub use predict::{PredictOptions, PredictiveSummary};
pub use sparsify::SparseMask;
pub use state::{Dataset, FitResult, GlobalVariational, LocalVariational};
pub use svi::SviOptions;
