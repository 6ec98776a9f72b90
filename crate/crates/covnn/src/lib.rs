//! coVariance neural networks.
//!
//! A covariance neural network is a graph neural network whose graph is a
//! covariance matrix: each layer convolves its inputs with polynomials in
//! the covariance and applies a pointwise nonlinearity. Because the filter
//! taps are scalars, a trained network is dimension-free and can be moved
//! between datasets with different feature counts.
//!
//! The crate covers:
//!
//! - covariance estimation, spectral normalization, and the covariance
//!   Fourier transform ([`covariance`]);
//! - polynomial covariance filters and the PCA-recovery filter bank
//!   ([`filter`]);
//! - the multi-layer MIMO network with mean readout and a versioned model
//!   document ([`model`]);
//! - MSE training with hand-derived gradients, Adam, and permutation
//!   ensembles ([`training`]);
//! - graphon approximations, converging covariance sequences, step-function
//!   metrics, and cut-distance estimation ([`graphon`]);
//! - transferability and stability sweeps ([`transfer`]);
//! - the interpretable brain-age pipeline: regional residuals, age-bias
//!   correction, group scans, and eigenvector alignment ([`brainage`]);
//! - self-contained statistical primitives ([`stats`]);
//! - CSV/JSON dataset and report I/O plus the command drivers behind the
//!   `covnn` binary ([`io`], [`commands`]).
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability.

pub mod brainage;
pub mod commands;
pub mod covariance;
pub mod error;
pub mod filter;
pub mod graphon;
pub mod io;
pub mod model;
pub mod rng;
pub mod stats;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
