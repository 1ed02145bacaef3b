//! Bayesian nonparametric regression on a compactly supported wavelet basis,
//! with prior information supplied as a fuzzy membership function around a
//! prior-guess curve `g0`.
//!
//! The crate is organised bottom-up:
//!
//! * [`wavelet`]: Haar / Daubechies families, cascade tables, resolution plans.
//! * [`decomposition`]: coefficient vectors, projection of `g0`, design matrix
//!   and the Gram matrix of the high-resolution remainder process.
//! * [`membership`]: Gaussian, Student-t and uniform-ellipsoid memberships and
//!   the hyperprior on `(sigma^2, u = tau^2 / sigma^2)`.
//! * [`conjugate`]: exact posterior moments for the Gaussian membership via a
//!   spectral decomposition and a one-dimensional quadrature in `u`.
//! * [`mcmc`]: Gibbs / Metropolis-within-Gibbs sampler for every membership.
//! * [`model_check`]: marginal likelihoods, Bayes factor of `g = g0` against
//!   `g != g0`, and marginal-likelihood resolution selection.
//! * [`robustness`]: extremes of the Bayes factor over a density-ratio class.
//! * [`harness`]: datasets, simulation and builtin prior guesses.
//!
//! With the default `parallel` feature the data-parallel loops (quadrature
//! nodes, matrix assembly, Monte-Carlo banks, repeated-seed experiments) run
//! on rayon; without it every loop runs sequentially and produces bit-identical
//! results.

pub mod conjugate;
pub mod decomposition;
mod error;
pub mod harness;
pub mod mcmc;
pub mod membership;
pub mod model;
pub mod model_check;
pub mod par;
pub mod quadrature;
pub mod robustness;
pub mod wavelet;

pub use error::{Error, Result};
