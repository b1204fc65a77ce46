//! Numerical laboratory for effective energy densities of non-local
//! convolution-type functionals on periodically inhomogeneous media.
//!
//! The central object is the density `f_lambda(M)` obtained by minimizing a
//! pairwise-interaction energy over affine-plus-periodic competitors on the
//! unit torus, where `lambda` is the ratio between the interaction length and
//! the oscillation period of the coefficients. Three regimes are covered:
//!
//! * `lambda = 0`      — a local (gradient) cell problem,
//! * `lambda in (0,∞)` — a non-local cell problem with difference quotients,
//! * `lambda = ∞`      — a pure quadrature with no minimization.
//!
//! [`cell`] computes these values, [`gamma`] cross-validates them against
//! direct minimization of the finite-scale energies on the unit domain, and
//! [`dense`] provides an independent direct solver used as an oracle for the
//! quadratic (`p = 2`) case.

pub mod cell;
pub mod dense;
pub mod densities;
pub mod gamma;

pub mod kernels;
pub mod optimizer;

pub mod torus;

mod sampling;

use thiserror::Error;

/// Errors produced by construction and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel evaluated to a non-finite value at node {node:?} (index {index})")]
    NonFiniteKernel { index: usize, node: Vec<f64> },
    #[error("non-finite energy contribution at quadrature node {quad_index}, grid node {grid_index}")]
    NonFiniteEnergy { quad_index: usize, grid_index: usize },
    #[error("optimizer aborted: non-finite {what} at iteration {iteration} (step {step:e})")]
    NonFiniteIterate { what: &'static str, iteration: usize, step: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
