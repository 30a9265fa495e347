//! Collapsed-evidence inference for hierarchical Bayesian models.
//!
//! At every hyperparameter point θ the high-dimensional latent block z is
//! marginalised by MAP optimisation plus a local Gaussian (or Student-t)
//! approximation, with all derivatives supplied by a forward-mode Taylor-jet
//! autodiff engine. The resulting collapsed log-likelihood is integrated over
//! θ by a batch-deletion nested sampler, yielding the Bayesian evidence, its
//! uncertainty, and a recoverable joint posterior.
//!
//! Crate layout:
//!
//! * [`ad`] — truncated Taylor-jet scalars and the derivative operators
//!   (gradients, Hessians, Hessian-vector products, directional series).
//! * [`linalg`] — structured precision matrices (dense, block-diagonal,
//!   tridiagonal) with matching Cholesky/log-determinant routines.
//! * [`optimize`] — L-BFGS in whitened coordinates with warm starts.
//! * [`collapse`] — the per-θ collapsed log-likelihood (Gaussian and
//!   Student-t variants) and the per-direction ν estimators.
//! * [`ns`] — the nested sampler: slice-sampled replacements, evidence
//!   bookkeeping, bootstrap uncertainty, dead-point tracing.
//! * [`zoo`] — the benchmark model registry with exact reference oracles.
//! * [`diagnostics`] — importance-sampling ESS checks and posterior recovery.
//! * [`recipes`] — desk-scale reproduction recipes shared by the CLI and the
//!   acceptance suite.

pub mod ad;
pub mod collapse;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod ns;
pub mod optimize;
pub mod recipes;
pub mod zoo;

pub use error::{Error, Result};
