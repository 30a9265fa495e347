//! Error types shared across the engine.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A derivative pass produced a non-finite Taylor coefficient.
    /// `index` identifies the seeded coordinate (or direction) of the pass.
    #[error("non-finite derivative in pass seeded at index {index}")]
    NonFiniteDerivative { index: usize },

    /// Directional derivatives require a unit direction.
    #[error("direction is not unit length (|v| = {norm})")]
    InvalidDirection { norm: f64 },

    /// Taylor order outside the supported 1..=4 range.
    #[error("unsupported derivative order {order} (must be 1..=4)")]
    InvalidOrder { order: usize },

    /// Cholesky hit a non-positive pivot: the matrix is not positive definite.
    #[error("indefinite matrix: pivot {pivot} at index {index}")]
    IndefiniteHessian { index: usize, pivot: f64 },

    /// A structured Hessian probe found mass outside the declared sparsity.
    #[error("latent Hessian violates declared structure: |H[{i},{j}]| = {value} exceeds {limit}")]
    StructureViolation { i: usize, j: usize, value: f64, limit: f64 },

    /// Whitening factor cannot be inverted.
    #[error("singular whitening factor at index {index}")]
    SingularWhitening { index: usize },

    /// Line search found no acceptable decrease within the trial budget.
    #[error("line search stalled at iteration {iteration} (objective {objective})")]
    LineSearchStalled { iteration: usize, objective: f64 },

    /// Objective evaluated to NaN/inf at the current iterate.
    #[error("non-finite objective: {value}")]
    NonFiniteObjective { value: f64 },

    /// Every initial live point evaluated to -inf.
    #[error("degenerate prior: all {n_live} initial live points have zero likelihood")]
    DegeneratePrior { n_live: usize },

    /// A replacement chain could not find a point above threshold.
    #[error(
        "stuck sampler at iteration {iteration}, chain {chain}: \
         {retries} slice retries above threshold {threshold}"
    )]
    StuckSampler { iteration: usize, chain: usize, threshold: f64, retries: usize },

    /// The slice bracket collapsed below resolution.
    #[error("slice bracket collapsed below {width}")]
    SliceCollapse { width: f64 },

    /// A direction with non-negative curvature was met while fitting ν.
    #[error("non-concave whitened direction {index}: f'' = {second}")]
    NonConcaveDirection { index: usize, second: f64 },

    /// Importance weights all vanished or were non-finite.
    #[error("degenerate importance weights at theta = {theta:?}")]
    DegenerateWeights { theta: Vec<f64> },

    /// Adaptive quadrature failed to converge even after widening.
    #[error("quadrature failed to converge on [{lo}, {hi}] (tol {tol})")]
    QuadratureFailed { lo: f64, hi: f64, tol: f64 },

    /// The model offers no exact reference marginal.
    #[error("model '{model}' has no exact reference marginal")]
    NoExactReference { model: String },

    /// Unknown model name or invalid model parameters.
    #[error("model error: {0}")]
    Model(String),

    /// Invalid run configuration.
    #[error("configuration error: {0}")]
    Config(String),
}
