//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: relative symmetry defect {defect:.3e} exceeds {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },

    #[error("matrix is singular or not invertible")]
    Singular,

    #[error("matrix is not positive definite (min eigenvalue {min_eig:.6e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigenvalue {value:.6e} outside required domain: {requirement}")]
    EigenvalueDomain { value: f64, requirement: &'static str },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid budget exceeded: {points} points > budget {budget}")]
    GridBudget { points: usize, budget: usize },

    #[error("jet constraint not projected: residual {residual:.3e} exceeds {tol:.3e}")]
    ConstraintNotProjected { residual: f64, tol: f64 },

    #[error("jet symmetry violated: {0}")]
    JetSymmetry(String),

    #[error("positivity lost at grid point {index}: min eigenvalue {min_eig:.6e}")]
    PositivityLoss { index: usize, min_eig: f64 },

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("radial profile too short: reached r = {reached:.4}, need r >= {needed:.4}")]
    ProfileTooShort { reached: f64, needed: f64 },

    #[error("evaluation point s = {s:.4} outside profile range [0, {max_s:.4}]")]
    OutOfProfileRange { s: f64, max_s: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
