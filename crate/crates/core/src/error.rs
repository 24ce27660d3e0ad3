//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.6}, {y:.6}) lies outside the disk of radius {radius}")]
    Domain { x: f64, y: f64, radius: f64 },

    #[error("metric matrix is singular or not positive definite at ({x:.6}, {y:.6}), condition number {condition:e}")]
    SingularMetric { x: f64, y: f64, condition: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    Shooting { iterations: usize, residual: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("chart error: {0}")]
    Chart(String),

    #[error("ill-conditioned direction set: {0}")]
    Conditioning(String),

    #[error("boundary convexity too weak: {0}")]
    Convexity(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
