use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {dim}: at most {max} prime bases are available")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate dimension {index}: lower and upper bounds coincide")]
    DegenerateDimension { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linearization failed: non-finite derivative in column {column}")]
    LinearizationFailure { column: usize },

    #[error("simulation diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("algebraic loop is singular at step {step}")]
    AlgebraicLoop { step: usize },

    #[error("Riccati iteration did not converge after {iterations} iterations (pair not stabilizable?)")]
    Stabilizability { iterations: usize },

    #[error("solver did not converge after {iterations} iterations (relative objective gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("system is not Schur stable (spectral radius {spectral_radius})")]
    Instability { spectral_radius: f64 },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDivergence { epoch: usize },

    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing upstream artifact {}: run stage `{stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("invariant {id} violated: {message}")]
    Validation { id: String, message: String },

    #[error("plugin error: {0}")]
    Plugin(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
