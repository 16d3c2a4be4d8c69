use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected field of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("domain: {0}")]
    Domain(String),

    #[error("temperature lost positivity (min theta = {min_theta:.3e})")]
    Singularity { min_theta: f64 },

    #[error("linear solve stalled at relative residual {residual:.3e} after {iterations} iterations ({context})")]
    SolveFailure {
        residual: f64,
        iterations: usize,
        context: &'static str,
    },

    #[error("spectral decomposition unavailable: {nodes} nodes exceeds the cap of {cap}")]
    SpectralCap { nodes: usize, cap: usize },

    #[error(
        "time step failed at t = {time:.6}: residual {residual:.3e}, min theta {min_theta:.3e} \
         after {halvings} dt halvings"
    )]
    StepFailure {
        time: f64,
        residual: f64,
        min_theta: f64,
        halvings: usize,
    },

    #[error("equilibrium solve stalled at residual {residual:.3e} after {iterations} iterations")]
    EquilibriumFailure { residual: f64, iterations: usize },

    #[error("record: {0}")]
    Record(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
