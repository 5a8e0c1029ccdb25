//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the verification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs that must share a dimension do not.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A value violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Matrix factorization failed even after the documented jitter was added.
    #[error("numerical failure: {context} (signal_variance={signal_variance}, lengthscales={lengthscales:?}, noise_std={noise_std})")]
    NumericalFailure {
        context: &'static str,
        signal_variance: f64,
        lengthscales: Vec<f64>,
        noise_std: f64,
    },

    /// Every restart of the hyperparameter optimizer failed.
    #[error("MLE failed on all {restarts} restarts: {last_error}")]
    MleFailed { restarts: usize, last_error: String },

    /// Specification text did not parse.
    #[error("syntax error at byte {position}: {message}")]
    StlParse { position: usize, message: String },

    /// A formula referenced a channel the trajectory does not carry.
    #[error("unknown channel '{0}' in trajectory")]
    UnknownChannel(String),

    /// A temporal window is not covered by the trajectory's time span.
    #[error("window [{lo}, {hi}] outside trajectory span [{t_first}, {t_last}]")]
    WindowOutsideTrajectory {
        lo: f64,
        hi: f64,
        t_first: f64,
        t_last: f64,
    },

    /// A simulated state stopped being finite.
    #[error("simulation diverged: {0}")]
    SimulationDiverged(String),

    /// A parameter point fell outside the benchmark's bounds.
    #[error("parameter out of bounds: coordinate {index} = {value} not in [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Experiment configuration failed validation.
    #[error("config error ({field}): {message}")]
    Config { field: &'static str, message: String },

    /// Wrapped I/O error with the path that produced it.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Trace or config deserialization failed.
    #[error("failed to decode {path}: {message}")]
    Decode { path: String, message: String },
}

impl Error {
    /// Helper for attaching a path to an I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
