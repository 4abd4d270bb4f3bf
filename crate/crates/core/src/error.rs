use thiserror::Error;

/// Errors raised across the plant, controller and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VshpError {
    /// A model equation was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters or controller settings violate a documented invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// No admissible equilibrium exists for the requested operating point.
    #[error("infeasible operating point: {0}")]
    Infeasible(String),

    /// An iterative method stopped without meeting its tolerance.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The closed-loop simulation produced non-finite values.
    #[error("simulation aborted at t = {time:.3} s: {reason}")]
    SimulationAborted { time: f64, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, VshpError>;

impl From<std::io::Error> for VshpError {
    fn from(err: std::io::Error) -> Self {
        VshpError::Io(err.to_string())
    }
}

impl From<csv::Error> for VshpError {
    fn from(err: csv::Error) -> Self {
        VshpError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for VshpError {
    fn from(err: serde_json::Error) -> Self {
        VshpError::Config(err.to_string())
    }
}
