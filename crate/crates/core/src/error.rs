use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("episode exhausted: step {step_count} reached horizon {horizon}")]
    EpisodeExhausted { step_count: usize, horizon: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("oracle refused: state space of ~{estimated} states exceeds guard {guard}")]
    OracleRefused { estimated: u128, guard: u128 },

    #[error("value iteration did not converge within {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
