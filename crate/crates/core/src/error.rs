use thiserror::Error;

/// Errors produced by model construction, cost evaluation, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown state label `{0}`")]
    UnknownState(String),

    #[error("unknown input label `{0}`")]
    UnknownInput(String),

    #[error("no transition from state `{state}` under input `{input}`")]
    NoTransition { state: String, input: String },

    #[error("stage cost undefined at {0}")]
    CostDomain(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
