use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("budget infeasible: {message} (minimal feasible budget {minimal_budget:.6e})")]
    BudgetInfeasible { minimal_budget: f64, message: String },
    #[error("oracle inconsistency{}: {message}", node.as_ref().map(|n| format!(" at node {n}")).unwrap_or_default())]
    OracleInconsistency { node: Option<String>, message: String },
    #[error("size estimate {estimate} exceeds cap {cap}")]
    SizeLimit { estimate: u64, cap: u64 },
    #[error("training failure: {0}")]
    TrainingFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
