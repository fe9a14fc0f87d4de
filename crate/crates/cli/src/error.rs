//! Exit codes and the error type carrying them.

use std::fmt;

use latnas::analysis::AnalysisError;
use latnas::distribution::DistError;
use latnas::evaluator::EvalError;
use latnas::search::SearchError;
use latnas::space::SpaceError;
use latnas::supernet::SupernetError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_EVALUATOR: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError { code: EXIT_FAILURE, message: message.into() }
    }

    pub fn infeasible() -> Self {
        CliError { code: EXIT_INFEASIBLE, message: "no feasible architecture".into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<SpaceError> for CliError {
    fn from(e: SpaceError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError { code: EXIT_EVALUATOR, message: e.to_string() }
    }
}

impl From<DistError> for CliError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::Space(s) => s.into(),
            other => CliError::failure(other.to_string()),
        }
    }
}

impl From<SupernetError> for CliError {
    fn from(e: SupernetError) -> Self {
        match e {
            SupernetError::Eval(x) => x.into(),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Eval(x) => x.into(),
            SearchError::Dist(x) => x.into(),
            SearchError::Space(x) => x.into(),
            SearchError::Settings(s) => CliError::config(s),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Supernet(x) => x.into(),
            other => CliError::failure(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::failure(e.to_string())
    }
}

/// For errors that carry no exit-code meaning of their own.
pub fn failure<E: fmt::Display>(e: E) -> CliError {
    CliError::failure(e.to_string())
}
