use thiserror::Error;

/// Errors raised by the library.
///
/// Simulation faults carry the time and agent at which they occurred.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("lyapunov equation not solvable: {0}")]
    Solvability(String),

    #[error("scheduling fault: {0}")]
    Scheduling(String),

    #[error("input history gap for agent {agent} at t={t}: query at {query} outside [{oldest}, {newest}]")]
    HistoryGap {
        agent: usize,
        t: f64,
        query: f64,
        oldest: f64,
        newest: f64,
    },

    #[error("prediction overflow for agent {agent} at t={t}")]
    PredictionOverflow { agent: usize, t: f64 },

    #[error("state divergence for agent {agent} at t={t}: {what}")]
    Divergence { agent: usize, t: f64, what: String },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Attach an agent id and timestamp to a history fault raised without context.
    pub(crate) fn at(self, agent: usize, t: f64) -> Self {
        match self {
            Error::HistoryGap {
                query,
                oldest,
                newest,
                ..
            } => Error::HistoryGap {
                agent,
                t,
                query,
                oldest,
                newest,
            },
            Error::PredictionOverflow { .. } => Error::PredictionOverflow { agent, t },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
