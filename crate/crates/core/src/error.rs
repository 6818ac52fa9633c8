use std::path::PathBuf;

use crate::params::ParamStore;

/// Errors raised across the engine, the model and the experiment plumbing.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error in {path}{}: {message}", locus(*.row, .column.as_deref()))]
    Ingestion {
        path: PathBuf,
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("non-finite value produced at stage `{stage}`")]
    Numeric { stage: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged {
        epoch: usize,
        message: String,
        /// Parameters of the last state whose loss was finite.
        last_finite: Option<Box<ParamStore>>,
    },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn locus(row: Option<usize>, column: Option<&str>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" (row {r}, column `{c}`)"),
        (Some(r), None) => format!(" (row {r})"),
        (None, Some(c)) => format!(" (column `{c}`)"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics or optimization rather than by
    /// the caller's inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. } | Error::Diverged { .. } | Error::NonFiniteGradient { .. }
        )
    }
}

impl Error {
    /// Process exit status for the command-line tool: 3 for numeric or
    /// training failures, 2 for everything the user can fix.
    pub fn exit_code(&self) -> i32 {
        if self.is_numeric() || matches!(self, Error::Domain(_)) {
            3
        } else {
            2
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
