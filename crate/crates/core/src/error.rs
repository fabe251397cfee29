use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Shape {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("unresolved ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    /// Stable, machine-parsable class name used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "SHAPE",
            Error::Usage(_) => "USAGE",
            Error::Format(_) => "FORMAT",
            Error::Config(_) => "CONFIG",
            Error::MissingColumn(_) => "MISSING_COLUMN",
            Error::MissingIds(_) => "MISSING_IDS",
            Error::NonFinite(_) => "NON_FINITE",
            Error::Numeric(_) => "NUMERIC",
            Error::Infeasible(_) => "INFEASIBLE",
            Error::Empty(_) => "EMPTY",
            Error::Io(_) => "IO",
            Error::Json(_) => "FORMAT",
        }
    }
}
