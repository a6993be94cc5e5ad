use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameters: grid extents, recipes, scheme settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A motility function evaluated outside its validity range.
    #[error("motility {kind} evaluated at s = {s:e}, below its cutoff {s_min:e}")]
    Domain { kind: &'static str, s: f64, s_min: f64 },

    /// A concentrated profile is too narrow for the grid.
    #[error("lambda = {lambda:e} is under-resolved on {n_cells} cells; needs n_cells >= {required}")]
    Unresolved {
        lambda: f64,
        n_cells: usize,
        required: usize,
    },

    /// Non-finite or otherwise invalid numerical input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A direct linear solve hit a zero or non-finite pivot.
    #[error("linear solve failed at row {row}: pivot {pivot:e}")]
    Solver { row: usize, pivot: f64 },

    /// A series or checkpoint file does not match the expected layout.
    #[error("schema error in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Process exit codes shared by the CLI and the sweep summary.
pub mod exit {
    pub const OK: i32 = 0;
    /// Panic or other unexpected failure.
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const OVERFLOW: i32 = 3;
    pub const DT_COLLAPSE: i32 = 4;
    pub const IO: i32 = 5;
    pub const CHECK_FAILED: i32 = 6;
    /// Linear solve failure, non-finite data or motility domain violation.
    pub const NUMERICAL: i32 = 7;
    pub const SCHEMA: i32 = 8;
    /// At least one sweep entry did not exit with [`OK`].
    pub const SWEEP_FAILED: i32 = 9;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unresolved { .. } => exit::CONFIG,
            Error::Domain { .. } | Error::InvalidInput(_) | Error::Solver { .. } => exit::NUMERICAL,
            Error::Schema { .. } => exit::SCHEMA,
            Error::Io { .. } | Error::Csv(_) => exit::IO,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
