use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}, column `{column}`: cannot parse {value:?}")]
    Parse { line: u64, column: String, value: String },

    #[error("integrity error: duplicate (firm_id, year) keys: {}", format_keys(.duplicates))]
    Integrity { duplicates: Vec<(String, i32)> },

    #[error("missing deflator for sector2 {sector2} in year {year}")]
    MissingDeflator { sector2: String, year: i32 },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("unknown sector {0} (not in input-output table)")]
    UnknownSector(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty market: survival mass {mass:e} below threshold")]
    EmptyMarket { mass: f64 },

    #[error("divergent integral: {0}")]
    Divergence(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    Convergence { iterations: usize, last_change: f64 },

    #[error("rank-deficient design; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("degenerate instrument: {0}")]
    DegenerateInstrument(String),

    #[error("perfect separation in selection model: {0}")]
    Separation(String),

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

fn format_keys(keys: &[(String, i32)]) -> String {
    keys.iter()
        .map(|(f, y)| format!("{f}/{y}"))
        .collect::<Vec<_>>()
        .join(", ")
}
