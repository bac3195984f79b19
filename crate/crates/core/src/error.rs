use thiserror::Error;

/// A single problem found while validating a dataset.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("year {year}: {field}: {message}")]
pub struct Violation {
    pub year: i32,
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset failed validation ({} problem(s)): {}", .0.len(), join_violations(.0))]
    InvalidDataset(Vec<Violation>),

    #[error("log-posterior is not finite at the requested state")]
    NonFinite,

    #[error("could not find a finite starting point after {attempts} attempts; last state: {dump}")]
    Initialization { attempts: usize, dump: String },

    #[error("harvest policy infeasible at year index {year_index}: breeding draw never exceeded harvest {harvest}")]
    InfeasibleHarvest { year_index: usize, harvest: f64 },

    #[error("strategy infeasible: {0}")]
    InfeasibleStrategy(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
