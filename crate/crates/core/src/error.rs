use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value {value} is outside [{min}, {max}) on axis `{axis}`")]
    OutOfRange {
        axis: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("action index {0} is outside 0..=32")]
    ActionIndex(usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("records are not sorted by (vehicle_id, time) at row {row}")]
    Unsorted { row: usize },

    #[error("{count} rows are not covered (first: {first:?}); fill them with the fallback before assembly")]
    Uncovered { count: usize, first: Vec<u64> },

    #[error("hard-constrained refinement is infeasible (phase-one residual {residual:.3e}); rerun with soft constraints")]
    Infeasible { residual: f64 },

    #[error("solver stopped without an optimum: {0}")]
    Solver(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
