use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A mapped or required column is absent from the input header.
    #[error("schema error: {0}")]
    Schema(String),

    /// A single data row could not be turned into a valid record.
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("data inconsistency: {0}")]
    Inconsistent(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("duplicate zone id {0:?}")]
    DuplicateZone(String),

    #[error("zone {0:?} missing from block {1}")]
    MissingZone(String, String),

    /// A model failed to fit; `message` carries the diagnostics.
    #[error("{model} fit failed: {message}")]
    Fit { model: &'static str, message: String },

    /// An iterative solver ran out of iterations.
    #[error("{model} did not converge after {iterations} iterations (objective {objective}, residual {residual:e})")]
    NotConverged {
        model: &'static str,
        iterations: usize,
        objective: f64,
        residual: f64,
        /// Intercept followed by slopes.
        last_iterate: Vec<f64>,
        trace: Vec<f64>,
    },

    /// Prediction requested on a matrix whose columns differ from training.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("hyperparameter selection failed: {0}")]
    Selection(String),

    #[error("outer fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn fit(model: &'static str, message: impl Into<String>) -> Self {
        Error::Fit {
            model,
            message: message.into(),
        }
    }
}
