use thiserror::Error;

/// Errors produced by data loading, model fitting, and estimation.
#[derive(Error, Debug)]
pub enum Error {
    /// A column named in the schema is absent, duplicated, or misused.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data violates an invariant (non-binary indicator, missing
    /// outcome on a source row, degenerate sample, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A cell could not be parsed as a number.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// An argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// An iterative fit did not converge; carries the last iterate.
    #[error("did not converge after {iterations} iterations (score {score:.3e}); last coefficients {last:?}")]
    Convergence {
        iterations: usize,
        score: f64,
        last: Vec<f64>,
    },

    /// A cross-fitting fold has no usable training rows.
    #[error("fold error: {0}; use larger folds or folds=1")]
    Fold(String),

    /// Every ensemble candidate failed to fit.
    #[error("all ensemble candidates failed: {causes:?}")]
    EnsembleExhausted { causes: Vec<String> },

    /// Variance estimation is impossible (fewer than two observations).
    #[error("inference error: {0}")]
    Inference(String),

    /// Inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
