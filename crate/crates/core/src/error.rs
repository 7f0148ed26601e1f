use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad flags, bad configuration, malformed scenario files.
    Usage,
    /// Data that cannot be parsed or that violates an identification assumption.
    Data,
    /// Numerical failure: singular designs, separation, non-convergence.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("empty file: {0}")]
    EmptyFile(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("{role} not in {{0,1}}: value {value:?} in column `{column}` at data row {row}")]
    NotBinary {
        role: &'static str,
        column: String,
        row: usize,
        value: String,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("positivity violation: {what} for units {units:?}")]
    Positivity { what: String, units: Vec<String> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular design; linearly dependent columns: {columns:?}")]
    SingularDesign { columns: Vec<String> },

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("separation: {0}")]
    Separation(String),

    #[error("logistic fit did not converge after {iterations} iterations; deviance trace {trace:?}")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("bootstrap failed: {failed} of {reps} replicates errored (limit 5%)")]
    ExcessiveFailures { failed: usize, reps: usize },

    #[error("scenario error: {0}")]
    Scenario(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Scenario(_) => ErrorCategory::Usage,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::EmptyFile(_)
            | Error::MissingColumn(_)
            | Error::NonNumeric { .. }
            | Error::NotBinary { .. }
            | Error::Assumption(_)
            | Error::Positivity { .. } => ErrorCategory::Data,
            Error::Dimension(_)
            | Error::SingularDesign { .. }
            | Error::ZeroWeights
            | Error::Separation(_)
            | Error::NonConvergence { .. }
            | Error::ExcessiveFailures { .. } => ErrorCategory::Numeric,
        }
    }

    pub fn category_name(&self) -> &'static str {
        match self.category() {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Data => "data",
            ErrorCategory::Numeric => "numeric",
        }
    }
}
