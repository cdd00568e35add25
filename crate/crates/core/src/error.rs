//! Crate-wide error type with process exit-code mapping.

use thiserror::Error;

/// Errors produced anywhere in the calibration stack.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value is outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two values that must agree structurally (grids, lengths) do not.
    #[error("structural error: {0}")]
    Structure(String),

    /// A caller violated an operation precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A model response did not match the expected format.
    #[error("parse error: {0}")]
    Parse(String),

    /// Bad configuration, template, or CLI input.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset line failed schema validation.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// The backend rejected a request or returned an unusable payload.
    #[error("backend error: {0}")]
    Backend(String),

    /// Transport-level failure that survived the retry budget.
    #[error("transport error: {0}")]
    Transport(String),

    /// The backend does not support a requested capability.
    #[error("capability error: backend does not support {0}")]
    Capability(String),

    /// Every sample of an evaluation was dropped or failed.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A metric is mathematically undefined on this input.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 0 success, 1 config/schema, 2 backend/transport,
    /// 3 metric precondition.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Structure(_)
            | Error::Parse(_)
            | Error::Config(_)
            | Error::Schema { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 1,
            Error::Backend(_)
            | Error::Transport(_)
            | Error::Capability(_)
            | Error::Evaluation(_) => 2,
            Error::Precondition(_) | Error::MetricUndefined(_) => 3,
        }
    }

    /// Stable machine-readable kind, used in HTTP error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Structure(_) => "structure",
            Error::Precondition(_) => "precondition",
            Error::Parse(_) => "parse",
            Error::Config(_) => "config",
            Error::Schema { .. } => "schema",
            Error::Backend(_) => "backend",
            Error::Transport(_) => "transport",
            Error::Capability(_) => "capability",
            Error::Evaluation(_) => "evaluation",
            Error::MetricUndefined(_) => "metric_undefined",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Rebuild an error from its wire `kind` tag. Used by HTTP clients so
    /// exit codes survive the round trip through the service.
    pub fn from_kind(kind: &str, message: String) -> Self {
        match kind {
            "domain" => Error::Domain(message),
            "structure" => Error::Structure(message),
            "precondition" => Error::Precondition(message),
            "parse" => Error::Parse(message),
            "schema" => Error::Config(message),
            "backend" => Error::Backend(message),
            "transport" => Error::Transport(message),
            "capability" => Error::Capability(message),
            "evaluation" => Error::Evaluation(message),
            "metric_undefined" => Error::MetricUndefined(message),
            _ => Error::Config(message),
        }
    }
}
