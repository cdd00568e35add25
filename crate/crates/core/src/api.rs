//! Wire types of the HTTP service.
//!
//! The service exposes the pipeline's operations over JSON; these request
//! and response bodies are shared by the server and the thin client so the
//! two cannot drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::records::ExampleRecord;
use crate::pipeline::report::{CalibrationReport, CascadeRow, SweepRow};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

/// Error body carried on non-2xx responses; `kind` round-trips the error
/// class so CLI exit codes survive the HTTP hop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub error: String,
}

/// A dataset, either as a server-side path or inline records.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<ExampleRecord>>,
}

impl DatasetSource {
    pub fn from_path(path: impl Into<String>) -> Self {
        DatasetSource {
            path: Some(path.into()),
            records: None,
        }
    }

    pub fn from_records(records: Vec<ExampleRecord>) -> Self {
        DatasetSource {
            path: None,
            records: Some(records),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.records) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Config(
                "dataset source needs exactly one of `path` or `records`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestResponse {
    pub count: usize,
    pub dev: usize,
    pub test: usize,
    pub hash_split_applied: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    /// Run id (a subdirectory of the server's runs dir) or absolute path.
    pub run: String,
    pub task: String,
    pub dataset: DatasetSource,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub run_dir: String,
    pub generated: usize,
    /// Examples already present from an earlier, interrupted run.
    pub resumed: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectnessRequest {
    pub run: String,
    pub task: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageResponse {
    pub evaluated: usize,
    pub skipped: usize,
    pub failures: usize,
    /// Evaluator samples dropped after retries across the run.
    pub dropped_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElicitRequest {
    pub run: String,
    pub task: String,
    /// Method names: cse, psc, sl, bse, asc, psc-f1, hybrid.
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRequest {
    pub run: String,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeRequest {
    /// Run holding the weak model's answers, confidence, and correctness.
    pub weak_run: String,
    /// Run holding the strong model's answers and correctness (offline
    /// mode; every weak example must be covered).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_run: Option<String>,
    pub task: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<usize>>,
    /// Budgets as fractions of the dataset size; sugar over `budgets`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_fractions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Live mode: call this strong backend only on escalated queries
    /// instead of reading a precomputed strong run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_backend: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeResponse {
    pub rows: Vec<CascadeRow>,
    pub csv_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTempRequest {
    pub run: String,
    pub task: String,
    pub dataset: DatasetSource,
    pub backend: String,
    pub temperatures: Vec<f64>,
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTempResponse {
    pub rows: Vec<SweepRow>,
    pub csv_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRequest {
    pub run: String,
    pub task: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportResponse {
    pub report: CalibrationReport,
    pub report_path: String,
}
