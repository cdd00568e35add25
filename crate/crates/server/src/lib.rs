//! HTTP/JSON service over the calibration pipeline.
//!
//! One POST endpoint per pipeline operation under `/api/v1/`, request and
//! response bodies from `calibrant_core::api`. The service owns the
//! backends, the response cache, and the runs directory; clients (the CLI
//! among them) stay thin.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use calibrant_core::api::{
    CascadeRequest, CascadeResponse, CorrectnessRequest, ElicitRequest, ErrorBody, GenerateRequest,
    GenerateResponse, HealthResponse, IngestRequest, IngestResponse, MetricsRequest, ReportRequest,
    ReportResponse, StageResponse, SweepTempRequest, SweepTempResponse,
};
use calibrant_core::elicitation::ElicitationMethod;
use calibrant_core::metrics::Split;
use calibrant_core::pipeline::config::Config;
use calibrant_core::pipeline::report::CalibrationReport;
use calibrant_core::pipeline::Pipeline;
use calibrant_core::{Error, LevelGrid};

pub struct AppState {
    pipeline: Pipeline,
    /// Per-run locks: concurrent requests mutating the same run would race
    /// on its record file, so writes to one run are serialized.
    run_locks: std::sync::Mutex<std::collections::HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    fn run_lock(&self, run: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.run_locks.lock().expect("run lock registry poisoned");
        locks.entry(run.to_string()).or_default().clone()
    }
}

pub type SharedState = Arc<AppState>;

/// An error response carrying the core error's kind, so clients can map it
/// back to the right exit code.
struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.exit_code() {
            1 => StatusCode::BAD_REQUEST,
            2 => StatusCode::BAD_GATEWAY,
            3 => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            kind: self.0.kind().to_string(),
            error: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/api/v1/ingest", post(ingest))
        .route("/api/v1/generate", post(generate))
        .route("/api/v1/correctness", post(correctness))
        .route("/api/v1/elicit", post(elicit))
        .route("/api/v1/metrics", post(metrics))
        .route("/api/v1/cascade", post(cascade))
        .route("/api/v1/sweep-temp", post(sweep_temp))
        .route("/api/v1/report", post(report))
        .with_state(state)
}

/// Build the app state from a config.
pub fn state_from_config(config: Config) -> Result<SharedState, Error> {
    Ok(Arc::new(AppState {
        pipeline: Pipeline::from_config(config)?,
        run_locks: std::sync::Mutex::new(std::collections::HashMap::new()),
    }))
}

/// Bind a listener (an ephemeral port when the configured port is 0) and
/// serve until the task is dropped or interrupted.
pub async fn serve(config: Config, addr_override: Option<String>) -> Result<(), Error> {
    let addr = addr_override.unwrap_or_else(|| config.server.addr.clone());
    let state = state_from_config(config)?;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    tracing::info!("listening on {}", listener.local_addr().map_err(Error::Io)?);
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Transport(format!("server error: {e}")))
}

/// Test harness entry: bind an ephemeral port and return its address plus
/// the running server task.
pub async fn bind_ephemeral(
    config: Config,
) -> Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>), Error> {
    let state = state_from_config(config)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(Error::Io)?;
    let addr = listener.local_addr().map_err(Error::Io)?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((addr, handle))
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn ingest(
    State(state): State<SharedState>,
    Json(req): Json<IngestRequest>,
) -> ApiResult<IngestResponse> {
    let ingested = state.pipeline.resolve_dataset(&req.dataset, req.lenient)?;
    let dev = ingested
        .records
        .iter()
        .filter(|r| r.split == Some(Split::Dev))
        .count();
    Ok(Json(IngestResponse {
        count: ingested.records.len(),
        dev,
        test: ingested.records.len() - dev,
        hash_split_applied: ingested.hash_split_applied,
        skipped: ingested.skipped,
    }))
}

async fn generate(
    State(state): State<SharedState>,
    Json(req): Json<GenerateRequest>,
) -> ApiResult<GenerateResponse> {
    if let Some(levels) = &req.grid {
        // the grid is a pipeline-wide setting; reject a mismatching override
        // instead of silently producing incomparable distributions
        let requested = LevelGrid::new(levels.clone())?;
        if &requested != state.pipeline.grid() {
            return Err(ApiError(Error::Config(
                "request grid differs from the server's configured grid; restart the server with --grid"
                    .into(),
            )));
        }
    }
    let lock = state.run_lock(&req.run);
    let _guard = lock.lock().await;
    let summary = state
        .pipeline
        .generate(
            &req.run,
            &req.task,
            &req.dataset,
            &req.backend,
            req.temperature,
            req.lenient,
        )
        .await?;
    Ok(Json(GenerateResponse {
        run_dir: summary.run_dir.to_string_lossy().into_owned(),
        generated: summary.generated,
        resumed: summary.resumed,
        failures: summary.failures,
    }))
}

async fn correctness(
    State(state): State<SharedState>,
    Json(req): Json<CorrectnessRequest>,
) -> ApiResult<StageResponse> {
    let lock = state.run_lock(&req.run);
    let _guard = lock.lock().await;
    let summary = state.pipeline.correctness(&req.run, &req.task).await?;
    Ok(Json(StageResponse {
        evaluated: summary.evaluated,
        skipped: summary.skipped,
        failures: summary.failures,
        dropped_samples: summary.dropped_samples,
    }))
}

fn parse_methods(names: &[String]) -> Result<Vec<ElicitationMethod>, Error> {
    names.iter().map(|n| ElicitationMethod::parse(n)).collect()
}

async fn elicit(
    State(state): State<SharedState>,
    Json(req): Json<ElicitRequest>,
) -> ApiResult<StageResponse> {
    let methods = parse_methods(&req.methods)?;
    let lock = state.run_lock(&req.run);
    let _guard = lock.lock().await;
    let summary = state.pipeline.elicit(&req.run, &req.task, &methods).await?;
    Ok(Json(StageResponse {
        evaluated: summary.per_method.values().sum(),
        skipped: 0,
        failures: summary.failures,
        dropped_samples: 0,
    }))
}

async fn metrics(
    State(state): State<SharedState>,
    Json(req): Json<MetricsRequest>,
) -> ApiResult<CalibrationReport> {
    let report = state
        .pipeline
        .metrics(&req.run, &req.task, req.methods.as_deref(), req.tau_s)?;
    Ok(Json(report))
}

async fn cascade(
    State(state): State<SharedState>,
    Json(req): Json<CascadeRequest>,
) -> ApiResult<CascadeResponse> {
    let (rows, csv_path) = match (&req.strong_run, &req.strong_backend) {
        (Some(strong_run), None) => state.pipeline.cascade_offline(
            &req.weak_run,
            strong_run,
            &req.task,
            &req.method,
            req.tau_s,
            req.success_threshold,
            req.budgets.clone(),
            req.budget_fractions.clone(),
            req.seeds.clone(),
        )?,
        (None, Some(strong_backend)) => {
            let budget = match req.budgets.as_deref() {
                Some([b]) => *b,
                _ => {
                    return Err(ApiError(Error::Config(
                        "live cascade takes exactly one budget".into(),
                    )))
                }
            };
            state
                .pipeline
                .cascade_live(
                    &req.weak_run,
                    &req.task,
                    &req.method,
                    strong_backend,
                    budget,
                    req.tau_s,
                    req.success_threshold,
                )
                .await?
        }
        _ => {
            return Err(ApiError(Error::Config(
                "cascade needs exactly one of strong_run (offline) or strong_backend (live)".into(),
            )))
        }
    };
    Ok(Json(CascadeResponse {
        rows,
        csv_path: csv_path.to_string_lossy().into_owned(),
    }))
}

async fn sweep_temp(
    State(state): State<SharedState>,
    Json(req): Json<SweepTempRequest>,
) -> ApiResult<SweepTempResponse> {
    let methods = parse_methods(&req.methods)?;
    let lock = state.run_lock(&req.run);
    let _guard = lock.lock().await;
    let (rows, csv_path) = state
        .pipeline
        .sweep_temperature(
            &req.run,
            &req.task,
            &req.dataset,
            &req.backend,
            &req.temperatures,
            &methods,
        )
        .await?;
    Ok(Json(SweepTempResponse {
        rows,
        csv_path: csv_path.to_string_lossy().into_owned(),
    }))
}

async fn report(
    State(state): State<SharedState>,
    Json(req): Json<ReportRequest>,
) -> ApiResult<ReportResponse> {
    let (report, path) = state.pipeline.report(&req.run, &req.task)?;
    Ok(Json(ReportResponse {
        report,
        report_path: path.to_string_lossy().into_owned(),
    }))
}
