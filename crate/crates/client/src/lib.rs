//! Thin HTTP client for the calibration service.
//!
//! One method per endpoint; error bodies round-trip the service's error
//! kind so callers keep the same exit-code mapping they would have had
//! in-process.

use calibrant_core::api::{
    CascadeRequest, CascadeResponse, CorrectnessRequest, ElicitRequest, ErrorBody, GenerateRequest,
    GenerateResponse, HealthResponse, IngestRequest, IngestResponse, MetricsRequest, ReportRequest,
    ReportResponse, StageResponse, SweepTempRequest, SweepTempResponse,
};
use calibrant_core::pipeline::report::CalibrationReport;
use calibrant_core::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const SERVER_URL_ENV: &str = "CALIBRANT_SERVER_URL";
pub const DEFAULT_SERVER_URL: &str = "http://127.0.0.1:8089";

#[derive(Debug, Clone)]
pub struct CalibrantClient {
    base_url: String,
    http: reqwest::Client,
}

impl CalibrantClient {
    /// Explicit base URL, e.g. `http://127.0.0.1:8089`.
    pub fn new(base_url: impl Into<String>) -> Result<Self, Error> {
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(CalibrantClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http,
        })
    }

    /// `CALIBRANT_SERVER_URL` or the default local address.
    pub fn from_env() -> Result<Self, Error> {
        let url = std::env::var(SERVER_URL_ENV).unwrap_or_else(|_| DEFAULT_SERVER_URL.to_string());
        Self::new(url)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        endpoint: &str,
        req: &Req,
    ) -> Result<Resp, Error> {
        let url = format!("{}{endpoint}", self.base_url);
        let response = self
            .http
            .post(&url)
            .json(req)
            .send()
            .await
            .map_err(|e| Error::Transport(format!("cannot reach service at {url}: {e}")))?;
        let status = response.status();
        if status.is_success() {
            return response
                .json::<Resp>()
                .await
                .map_err(|e| Error::Transport(format!("unreadable response from {url}: {e}")));
        }
        let body = response.text().await.unwrap_or_default();
        match serde_json::from_str::<ErrorBody>(&body) {
            Ok(err) => Err(Error::from_kind(&err.kind, err.error)),
            Err(_) => Err(Error::Transport(format!(
                "service returned HTTP {status}: {}",
                body.chars().take(300).collect::<String>()
            ))),
        }
    }

    pub async fn health(&self) -> Result<HealthResponse, Error> {
        let url = format!("{}/health", self.base_url);
        self.http
            .get(&url)
            .send()
            .await
            .map_err(|e| Error::Transport(format!("cannot reach service at {url}: {e}")))?
            .json()
            .await
            .map_err(|e| Error::Transport(format!("unreadable health response: {e}")))
    }

    pub async fn ingest(&self, req: &IngestRequest) -> Result<IngestResponse, Error> {
        self.post("/api/v1/ingest", req).await
    }

    pub async fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, Error> {
        self.post("/api/v1/generate", req).await
    }

    pub async fn correctness(&self, req: &CorrectnessRequest) -> Result<StageResponse, Error> {
        self.post("/api/v1/correctness", req).await
    }

    pub async fn elicit(&self, req: &ElicitRequest) -> Result<StageResponse, Error> {
        self.post("/api/v1/elicit", req).await
    }

    pub async fn metrics(&self, req: &MetricsRequest) -> Result<CalibrationReport, Error> {
        self.post("/api/v1/metrics", req).await
    }

    pub async fn cascade(&self, req: &CascadeRequest) -> Result<CascadeResponse, Error> {
        self.post("/api/v1/cascade", req).await
    }

    pub async fn sweep_temp(&self, req: &SweepTempRequest) -> Result<SweepTempResponse, Error> {
        self.post("/api/v1/sweep-temp", req).await
    }

    pub async fn report(&self, req: &ReportRequest) -> Result<ReportResponse, Error> {
        self.post("/api/v1/report", req).await
    }
}
