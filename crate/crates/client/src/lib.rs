//! Typed client for the geoscope HTTP service.

use geoscope_core::api::{
    CorpusExportResponse, CorpusRequest, CorpusValidateResponse, ErrorBody, GroupRunRequest, GroupRunResponse,
    GroupScoreRequest, GroupScoreResponse, HealthResponse, ParseResponse, RunRequest, RunResponse, SceneResponse,
    ScoreRequest, ScoreResponse, TextRequest, ValidateResponse,
};
use geoscope_core::imagetool::GenSpec;
use geoscope_core::task::TaskKind;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_RETRIES: usize = 3;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url} after {attempts} attempts: {message}")]
    Connect {
        url: String,
        attempts: usize,
        message: String,
    },
    #[error("server answered {status} ({code}): {message}")]
    Api { status: u16, code: String, message: String },
    #[error("unreadable response: {0}")]
    Decode(String),
    #[error("invalid base url `{0}`")]
    BadUrl(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    retries: usize,
    backoff: Duration,
}

impl Client {
    /// `base_url` is the service root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let base = base_url.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClientError::BadUrl(base_url.into()));
        }
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| ClientError::BadUrl(e.to_string()))?;
        Ok(Self {
            base,
            http,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(200),
        })
    }

    /// Connection failures are retried `retries` times with doubling delay.
    pub fn with_retries(mut self, retries: usize, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<R, ClientError> {
        let url = format!("{}{path}", self.base);
        let attempts = self.retries + 1;
        let mut delay = self.backoff;
        let mut k = 0;
        let resp = loop {
            let req = match body {
                Some(b) => self.http.post(&url).json(b),
                None => self.http.get(&url),
            };
            match req.send().await {
                Ok(r) => break r,
                Err(e) if e.is_connect() && k + 1 < attempts => {
                    tracing::warn!(attempt = k + 1, error = %e, "service unreachable, retrying");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    k += 1;
                }
                Err(e) => {
                    return Err(ClientError::Connect {
                        url,
                        attempts: k + 1,
                        message: e.to_string(),
                    })
                }
            }
        };
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Decode(e.to_string()))?;
        if !status.is_success() {
            let (code, message) = match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(b) => (b.code, b.message),
                Err(_) => ("unknown".into(), String::from_utf8_lossy(&bytes).into_owned()),
            };
            return Err(ClientError::Api {
                status: status.as_u16(),
                code,
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ClientError> {
        self.send(path, Some(body)).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.send::<(), _>("/health", None).await
    }

    pub async fn parse(&self, text: &str, task: TaskKind) -> Result<ParseResponse, ClientError> {
        let req = TextRequest {
            text: text.into(),
            task,
        };
        self.post("/v1/trajectory/parse", &req).await
    }

    pub async fn validate(&self, text: &str, task: TaskKind) -> Result<ValidateResponse, ClientError> {
        let req = TextRequest {
            text: text.into(),
            task,
        };
        self.post("/v1/trajectory/validate", &req).await
    }

    pub async fn generate_scene(&self, spec: &GenSpec) -> Result<SceneResponse, ClientError> {
        self.post("/v1/scenes/generate", spec).await
    }

    pub async fn run(&self, req: &RunRequest) -> Result<RunResponse, ClientError> {
        self.post("/v1/episodes/run", req).await
    }

    pub async fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ClientError> {
        self.post("/v1/episodes/score", req).await
    }

    pub async fn run_group(&self, req: &GroupRunRequest) -> Result<GroupRunResponse, ClientError> {
        self.post("/v1/groups/run", req).await
    }

    pub async fn score_group(&self, req: &GroupScoreRequest) -> Result<GroupScoreResponse, ClientError> {
        self.post("/v1/groups/score", req).await
    }

    pub async fn validate_corpus(&self, req: &CorpusRequest) -> Result<CorpusValidateResponse, ClientError> {
        self.post("/v1/corpus/validate", req).await
    }

    pub async fn export_corpus(&self, req: &CorpusRequest) -> Result<CorpusExportResponse, ClientError> {
        self.post("/v1/corpus/export", req).await
    }
}
