//! Chat-completions client for a hosted vision-language model.

use super::{Backend, BackendError, Conversation, Role};
use async_trait::async_trait;
use base64::Engine;
use image::RgbImage;
use serde_json::{json, Value};
use std::io::Cursor;
use std::time::Duration;

pub const ENDPOINT_VAR: &str = "GEOSCOPE_ENDPOINT";
pub const MODEL_VAR: &str = "GEOSCOPE_MODEL";
pub const TOKEN_VAR: &str = "GEOSCOPE_API_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of the chat completions route.
    pub endpoint: String,
    pub model: String,
    pub token: Option<String>,
    pub retries: usize,
    pub backoff: Duration,
    pub timeout: Duration,
    pub temperature: Option<f64>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            token: None,
            retries: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(120),
            temperature: None,
        }
    }
}

impl RemoteConfig {
    /// Defaults overridden by the environment.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(v) = std::env::var(ENDPOINT_VAR) {
            c.endpoint = v;
        }
        if let Ok(v) = std::env::var(MODEL_VAR) {
            c.model = v;
        }
        c.token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
        c
    }
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    cfg: RemoteConfig,
    http: reqwest::Client,
}

enum Failure {
    Retry(String),
    Fatal(String),
}

fn png_data_url(img: &RgbImage) -> Result<String, BackendError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| BackendError::BadReply(format!("cannot encode view: {e}")))?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    ))
}

/// Role-tagged messages with images attached as inline data URLs.
pub fn wire_messages(conv: &Conversation) -> Result<Vec<Value>, BackendError> {
    conv.messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content = match &m.image {
                None => json!(m.text),
                Some(img) => json!([
                    {"type": "image_url", "image_url": {"url": png_data_url(img)?}},
                    {"type": "text", "text": m.text},
                ]),
            };
            Ok(json!({"role": role, "content": content}))
        })
        .collect()
}

fn reply_text(v: &Value) -> Option<String> {
    let content = &v["choices"][0]["message"]["content"];
    if let Some(s) = content.as_str() {
        return Some(s.to_string());
    }
    let parts = content.as_array()?;
    Some(
        parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
    )
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let http = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    async fn attempt(&self, body: &Value) -> Result<String, Failure> {
        let mut req = self.http.post(&self.cfg.endpoint).json(body);
        if let Some(t) = &self.cfg.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: Value = resp.json().await.map_err(|e| Failure::Fatal(e.to_string()))?;
        reply_text(&v).ok_or_else(|| Failure::Fatal("reply has no message content".into()))
    }
}

#[async_trait]
impl Backend for RemoteBackend {
    async fn next_turn(&self, conv: &Conversation) -> Result<String, BackendError> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": wire_messages(conv)?,
        });
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        let attempts = self.cfg.retries + 1;
        let mut delay = self.cfg.backoff;
        let mut last = String::new();
        for k in 0..attempts {
            match self.attempt(&body).await {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(m)) => return Err(BackendError::BadReply(m)),
                Err(Failure::Retry(m)) => {
                    tracing::warn!(attempt = k + 1, error = %m, "backend request failed");
                    last = m;
                }
            }
            if k + 1 < attempts {
                tokio::time::sleep(delay).await;
                delay *= 2;
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }
}
