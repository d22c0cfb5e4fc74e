use super::{Backend, BackendError, Conversation};
use async_trait::async_trait;
use regex::Regex;
use std::path::Path;
use std::sync::LazyLock;

static OBSERVATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<observation>.*?</observation>").unwrap());

/// Plays back a fixed list of model turns, one per call.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBackend {
    turns: Vec<String>,
}

impl ReplayBackend {
    pub fn new(turns: Vec<String>) -> Self {
        Self { turns }
    }

    /// Splits a full transcript into model turns at its observation blocks.
    pub fn from_transcript(text: &str) -> Self {
        let turns = OBSERVATION
            .split(text)
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        Self { turns }
    }

    /// Reads either a JSON array of turn strings or a raw transcript.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        match serde_json::from_str::<Vec<String>>(text) {
            Ok(turns) => Self::new(turns),
            Err(_) => Self::from_transcript(text),
        }
    }

    pub fn turns(&self) -> &[String] {
        &self.turns
    }
}

#[async_trait]
impl Backend for ReplayBackend {
    async fn next_turn(&self, conv: &Conversation) -> Result<String, BackendError> {
        let i = conv.assistant_turns();
        self.turns.get(i).cloned().ok_or(BackendError::ScriptExhausted(i))
    }
}
