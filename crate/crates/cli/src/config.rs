//! Config file and flag resolution. Flags win over the file, the file wins
//! over built-in defaults.

use anyhow::{bail, Context, Result};
use geoscope_core::agent::RemoteConfig;
use geoscope_core::reward::RewardWeights;
use geoscope_core::task::TaskKind;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_OUT: &str = "geoscope-out";

/// Settings file, TOML. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub server: Option<String>,
    pub scene: Option<PathBuf>,
    pub task: Option<TaskKind>,
    pub question: Option<String>,
    pub backend: Option<String>,
    pub budget: Option<usize>,
    pub max_depth: Option<usize>,
    pub max_turns: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub group: Option<usize>,
    pub label: Option<String>,
    pub dedup_iou: Option<f64>,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub remote: RemoteSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub retries: Option<usize>,
    pub timeout_secs: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Applies the file's `[weights]` table on top of the defaults.
    pub fn weights(&self) -> Result<RewardWeights> {
        let spec: Vec<String> = self.weights.iter().map(|(k, v)| format!("{k}={v}")).collect();
        Ok(RewardWeights::default().with_overrides(&spec.join(","))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Heuristic,
    Replay(PathBuf),
    Remote,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "heuristic" => Ok(BackendChoice::Heuristic),
            "remote" => Ok(BackendChoice::Remote),
            _ => match s.strip_prefix("replay:") {
                Some(p) if !p.is_empty() => Ok(BackendChoice::Replay(p.into())),
                _ => Err(format!("unknown backend `{s}`; expected heuristic, remote or replay:<file>")),
            },
        }
    }
}

/// Endpoint and model: flag, then file, then environment, then default.
/// The token only ever comes from the environment.
pub fn remote_config(endpoint: Option<String>, model: Option<String>, file: &RemoteSection) -> RemoteConfig {
    let mut c = RemoteConfig::from_env();
    if let Some(e) = endpoint.or_else(|| file.endpoint.clone()) {
        c.endpoint = e;
    }
    if let Some(m) = model.or_else(|| file.model.clone()) {
        c.model = m;
    }
    if let Some(r) = file.retries {
        c.retries = r;
    }
    if let Some(t) = file.timeout_secs {
        c.timeout = std::time::Duration::from_secs(t);
    }
    c
}

/// Creates `dir` and proves it writable before any work is done.
pub fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let probe = dir.join(".geoscope-write-probe");
    std::fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    std::fs::remove_file(&probe).ok();
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    Ok(())
}
