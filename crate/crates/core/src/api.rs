//! Request and response bodies of the HTTP service, plus the glue that turns
//! them into runtime objects. Shared by the server and its clients.

use crate::agent::{
    query_label, scene_ground_truth, AgentError, Backend, BackendError, EpisodeConfig, EpisodeRecord,
    HeuristicBackend, HeuristicConfig, RemoteBackend, RemoteConfig, ReplayBackend,
};
use crate::corpus::{QcReport, StructureIssue};
use crate::evidence::DEFAULT_DEDUP_IOU;
use crate::imagetool::{gen_scene, overlay, view_size, GenSpec, Scene, SyntheticSpec, ToolError};
use crate::plan::PlanReport;
use crate::reward::{GroundTruth, GroupScores, RewardBreakdown};
use crate::task::TaskKind;
use crate::trajectory::{FormatVerdict, Trajectory};
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

/// Where an episode's image comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneInput {
    Synthetic { spec: SyntheticSpec },
    Generate { spec: GenSpec },
    /// An encoded PNG, JPEG or TIFF file, base64.
    Raster { data: String },
}

impl SceneInput {
    pub fn load(&self) -> Result<Scene, ToolError> {
        match self {
            SceneInput::Synthetic { spec } => Scene::synthetic(spec.clone()),
            SceneInput::Generate { spec } => Scene::synthetic(gen_scene(spec)?),
            SceneInput::Raster { data } => {
                let bytes = decode_b64(data).map_err(ToolError::Unreadable)?;
                let img = image::load_from_memory(&bytes).map_err(|e| ToolError::Unreadable(e.to_string()))?;
                Scene::from_image(img.to_rgb8())
            }
        }
    }
}

fn default_dedup() -> Option<f64> {
    Some(DEFAULT_DEDUP_IOU)
}

fn default_retries() -> usize {
    RemoteConfig::default().retries
}

fn default_timeout_ms() -> u64 {
    RemoteConfig::default().timeout.as_millis() as u64
}

fn default_backoff_ms() -> u64 {
    RemoteConfig::default().backoff.as_millis() as u64
}

/// Decision backend selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Heuristic {
        #[serde(default)]
        seed: Option<u64>,
        /// `null` counts every sighting.
        #[serde(default = "default_dedup")]
        dedup_iou: Option<f64>,
    },
    Replay {
        turns: Vec<String>,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        token: Option<String>,
        #[serde(default = "default_retries")]
        retries: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
        #[serde(default)]
        temperature: Option<f64>,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Heuristic {
            seed: None,
            dedup_iou: default_dedup(),
        }
    }
}

impl BackendSpec {
    /// Backend for member `index` of a group. Heuristic seeds are offset by
    /// the index so members explore in different orders.
    pub fn build(&self, index: usize) -> Result<Arc<dyn Backend>, BackendError> {
        Ok(match self {
            BackendSpec::Heuristic { seed, dedup_iou } => Arc::new(HeuristicBackend::new(HeuristicConfig {
                dedup_iou: *dedup_iou,
                seed: seed.map(|s| s.wrapping_add(index as u64)),
            })),
            BackendSpec::Replay { turns } => Arc::new(ReplayBackend::new(turns.clone())),
            BackendSpec::Remote {
                endpoint,
                model,
                token,
                retries,
                timeout_ms,
                backoff_ms,
                temperature,
            } => Arc::new(RemoteBackend::new(RemoteConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                token: token.clone(),
                retries: *retries,
                backoff: Duration::from_millis(*backoff_ms),
                timeout: Duration::from_millis(*timeout_ms),
                temperature: *temperature,
            })?),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
    pub task: TaskKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseResponse {
    pub trajectory: Trajectory,
    /// Empty when the whole text parsed.
    pub errors: Vec<String>,
    /// Canonical re-serialization, present when the text parsed.
    pub canonical: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub format: FormatVerdict,
    pub structure: Vec<StructureIssue>,
    pub plan: Option<PlanReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    pub scene: SceneInput,
    pub question: String,
    #[serde(default)]
    pub config: EpisodeConfig,
    #[serde(default)]
    pub backend: BackendSpec,
    /// Gold answer; derived from a synthetic scene when absent.
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    /// Return a PNG of the global view with plan, crop and evidence boxes.
    #[serde(default)]
    pub overlay: bool,
}

impl RunRequest {
    /// Effective config: the target label falls back to the question's.
    pub fn effective_config(&self) -> EpisodeConfig {
        let mut cfg = self.config.clone();
        if cfg.label.is_none() {
            cfg.label = query_label(&self.question);
        }
        cfg
    }

    pub fn resolve_ground_truth(&self, scene: &Scene, cfg: &EpisodeConfig) -> Option<GroundTruth> {
        self.ground_truth
            .clone()
            .or_else(|| scene_ground_truth(scene, cfg.task, cfg.label.as_deref()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResponse {
    pub record: EpisodeRecord,
    pub ground_truth: Option<GroundTruth>,
    /// Base64 PNG.
    pub overlay_png: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRunRequest {
    #[serde(flatten)]
    pub run: RunRequest,
    pub group: usize,
}

/// One group member: a record, or why the episode failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMember {
    pub record: Option<EpisodeRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRunResponse {
    pub members: Vec<GroupMember>,
    pub scores: GroupScores,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub record: EpisodeRecord,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub breakdown: RewardBreakdown,
    /// Whether the recomputation equals the breakdown stored in the record.
    pub matches_stored: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupScoreRequest {
    pub records: Vec<EpisodeRecord>,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupScoreResponse {
    pub breakdowns: Vec<RewardBreakdown>,
    pub scores: GroupScores,
}

/// Corpus and annotations as JSON Lines text.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusRequest {
    pub records: String,
    #[serde(default)]
    pub annotations: Option<String>,
    #[serde(default)]
    pub leak_iou: Option<f64>,
    /// Record ids that overlap evaluation sets.
    #[serde(default)]
    pub blocklist: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusValidateResponse {
    pub report: QcReport,
    /// Human-readable summary.
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusExportResponse {
    /// One training sample per line.
    pub sft: String,
    pub exported: usize,
    /// Present when annotations were supplied and the corpus was filtered.
    pub report: Option<QcReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneResponse {
    pub scene: SyntheticSpec,
}

pub fn encode_b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_b64(s: &str) -> Result<Vec<u8>, String> {
    base64::engine::general_purpose::STANDARD
        .decode(s.trim())
        .map_err(|e| format!("bad base64: {e}"))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    Ok(buf.into_inner())
}

/// Global view of `scene` with the record's plan regions, zoom crops and
/// verified evidence drawn on it.
pub fn episode_overlay(scene: &Scene, record: &EpisodeRecord) -> RgbImage {
    let (w, h) = view_size(scene.width, scene.height, record.config.max_pixels);
    let base = scene.render(&scene.image_frame(), w, h);
    let marks = overlay::Overlay {
        plan: record
            .plan
            .state
            .items
            .iter()
            .filter_map(|i| i.global_roi())
            .map(|r| r.round())
            .collect(),
        crops: record.crop_regions(),
        evidence: record.evidence.verified_boxes(),
    };
    overlay::render(&base, &marks)
}

/// Splits an episode failure into client mistakes and upstream failures.
pub fn is_upstream(e: &AgentError) -> bool {
    matches!(e, AgentError::Backend(BackendError::Transport { .. }))
}
