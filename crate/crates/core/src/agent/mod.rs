//! Episode runtime: drives a decision backend through the observe, plan and
//! track loop, executes zooms, records the transcript, and scores it.

mod heuristic;
pub mod prompts;
mod remote;
mod replay;

pub use heuristic::{detect, Detection, HeuristicBackend, HeuristicConfig, QUADRANTS};
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::ReplayBackend;

use crate::evidence::{
    aggregate, consistency, dedup, ingest, ConsistencyReport, EvidenceStore, EvidenceSummary, ObjFrame,
    DEFAULT_DEDUP_IOU,
};
use crate::geometry::{FrameChain, NormBox};
use crate::imagetool::{Budget, Scene, ToolError, ViewInfo, ZoomTool, DEFAULT_MAX_PIXELS, PALETTE};
use crate::plan::{PlanReport, PlanTracker, DEFAULT_MAX_ITEMS};
use crate::reward::{group_advantages, total_reward, GroundTruth, GroupScores, RewardBreakdown, RewardInputs, RewardWeights};
use crate::task::TaskKind;
use crate::trajectory::{
    parse_partial, serialize_step, validate_format, FormatIssue, FormatVerdict, Observation, ParseOptions, Step,
    StepKind, Trajectory, GLOBAL_VIEW_ID,
};
use async_trait::async_trait;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_MAX_TURNS: usize = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("backend returned an unusable reply: {0}")]
    BadReply(String),
    #[error("replay script has no turn {0}")]
    ScriptExhausted(usize),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("record and ground truth disagree: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    /// View shown with this message, if any.
    pub view_id: Option<String>,
    #[serde(skip)]
    pub image: Option<Arc<RgbImage>>,
}

/// The message history a backend sees.
#[derive(Debug, Clone)]
pub struct Conversation {
    pub task: TaskKind,
    pub question: String,
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn assistant_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }

    /// Images in the order they were shown, with their view ids.
    pub fn views(&self) -> impl Iterator<Item = (&str, &Arc<RgbImage>)> {
        self.messages
            .iter()
            .filter_map(|m| Some((m.view_id.as_deref()?, m.image.as_ref()?)))
    }

    pub fn last_view(&self) -> Option<(&str, &Arc<RgbImage>)> {
        self.views().last()
    }
}

/// Produces the next model-authored turn.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn next_turn(&self, conv: &Conversation) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub task: TaskKind,
    pub max_tool_calls: usize,
    pub max_depth: usize,
    pub max_pixels: u64,
    pub max_turns: usize,
    pub max_plan_items: usize,
    pub weights: RewardWeights,
    pub obj_frame: ObjFrame,
    /// `None` disables evidence de-duplication.
    pub dedup_iou: Option<f64>,
    /// Label counted or located; `None` means every label.
    pub label: Option<String>,
    /// Appends a one-line evidence summary to each observation.
    pub inject_evidence: bool,
    pub max_turn_bytes: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        let b = Budget::default();
        Self {
            task: TaskKind::RegionCounting,
            max_tool_calls: b.max_tool_calls,
            max_depth: b.max_depth,
            max_pixels: DEFAULT_MAX_PIXELS,
            max_turns: DEFAULT_MAX_TURNS,
            max_plan_items: DEFAULT_MAX_ITEMS,
            weights: RewardWeights::default(),
            obj_frame: ObjFrame::View,
            dedup_iou: Some(DEFAULT_DEDUP_IOU),
            label: None,
            inject_evidence: false,
            max_turn_bytes: ParseOptions::default().max_bytes,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_turns == 0 {
            return Err(AgentError::Config("max_turns must be at least 1".into()));
        }
        if self.max_pixels == 0 {
            return Err(AgentError::Config("max_pixels must be positive".into()));
        }
        self.weights
            .validate()
            .map_err(|e| AgentError::Config(e.to_string()))
    }
}

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    DualAction,
    ParseFailure,
    NoAction,
    BudgetExhausted,
    DepthExceeded,
    UnknownView,
    InvalidBbox,
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTiming {
    pub turn: usize,
    pub backend_ms: f64,
    pub tool_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub question: String,
    pub config: EpisodeConfig,
    pub width: u32,
    pub height: u32,
    pub transcript: String,
    pub trajectory: Trajectory,
    pub outcome: Outcome,
    pub detail: Option<String>,
    pub views: Vec<ViewInfo>,
    pub budget: Budget,
    pub format: FormatVerdict,
    pub plan: PlanReport,
    pub evidence: EvidenceStore,
    pub summary: EvidenceSummary,
    pub consistency: Option<ConsistencyReport>,
    pub breakdown: Option<RewardBreakdown>,
    pub timings: Vec<TurnTiming>,
}

impl EpisodeRecord {
    pub fn chains(&self) -> HashMap<String, FrameChain> {
        self.views
            .iter()
            .map(|v| (v.view_id.clone(), v.chain.clone()))
            .collect()
    }

    /// Global-frame regions of every zoom, in call order.
    pub fn crop_regions(&self) -> Vec<NormBox> {
        self.views.iter().skip(1).map(|v| v.global_region).collect()
    }
}

/// Finds a known label mentioned in a question, accepting plurals and
/// spaces in place of hyphens.
pub fn query_label(question: &str) -> Option<String> {
    let q = question.to_lowercase().replace('-', " ");
    let words: Vec<&str> = q
        .split(|c: char| !c.is_alphanumeric() && c != ' ')
        .flat_map(str::split_whitespace)
        .collect();
    let text = format!(" {} ", words.join(" "));
    PALETTE
        .iter()
        .map(|(l, _)| *l)
        .filter(|l| *l != "object")
        .find(|l| {
            let l = l.replace('-', " ");
            text.contains(&format!(" {l} ")) || text.contains(&format!(" {l}s "))
        })
        .map(str::to_string)
}

/// Gold answer derived from a synthetic scene's own ground truth.
pub fn scene_ground_truth(scene: &Scene, task: TaskKind, label: Option<&str>) -> Option<GroundTruth> {
    let boxes: Vec<NormBox> = scene
        .ground_truth_norm()
        .into_iter()
        .filter(|(l, _)| label.is_none_or(|q| q == l))
        .map(|(_, b)| b)
        .collect();
    match task.answer_kind() {
        crate::task::AnswerKind::Count => Some(GroundTruth::Count {
            count: boxes.len() as u64,
            boxes,
        }),
        crate::task::AnswerKind::Grounding => boxes.first().map(|b| GroundTruth::Box { bbox: *b }),
        _ => None,
    }
}

struct Derived {
    plan: PlanReport,
    evidence: EvidenceStore,
    summary: EvidenceSummary,
    consistency: Option<ConsistencyReport>,
    ingest_error: Option<String>,
}

fn derive(t: &Trajectory, chains: &HashMap<String, FrameChain>, cfg: &EpisodeConfig) -> Derived {
    let mut tracker = PlanTracker::new(cfg.max_plan_items);
    for s in &t.steps {
        tracker.observe(s);
    }
    let plan = tracker.finish(cfg.task);
    let (evidence, ingest_error) = match ingest(t, chains, cfg.obj_frame) {
        Ok(s) => (s, None),
        Err(e) => (EvidenceStore::default(), Some(e.to_string())),
    };
    let evidence = match cfg.dedup_iou {
        Some(tau) => dedup(&evidence, tau),
        None => evidence,
    };
    let (_, summary) = aggregate(&evidence, &plan.state);
    let consistency = t
        .answer()
        .filter(|_| cfg.task.is_verifiable())
        .map(|a| consistency(a, &summary, cfg.label.as_deref()));
    Derived {
        plan,
        evidence,
        summary,
        consistency,
        ingest_error,
    }
}

fn breakdown_for(
    t: &Trajectory,
    format: &FormatVerdict,
    plan: &PlanReport,
    evidence: &EvidenceStore,
    cfg: &EpisodeConfig,
    gt: &GroundTruth,
) -> Result<RewardBreakdown, AgentError> {
    let boxes = evidence.verified_boxes();
    let inputs = RewardInputs {
        task: cfg.task,
        r_fmt: format.r_fmt,
        answer: t.answer(),
        pred_boxes: &boxes,
        q_plan: plan.q,
        gt,
    };
    total_reward(&inputs, &cfg.weights).map_err(|e| AgentError::Mismatch(e.to_string()))
}

/// Recomputes the reward breakdown from a record alone.
pub fn score_episode(record: &EpisodeRecord, gt: &GroundTruth) -> Result<RewardBreakdown, AgentError> {
    let d = derive(&record.trajectory, &record.chains(), &record.config);
    breakdown_for(&record.trajectory, &record.format, &d.plan, &d.evidence, &record.config, gt)
}

fn observation_message(obs: &Observation, image: Arc<RgbImage>, extra: Option<String>) -> Message {
    let mut text = obs.body();
    if let Some(e) = extra {
        text.push('\n');
        text.push_str(&e);
    }
    Message {
        role: Role::User,
        text,
        view_id: Some(obs.view_id.clone()),
        image: Some(image),
    }
}

fn evidence_line(steps: &[Step], tool: &ZoomTool, cfg: &EpisodeConfig) -> String {
    let t = Trajectory { steps: steps.to_vec() };
    let d = derive(&t, &tool.chains(), cfg);
    let counts: Vec<String> = d.summary.counts.iter().map(|(l, n)| format!("{l}={n}")).collect();
    format!("Evidence so far: {}", if counts.is_empty() { "none".into() } else { counts.join(", ") })
}

/// Runs one episode to completion. Terminal conditions are recorded in the
/// returned record; only setup and transport failures are errors.
pub async fn run_episode(
    scene: Arc<Scene>,
    question: &str,
    backend: &dyn Backend,
    cfg: &EpisodeConfig,
    gt: Option<&GroundTruth>,
) -> Result<EpisodeRecord, AgentError> {
    cfg.validate()?;
    let mut tool = ZoomTool::open(
        scene.clone(),
        Budget::new(cfg.max_tool_calls, cfg.max_depth),
        cfg.max_pixels,
    )?;
    let global = Observation {
        view_id: GLOBAL_VIEW_ID.into(),
        region: None,
    };
    let mut conv = Conversation {
        task: cfg.task,
        question: question.to_string(),
        messages: vec![
            Message {
                role: Role::System,
                text: prompts::system_prompt(cfg.task),
                view_id: None,
                image: None,
            },
            Message {
                role: Role::User,
                text: format!("{question}\n{}", global.body()),
                view_id: Some(GLOBAL_VIEW_ID.into()),
                image: Some(tool.global().pixels.clone()),
            },
        ],
    };
    let opts = ParseOptions {
        max_bytes: cfg.max_turn_bytes,
    };
    let mut transcript = String::new();
    let mut steps: Vec<Step> = Vec::new();
    let mut timings = Vec::new();
    let mut outcome = Outcome::MaxTurns;
    let mut detail = None;
    let mut parse_errors = Vec::new();
    for turn in 0..cfg.max_turns {
        let started = Instant::now();
        let text = match backend.next_turn(&conv).await {
            Ok(t) => t,
            Err(e @ BackendError::ScriptExhausted(_)) => {
                outcome = Outcome::NoAction;
                detail = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let backend_ms = started.elapsed().as_secs_f64() * 1e3;
        conv.messages.push(Message {
            role: Role::Assistant,
            text: text.clone(),
            view_id: None,
            image: None,
        });
        transcript.push_str(&text);
        let (parsed, errors) = parse_partial(&text, cfg.task, opts);
        let mut timing = TurnTiming {
            turn,
            backend_ms,
            tool_ms: 0.0,
        };
        steps.extend(parsed.steps.iter().map(|s| Step {
            turn,
            kind: s.kind.clone(),
        }));
        if !errors.is_empty() {
            detail = Some(errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "));
            parse_errors = errors;
            outcome = Outcome::ParseFailure;
            timings.push(timing);
            break;
        }
        let kinds: Vec<&StepKind> = parsed.steps.iter().map(|s| &s.kind).collect();
        let calls: Vec<_> = kinds
            .iter()
            .filter_map(|k| match k {
                StepKind::ToolCall(tc) => Some(tc),
                _ => None,
            })
            .collect();
        let answered = kinds.iter().any(|k| matches!(k, StepKind::Answer(_)));
        let forged = kinds.iter().any(|k| matches!(k, StepKind::Observation(_)));
        if forged {
            detail = Some("model wrote its own observation".into());
            outcome = Outcome::ParseFailure;
            timings.push(timing);
            break;
        }
        if (answered && !calls.is_empty()) || calls.len() > 1 {
            outcome = Outcome::DualAction;
            timings.push(timing);
            break;
        }
        if answered {
            outcome = Outcome::Answered;
            timings.push(timing);
            break;
        }
        let Some(tc) = calls.first() else {
            outcome = Outcome::NoAction;
            timings.push(timing);
            break;
        };
        let tool_started = Instant::now();
        let zoomed = match tc.raw_bbox() {
            None => Err(ToolError::InvalidBbox([-1; 4])),
            Some(b) => tool.zoom_in(&tc.source_image_id, b).map(|v| (v.view_id.clone(), v.chain.global_region(), v.pixels.clone())),
        };
        timing.tool_ms = tool_started.elapsed().as_secs_f64() * 1e3;
        timings.push(timing);
        match zoomed {
            Ok((view_id, region, pixels)) => {
                let obs = Observation {
                    view_id,
                    region: Some(region),
                };
                let kind = StepKind::Observation(obs.clone());
                transcript.push('\n');
                transcript.push_str(&serialize_step(&kind));
                transcript.push('\n');
                steps.push(Step { turn: turn + 1, kind });
                let extra = cfg.inject_evidence.then(|| evidence_line(&steps, &tool, cfg));
                conv.messages.push(observation_message(&obs, pixels, extra));
            }
            Err(e) => {
                outcome = match e {
                    ToolError::BudgetExhausted { .. } => Outcome::BudgetExhausted,
                    ToolError::DepthExceeded { .. } => Outcome::DepthExceeded,
                    ToolError::UnknownView(_) => Outcome::UnknownView,
                    _ => Outcome::InvalidBbox,
                };
                detail = Some(e.to_string());
                break;
            }
        }
    }
    let trajectory = Trajectory { steps };
    let format = if parse_errors.is_empty() {
        validate_format(&trajectory, cfg.task)
    } else {
        FormatVerdict {
            r_fmt: 0,
            issues: vec![FormatIssue::Unparseable { errors: parse_errors }],
        }
    };
    let chains = tool.chains();
    let d = derive(&trajectory, &chains, cfg);
    if detail.is_none() {
        detail = d.ingest_error.clone();
    }
    let breakdown = match gt.filter(|_| cfg.task.is_verifiable()) {
        Some(gt) => Some(breakdown_for(&trajectory, &format, &d.plan, &d.evidence, cfg, gt)?),
        None => None,
    };
    Ok(EpisodeRecord {
        question: question.to_string(),
        config: cfg.clone(),
        width: scene.width,
        height: scene.height,
        transcript,
        trajectory,
        outcome,
        detail,
        views: tool.snapshot(),
        budget: tool.budget(),
        format,
        plan: d.plan,
        evidence: d.evidence,
        summary: d.summary,
        consistency: d.consistency,
        breakdown,
        timings,
    })
}

#[derive(Debug)]
pub struct GroupRun {
    pub records: Vec<Result<EpisodeRecord, AgentError>>,
    pub scores: GroupScores,
}

/// Runs `g` independent episodes concurrently and normalizes their rewards.
/// A failed episode scores the malformed-output penalty.
pub async fn run_group<F>(
    scene: Arc<Scene>,
    question: &str,
    backend_for: F,
    g: usize,
    cfg: &EpisodeConfig,
    gt: &GroundTruth,
) -> Result<GroupRun, AgentError>
where
    F: Fn(usize) -> Arc<dyn Backend>,
{
    if g < 2 {
        return Err(AgentError::Config(format!("group size must be at least 2, got {g}")));
    }
    let backends: Vec<Arc<dyn Backend>> = (0..g).map(&backend_for).collect();
    let runs = backends
        .iter()
        .map(|b| run_episode(scene.clone(), question, b.as_ref(), cfg, Some(gt)));
    let records = futures::future::join_all(runs).await;
    let rewards: Vec<f64> = records
        .iter()
        .map(|r| match r {
            Ok(rec) => rec.breakdown.as_ref().map_or(-cfg.weights.gamma_fmt, |b| b.total),
            Err(_) => -cfg.weights.gamma_fmt,
        })
        .collect();
    let scores = group_advantages(&rewards).map_err(|e| AgentError::Config(e.to_string()))?;
    Ok(GroupRun { records, scores })
}
