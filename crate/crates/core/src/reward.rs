//! Composite episode reward and group-relative advantages.

use crate::geometry::{iou, NormBox, REL_EXTENT};
use crate::plan::{Difficulty, QPlan};
use crate::task::{AnswerKind, TaskKind};
use crate::trajectory::{Answer, AnswerPayload};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Group size used when none is given.
pub const DEFAULT_GROUP_SIZE: usize = 8;
const ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("task kind `{0}` has no verifiable reward")]
    NotVerifiable(TaskKind),
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("weight `{0}` must be a finite non-negative number")]
    InvalidWeight(String),
    #[error("unknown weight `{0}`")]
    UnknownWeight(String),
    #[error("ground truth does not fit task kind `{0}`")]
    GroundTruthMismatch(TaskKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_fmt: f64,
    pub w_acc: f64,
    pub w_iou: f64,
    pub w_plan: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_fmt: f64,
    pub gamma_plan: f64,
    pub lambda_c: f64,
    pub lambda_g: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_fmt: 0.1,
            w_acc: 1.0,
            w_iou: 0.8,
            w_plan: 0.9,
            alpha: 1.0,
            beta: 0.2,
            gamma_fmt: 0.8,
            gamma_plan: 0.8,
            lambda_c: 0.15,
            lambda_g: 120.0,
        }
    }
}

impl RewardWeights {
    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "w_fmt" | "w1" => &mut self.w_fmt,
            "w_acc" | "w2" => &mut self.w_acc,
            "w_iou" | "w3" => &mut self.w_iou,
            "w_plan" | "w4" => &mut self.w_plan,
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            "gamma_fmt" => &mut self.gamma_fmt,
            "gamma_plan" => &mut self.gamma_plan,
            "lambda_c" => &mut self.lambda_c,
            "lambda_g" => &mut self.lambda_g,
            _ => return None,
        })
    }

    fn all(&self) -> [(&'static str, f64); 10] {
        [
            ("w_fmt", self.w_fmt),
            ("w_acc", self.w_acc),
            ("w_iou", self.w_iou),
            ("w_plan", self.w_plan),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_fmt", self.gamma_fmt),
            ("gamma_plan", self.gamma_plan),
            ("lambda_c", self.lambda_c),
            ("lambda_g", self.lambda_g),
        ]
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        match self.all().into_iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            Some((name, _)) => Err(RewardError::InvalidWeight(name.into())),
            None => Ok(()),
        }
    }

    /// Applies `name=value` pairs separated by commas, e.g. `"beta=0.3,w_iou=0"`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, RewardError> {
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| RewardError::InvalidWeight(pair.into()))?;
            let name = name.trim();
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| RewardError::InvalidWeight(name.into()))?;
            *self
                .slot(name)
                .ok_or_else(|| RewardError::UnknownWeight(name.into()))? = v;
        }
        self.validate()?;
        Ok(self)
    }
}

/// Smoothed relative count error.
pub fn acc_count(pred: u64, gt: u64) -> f64 {
    let err = (pred as f64 - gt as f64).abs() / (gt.max(1) as f64);
    1.0 - err.tanh()
}

/// Smoothed normalized center distance.
pub fn acc_ground(pred: &NormBox, gt: &NormBox) -> f64 {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    let d = ((px - gx).powi(2) + (py - gy).powi(2)).sqrt();
    1.0 - (d / REL_EXTENT as f64).tanh()
}

pub fn iou_ground(pred: &NormBox, gt: &NormBox) -> f64 {
    iou(pred, gt)
}

/// Inclusion score: greedy one-to-one IoU matching, then ground-truth
/// coverage scaled down by how much the prediction inflates the target.
/// Averaged over predictions, so spurious boxes pull the score down.
pub fn iou_count(preds: &[NormBox], gts: &[NormBox]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(p, g);
            if v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut sum = 0.0;
    for (_, i, j) in pairs {
        if pred_used[i] || gt_used[j] {
            continue;
        }
        pred_used[i] = true;
        gt_used[j] = true;
        sum += inclusion(&preds[i], &gts[j]);
    }
    sum / preds.len() as f64
}

fn inclusion(pred: &NormBox, gt: &NormBox) -> f64 {
    let ag = gt.area() as f64;
    let ap = pred.area() as f64;
    if ag <= 0.0 || ap <= 0.0 {
        return 0.0;
    }
    let cover = pred.intersection_area(gt) as f64 / ag;
    cover * (ag / ap).min(1.0)
}

pub fn plan_reward(q: QPlan, d: Difficulty, w: &RewardWeights) -> f64 {
    match q {
        QPlan::Valid => w.alpha * d.value(),
        QPlan::Bypass => -w.beta * d.value(),
        QPlan::Violation => -w.gamma_plan,
    }
}

/// Gold annotation for one verifiable episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Count { count: u64, boxes: Vec<NormBox> },
    Box { bbox: NormBox },
}

impl GroundTruth {
    pub fn difficulty(&self, w: &RewardWeights) -> Difficulty {
        match self {
            GroundTruth::Count { count, .. } => Difficulty::counting(*count, w.lambda_c),
            GroundTruth::Box { bbox } => Difficulty::grounding(bbox, w.lambda_g),
        }
    }

    pub fn boxes(&self) -> Vec<NormBox> {
        match self {
            GroundTruth::Count { boxes, .. } => boxes.clone(),
            GroundTruth::Box { bbox } => vec![*bbox],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_fmt: u8,
    pub r_acc: Option<f64>,
    pub r_iou: Option<f64>,
    pub q_plan: Option<QPlan>,
    pub difficulty: Option<f64>,
    pub r_plan: Option<f64>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn malformed(w: &RewardWeights) -> Self {
        Self {
            r_fmt: 0,
            r_acc: None,
            r_iou: None,
            q_plan: None,
            difficulty: None,
            r_plan: None,
            total: -w.gamma_fmt,
        }
    }

    /// Weighted sum over already computed components.
    pub fn from_components(r_acc: f64, r_iou: f64, q: QPlan, d: Difficulty, w: &RewardWeights) -> Self {
        let r_plan = plan_reward(q, d, w);
        Self {
            r_fmt: 1,
            r_acc: Some(r_acc),
            r_iou: Some(r_iou),
            q_plan: Some(q),
            difficulty: Some(d.value()),
            r_plan: Some(r_plan),
            total: w.w_fmt + w.w_acc * r_acc + w.w_iou * r_iou + w.w_plan * r_plan,
        }
    }
}

/// Everything needed to score one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardInputs<'a> {
    pub task: TaskKind,
    pub r_fmt: u8,
    pub answer: Option<&'a Answer>,
    /// Candidate boxes backing a count answer.
    pub pred_boxes: &'a [NormBox],
    pub q_plan: QPlan,
    pub gt: &'a GroundTruth,
}

pub fn total_reward(inp: &RewardInputs<'_>, w: &RewardWeights) -> Result<RewardBreakdown, RewardError> {
    if !inp.task.is_verifiable() {
        return Err(RewardError::NotVerifiable(inp.task));
    }
    match (inp.task.answer_kind(), inp.gt) {
        (AnswerKind::Count, GroundTruth::Count { .. }) | (AnswerKind::Grounding, GroundTruth::Box { .. }) => {}
        _ => return Err(RewardError::GroundTruthMismatch(inp.task)),
    }
    let Some(answer) = inp.answer.filter(|_| inp.r_fmt == 1) else {
        return Ok(RewardBreakdown::malformed(w));
    };
    let (r_acc, r_iou) = match (&answer.payload, inp.gt) {
        (AnswerPayload::Count(n), GroundTruth::Count { count, boxes }) => {
            (acc_count(*n, *count), iou_count(inp.pred_boxes, boxes))
        }
        (AnswerPayload::Box(b), GroundTruth::Box { bbox }) => (acc_ground(b, bbox), iou_ground(b, bbox)),
        _ => return Ok(RewardBreakdown::malformed(w)),
    };
    Ok(RewardBreakdown::from_components(
        r_acc,
        r_iou,
        inp.q_plan,
        inp.gt.difficulty(w),
        w,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Standardizes rewards within a group (population std).
pub fn group_advantages(rewards: &[f64]) -> Result<GroupScores, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    // Second centering pass: the rounding residue of the first mean would
    // otherwise be blown up by the division when the spread is tiny.
    let dev: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let residue = dev.iter().sum::<f64>() / n;
    let dev: Vec<f64> = dev.iter().map(|d| d - residue).collect();
    let var = dev.iter().map(|d| d * d).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = dev.iter().map(|d| d / (std + ADV_EPS)).collect();
    Ok(GroupScores {
        rewards: rewards.to_vec(),
        advantages,
    })
}
