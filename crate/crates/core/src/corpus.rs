//! Dataset tooling: oracle checklists, quality gates and SFT export.

use crate::agent::{prompts, EpisodeRecord};
use crate::evidence::chains_from_transcript;
use crate::geometry::{box_to_relative, iou, FrameBox, FrameChain, NormBox, PixelBox};
use crate::imagetool::{LabeledRect, GLOBAL_VIEW_ID};
use crate::task::{AnswerKind, TaskKind};
use crate::trajectory::{
    box_literals, parse, serialize_step, validate_format, AnswerPayload, FormatIssue, SectionKind, StepKind,
    Trajectory,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use thiserror::Error;

pub const DEFAULT_Q_MAX: usize = 15;
pub const DEFAULT_LEAK_IOU: f64 = 0.9;
pub const CONSISTENCY_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Oracle targets and gold answer for one corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnnotation {
    pub id: String,
    pub task: TaskKind,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub boxes: Vec<LabeledRect>,
    pub gold: Option<AnswerPayload>,
}

impl OracleAnnotation {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(b) = self
            .boxes
            .iter()
            .find(|b| b.width == 0 || b.height == 0 || b.x_max() > self.width || b.y_max() > self.height)
        {
            return Err(format!("box {b:?} is outside the {}x{} canvas", self.width, self.height));
        }
        let ok = matches!(
            (&self.gold, self.task.answer_kind()),
            (None, _)
                | (Some(AnswerPayload::Count(_)), AnswerKind::Count)
                | (Some(AnswerPayload::Box(_)), AnswerKind::Grounding)
                | (Some(AnswerPayload::Choice(_)), AnswerKind::Choice)
                | (Some(AnswerPayload::Text(_)), AnswerKind::Text | AnswerKind::Route)
        );
        if ok {
            Ok(())
        } else {
            Err(format!("gold answer does not fit task {}", self.task))
        }
    }

    /// Oracle boxes in the global relative frame.
    pub fn norm_boxes(&self) -> Vec<NormBox> {
        let Ok(frame) = FrameBox::image(self.width, self.height) else {
            return Vec::new();
        };
        self.boxes
            .iter()
            .filter_map(|b| box_to_relative(b.pixel_box(), &frame).ok())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistNode {
    pub id: String,
    pub name: String,
    pub region: NormBox,
    /// Indices into the annotation's boxes; empty for inner nodes.
    pub targets: Vec<usize>,
    pub children: Vec<ChecklistNode>,
}

impl ChecklistNode {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a ChecklistNode>) {
        if self.children.is_empty() {
            out.push(self);
        }
        for c in &self.children {
            c.leaves(out);
        }
    }

    fn target_count(&self) -> usize {
        self.targets.len() + self.children.iter().map(Self::target_count).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checklist {
    pub roots: Vec<ChecklistNode>,
}

impl Checklist {
    pub fn leaves(&self) -> Vec<&ChecklistNode> {
        let mut out = Vec::new();
        for r in &self.roots {
            r.leaves(&mut out);
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn d(n: &ChecklistNode) -> usize {
            1 + n.children.iter().map(d).max().unwrap_or(0)
        }
        self.roots.iter().map(d).max().unwrap_or(0)
    }

    /// Renders the checklist as `[PLAN]` items.
    pub fn plan_text(&self) -> String {
        fn write(n: &ChecklistNode, indent: usize, out: &mut String) {
            out.push_str(&format!(
                "{}- [ ] {}: {} {} ({} targets)\n",
                "  ".repeat(indent),
                n.id,
                n.name,
                n.region,
                n.target_count()
            ));
            for c in &n.children {
                write(c, indent + 1, out);
            }
        }
        let mut out = String::from("[PLAN]\n");
        for r in &self.roots {
            write(r, 0, &mut out);
        }
        out
    }
}

const QUADRANT_NAMES: [&str; 4] = ["top-left", "top-right", "bottom-left", "bottom-right"];

fn quadrants(r: &NormBox) -> [NormBox; 4] {
    let (mx, my) = ((r.x1() + r.x2()) / 2, (r.y1() + r.y2()) / 2);
    let q = |a: i32, b: i32, c: i32, d: i32| NormBox::new(a as i64, b as i64, c as i64, d as i64).expect("sub-box of a valid box");
    [
        q(r.x1(), r.y1(), mx, my),
        q(mx, r.y1(), r.x2(), my),
        q(r.x1(), my, mx, r.y2()),
        q(mx, my, r.x2(), r.y2()),
    ]
}

/// Quadrant index of a point; points on a midline go right/down.
fn quadrant_of(r: &NormBox, cx: f64, cy: f64) -> usize {
    let (mx, my) = ((r.x1() + r.x2()) / 2, (r.y1() + r.y2()) / 2);
    usize::from(cx >= mx as f64) + 2 * usize::from(cy >= my as f64)
}

/// Groups oracle boxes by the 2x2 quadrant holding their center; a quadrant
/// with more than `q_max` targets is split once more.
pub fn compile_checklist(ann: &OracleAnnotation, q_max: usize) -> Checklist {
    let boxes = ann.norm_boxes();
    if boxes.is_empty() {
        return Checklist {
            roots: vec![ChecklistNode {
                id: "R".into(),
                name: "whole image".into(),
                region: NormBox::FULL,
                targets: Vec::new(),
                children: Vec::new(),
            }],
        };
    }
    // Centers in continuous pixels avoid rounding a box across a midline.
    let centers: Vec<(f64, f64)> = ann
        .boxes
        .iter()
        .map(|b| {
            (
                (b.x as f64 + b.width as f64 / 2.0) * 1000.0 / ann.width as f64,
                (b.y as f64 + b.height as f64 / 2.0) * 1000.0 / ann.height as f64,
            )
        })
        .collect();
    let group = |region: &NormBox, members: &[usize]| -> [Vec<usize>; 4] {
        let mut g: [Vec<usize>; 4] = Default::default();
        for &i in members {
            let (cx, cy) = centers[i];
            g[quadrant_of(region, cx, cy)].push(i);
        }
        g
    };
    let all: Vec<usize> = (0..boxes.len()).collect();
    let top = group(&NormBox::FULL, &all);
    let mut roots = Vec::new();
    for (q, (members, region)) in top.iter().zip(quadrants(&NormBox::FULL)).enumerate() {
        if members.is_empty() {
            continue;
        }
        let id = format!("R{}", q + 1);
        let mut node = ChecklistNode {
            id: id.clone(),
            name: QUADRANT_NAMES[q].into(),
            region,
            targets: members.clone(),
            children: Vec::new(),
        };
        if members.len() > q_max {
            let sub = group(&region, members);
            for (k, (m, r)) in sub.iter().zip(quadrants(&region)).enumerate() {
                if m.is_empty() {
                    continue;
                }
                node.children.push(ChecklistNode {
                    id: format!("{id}.{}", k + 1),
                    name: format!("{} of {}", QUADRANT_NAMES[k], QUADRANT_NAMES[q]),
                    region: r,
                    targets: m.clone(),
                    children: Vec::new(),
                });
            }
            node.targets.clear();
        }
        roots.push(node);
    }
    Checklist { roots }
}

/// A coordinate quoted before the model could have seen the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakFlag {
    pub turn: usize,
    pub oracle: usize,
    pub literal: NormBox,
    pub iou: f64,
}

fn pixel_contains(outer: &FrameBox, b: &PixelBox) -> bool {
    b.x1 >= outer.x_min as f64 && b.y1 >= outer.y_min as f64 && b.x2 <= outer.x_max() as f64 && b.y2 <= outer.y_max() as f64
}

/// Flags box literals in think text that match an oracle box before any
/// observation covering it. Literals are read both as global and as relative
/// to the current view. The downsampled global view only counts as covering
/// for tasks that answer from it.
pub fn detect_leakage(
    t: &Trajectory,
    task: TaskKind,
    ann: &OracleAnnotation,
    frames: &HashMap<String, FrameChain>,
    threshold: f64,
) -> Vec<LeakFlag> {
    let Ok(image) = FrameBox::image(ann.width, ann.height) else {
        return Vec::new();
    };
    // Oracle index, global box, pixel box.
    let targets: Vec<(usize, NormBox, PixelBox)> = ann
        .boxes
        .iter()
        .enumerate()
        .filter_map(|(k, b)| Some((k, box_to_relative(b.pixel_box(), &image).ok()?, b.pixel_box())))
        .collect();
    let pixels: Vec<PixelBox> = targets.iter().map(|t| t.2).collect();
    let mut covered = vec![false; targets.len()];
    let cover = |view: &str, covered: &mut [bool]| {
        let Some(chain) = frames.get(view) else { return };
        if view == GLOBAL_VIEW_ID && task != TaskKind::GlobalCounting {
            return;
        }
        let region = chain.image_region();
        for (c, p) in covered.iter_mut().zip(&pixels) {
            *c |= pixel_contains(&region, p);
        }
    };
    cover(GLOBAL_VIEW_ID, &mut covered);
    let mut current = GLOBAL_VIEW_ID.to_string();
    let mut flags = Vec::new();
    for step in &t.steps {
        match &step.kind {
            StepKind::Observation(o) => {
                current = o.view_id.clone();
                cover(&current, &mut covered);
            }
            StepKind::Think(tb) => {
                for lit in box_literals(&tb.raw) {
                    let Ok(n) = NormBox::try_from(lit) else { continue };
                    let mut readings = vec![n];
                    if current != GLOBAL_VIEW_ID {
                        if let Some(g) = frames
                            .get(&current)
                            .and_then(|c| crate::geometry::compose_to_global(&n, c).ok())
                        {
                            readings.push(g);
                        }
                    }
                    for (i, (k, o, _)) in targets.iter().enumerate() {
                        if covered[i] {
                            continue;
                        }
                        let best = readings.iter().map(|r| iou(r, o)).fold(0.0, f64::max);
                        if best >= threshold {
                            flags.push(LeakFlag {
                                turn: step.turn,
                                oracle: *k,
                                literal: n,
                                iou: best,
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StructureIssue {
    ObservationWithoutCall { step: usize },
    CallWithoutObservation { step: usize },
    PlanMissing,
    PlanForbidden,
    DuplicatePlan { turn: usize },
    DepthExceeded { depth: usize, max: usize },
}

/// Interaction-graph and SOP checks on a parsed trajectory.
pub fn validate_structure(t: &Trajectory, task: TaskKind) -> Vec<StructureIssue> {
    let mut issues = Vec::new();
    let steps = &t.steps;
    for (i, s) in steps.iter().enumerate() {
        match &s.kind {
            StepKind::Observation(_) if i == 0 || !matches!(steps[i - 1].kind, StepKind::ToolCall(_)) => {
                issues.push(StructureIssue::ObservationWithoutCall { step: i })
            }
            StepKind::ToolCall(_) if !matches!(steps.get(i + 1).map(|s| &s.kind), Some(StepKind::Observation(_))) => {
                issues.push(StructureIssue::CallWithoutObservation { step: i })
            }
            _ => {}
        }
    }
    let mut plans = Vec::new();
    let mut first_call = None;
    for (i, s) in steps.iter().enumerate() {
        match &s.kind {
            StepKind::Think(tb) => {
                plans.extend(
                    tb.sections
                        .iter()
                        .filter(|sec| sec.kind == SectionKind::Plan)
                        .map(|_| (i, s.turn)),
                );
            }
            StepKind::ToolCall(_) if first_call.is_none() => first_call = Some(i),
            _ => {}
        }
    }
    if task.plan_forbidden() && !plans.is_empty() {
        issues.push(StructureIssue::PlanForbidden);
    }
    if task.plan_required() {
        if let Some(c) = first_call {
            if !plans.iter().any(|(i, _)| *i < c) {
                issues.push(StructureIssue::PlanMissing);
            }
        }
    }
    issues.extend(plans.iter().skip(1).map(|(_, turn)| StructureIssue::DuplicatePlan { turn: *turn }));
    let max = task.max_zoom_layers();
    let mut depth: HashMap<&str, usize> = HashMap::from([(GLOBAL_VIEW_ID, 0)]);
    let mut pending = None;
    let mut deepest = 0;
    for s in steps {
        match &s.kind {
            StepKind::ToolCall(tc) => {
                pending = Some(depth.get(tc.source_image_id.as_str()).copied().unwrap_or(0) + 1);
            }
            StepKind::Observation(o) => {
                let d = pending.take().unwrap_or(1);
                deepest = deepest.max(d);
                depth.insert(o.view_id.as_str(), d);
            }
            _ => {}
        }
    }
    if deepest > max {
        issues.push(StructureIssue::DepthExceeded { depth: deepest, max });
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub detail: String,
}

/// Compares the final answer with the gold answer.
pub fn self_consistency(t: &Trajectory, ann: &OracleAnnotation) -> ConsistencyVerdict {
    let verdict = |consistent: bool, detail: String| ConsistencyVerdict { consistent, detail };
    let Some(gold) = &ann.gold else {
        return verdict(false, "no gold answer".into());
    };
    let Some(answer) = t.answer() else {
        return verdict(false, "no final answer".into());
    };
    match (&answer.payload, gold) {
        (AnswerPayload::Count(a), AnswerPayload::Count(g)) => verdict(a == g, format!("answer {a}, gold {g}")),
        (AnswerPayload::Choice(a), AnswerPayload::Choice(g)) => {
            verdict(a.eq_ignore_ascii_case(g), format!("answer {a}, gold {g}"))
        }
        (AnswerPayload::Box(a), AnswerPayload::Box(g)) => {
            let v = iou(a, g);
            verdict(v >= CONSISTENCY_IOU, format!("iou {v:.4}"))
        }
        (AnswerPayload::Text(a), AnswerPayload::Text(g)) => verdict(
            a.trim().eq_ignore_ascii_case(g.trim()),
            format!("answer `{a}`, gold `{g}`"),
        ),
        (a, g) => verdict(false, format!("answer {a} has a different type than gold {g}")),
    }
}

/// One line of a trajectory corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub task: TaskKind,
    #[serde(default)]
    pub question: String,
    pub width: u32,
    pub height: u32,
    pub transcript: String,
    /// One image reference per view, in the order the views were shown.
    #[serde(default)]
    pub images: Vec<String>,
}

impl CorpusRecord {
    pub fn from_episode(id: impl Into<String>, r: &EpisodeRecord) -> Self {
        let id = id.into();
        Self {
            images: r.views.iter().map(|v| format!("{id}/{}.png", v.view_id)).collect(),
            id,
            task: r.config.task,
            question: r.question.clone(),
            width: r.width,
            height: r.height,
            transcript: r.transcript.clone(),
        }
    }

    /// Image references, synthesized from view ids when none were stored.
    pub fn image_refs(&self, t: &Trajectory) -> Vec<String> {
        if !self.images.is_empty() {
            return self.images.clone();
        }
        std::iter::once(GLOBAL_VIEW_ID.to_string())
            .chain(t.steps.iter().filter_map(|s| match &s.kind {
                StepKind::Observation(o) => Some(o.view_id.clone()),
                _ => None,
            }))
            .map(|v| format!("{}/{v}.png", self.id))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcReason {
    Syntax,
    Structure,
    Leakage,
    Inconsistency,
    Overlap,
}

impl QcReason {
    pub const ALL: [QcReason; 5] = [
        QcReason::Syntax,
        QcReason::Structure,
        QcReason::Leakage,
        QcReason::Inconsistency,
        QcReason::Overlap,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub id: Option<String>,
    pub kept: bool,
    pub reasons: Vec<QcReason>,
    pub detail: Vec<String>,
}

impl QcVerdict {
    fn keep(id: String) -> Self {
        Self {
            id: Some(id),
            kept: true,
            reasons: Vec::new(),
            detail: Vec::new(),
        }
    }

    fn drop(id: Option<String>, reason: QcReason, detail: String) -> Self {
        Self {
            id,
            kept: false,
            reasons: vec![reason],
            detail: vec![detail],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcOptions {
    pub leak_iou: f64,
    /// Record ids overlapping evaluation benchmarks.
    pub blocklist: HashSet<String>,
}

impl Default for QcOptions {
    fn default() -> Self {
        Self {
            leak_iou: DEFAULT_LEAK_IOU,
            blocklist: HashSet::new(),
        }
    }
}

/// Runs the gates in order (syntax, structure, leakage, consistency, then
/// the benchmark blocklist) and stops at the first failure.
pub fn check_record(rec: &CorpusRecord, ann: Option<&OracleAnnotation>, opts: &QcOptions) -> QcVerdict {
    let id = Some(rec.id.clone());
    let t = match parse(&rec.transcript, rec.task) {
        Ok(t) => t,
        Err(errs) => {
            let msg = errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
            return QcVerdict::drop(id, QcReason::Syntax, msg);
        }
    };
    let fmt = validate_format(&t, rec.task);
    if !fmt.is_valid() {
        return QcVerdict::drop(id, QcReason::Syntax, format_issues(&fmt.issues));
    }
    let structure = validate_structure(&t, rec.task);
    if !structure.is_empty() {
        return QcVerdict::drop(id, QcReason::Structure, format!("{structure:?}"));
    }
    let Some(ann) = ann else {
        return QcVerdict::drop(id, QcReason::Inconsistency, "no annotation".into());
    };
    if let Err(e) = ann.validate() {
        return QcVerdict::drop(id, QcReason::Inconsistency, format!("bad annotation: {e}"));
    }
    let frames = chains_from_transcript(&t, rec.width, rec.height);
    let leaks = detect_leakage(&t, rec.task, ann, &frames, opts.leak_iou);
    if let Some(l) = leaks.first() {
        return QcVerdict::drop(
            id,
            QcReason::Leakage,
            format!("turn {} quotes {} (oracle {}, iou {:.3})", l.turn, l.literal, l.oracle, l.iou),
        );
    }
    let c = self_consistency(&t, ann);
    if !c.consistent {
        return QcVerdict::drop(id, QcReason::Inconsistency, c.detail);
    }
    if opts.blocklist.contains(&rec.id) {
        return QcVerdict::drop(id, QcReason::Overlap, "id is on the benchmark blocklist".into());
    }
    QcVerdict::keep(rec.id.clone())
}

fn format_issues(issues: &[FormatIssue]) -> String {
    serde_json::to_string(issues).unwrap_or_else(|_| format!("{issues:?}"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub total: usize,
    pub kept: usize,
    pub drops: BTreeMap<QcReason, usize>,
    pub verdicts: Vec<QcVerdict>,
}

impl QcReport {
    /// `None` for an empty corpus.
    pub fn kept_ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.kept as f64 / self.total as f64)
    }

    pub fn drops_for(&self, r: QcReason) -> usize {
        self.drops.get(&r).copied().unwrap_or(0)
    }

    pub fn text(&self) -> String {
        let mut s = format!("records: {}\nkept: {}\n", self.total, self.kept);
        for r in QcReason::ALL {
            s.push_str(&format!("dropped ({}): {}\n", serde_json::to_value(r).unwrap().as_str().unwrap(), self.drops_for(r)));
        }
        match self.kept_ratio() {
            Some(k) => s.push_str(&format!("kept ratio: {k:.4}\n")),
            None => s.push_str("kept ratio: n/a\n"),
        }
        s
    }
}

/// One input to the filter: a record or the reason it could not be read.
pub type CorpusItem = Result<CorpusRecord, String>;

/// Filters a stream of records; annotations are looked up by record id.
pub fn filter_corpus(
    records: impl IntoIterator<Item = CorpusItem>,
    annotations: &HashMap<String, OracleAnnotation>,
    opts: &QcOptions,
) -> (Vec<CorpusRecord>, QcReport) {
    let mut kept = Vec::new();
    let mut report = QcReport::default();
    for item in records {
        report.total += 1;
        let v = match &item {
            Ok(rec) => check_record(rec, annotations.get(&rec.id), opts),
            Err(e) => QcVerdict::drop(None, QcReason::Syntax, format!("unreadable record: {e}")),
        };
        if v.kept {
            report.kept += 1;
            kept.push(item.expect("kept records were readable"));
        } else {
            for r in &v.reasons {
                *report.drops.entry(*r).or_default() += 1;
            }
        }
        report.verdicts.push(v);
    }
    (kept, report)
}

/// Reads line-delimited records; unreadable lines become `Err` items.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(r: impl BufRead) -> Result<Vec<Result<T, String>>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1)));
    }
    Ok(out)
}

pub fn read_annotations(r: impl BufRead) -> Result<HashMap<String, OracleAnnotation>, CorpusError> {
    let mut out = HashMap::new();
    for (i, item) in read_jsonl::<OracleAnnotation>(r)?.into_iter().enumerate() {
        let a = item.map_err(|message| CorpusError::Malformed { line: i + 1, message })?;
        out.insert(a.id.clone(), a);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: String,
    pub content: String,
}

/// Identity fields needed to rebuild the source record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub id: String,
    pub task: TaskKind,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub images: Vec<String>,
    pub messages: Vec<SftMessage>,
    pub meta: SftMeta,
}

pub const IMAGE_TOKEN: &str = "<image>";

fn msg(role: &str, content: String) -> SftMessage {
    SftMessage {
        role: role.into(),
        content,
    }
}

/// Chat-format training record: system prompt, question with the global
/// view, then model turns with observations inline as user turns.
pub fn to_sft(rec: &CorpusRecord) -> Result<SftRecord, String> {
    let t = parse(&rec.transcript, rec.task).map_err(|e| format!("{}: {e:?}", rec.id))?;
    let mut messages = vec![
        msg("system", prompts::system_prompt(rec.task)),
        msg("user", format!("{IMAGE_TOKEN}{}", rec.question)),
    ];
    let mut turn = String::new();
    for s in &t.steps {
        match &s.kind {
            StepKind::Observation(_) => {
                if !turn.is_empty() {
                    messages.push(msg("assistant", std::mem::take(&mut turn)));
                }
                messages.push(msg("user", format!("{IMAGE_TOKEN}{}", serialize_step(&s.kind))));
            }
            k => {
                if !turn.is_empty() {
                    turn.push('\n');
                }
                turn.push_str(&serialize_step(k));
            }
        }
    }
    if !turn.is_empty() {
        messages.push(msg("assistant", turn));
    }
    Ok(SftRecord {
        images: rec.image_refs(&t),
        messages,
        meta: SftMeta {
            id: rec.id.clone(),
            task: rec.task,
            width: rec.width,
            height: rec.height,
        },
    })
}

/// Rebuilds a corpus record from an exported line.
pub fn from_sft(s: &SftRecord) -> Result<CorpusRecord, String> {
    let question = s
        .messages
        .iter()
        .find(|m| m.role == "user")
        .map(|m| m.content.trim_start_matches(IMAGE_TOKEN).to_string())
        .ok_or("record has no user message")?;
    let parts: Vec<&str> = s
        .messages
        .iter()
        .skip_while(|m| m.role == "system")
        .skip(1)
        .map(|m| m.content.trim_start_matches(IMAGE_TOKEN))
        .collect();
    Ok(CorpusRecord {
        id: s.meta.id.clone(),
        task: s.meta.task,
        question,
        width: s.meta.width,
        height: s.meta.height,
        transcript: parts.join("\n"),
        images: s.images.clone(),
    })
}

/// Serializes records one JSON object per line; no header.
pub fn export_sft(records: &[CorpusRecord]) -> Result<String, String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&to_sft(r)?).map_err(|e| e.to_string())?);
        out.push('\n');
    }
    Ok(out)
}

pub fn import_sft(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: SftRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(from_sft(&s).map_err(|message| CorpusError::Malformed { line: i + 1, message })?);
    }
    Ok(out)
}
