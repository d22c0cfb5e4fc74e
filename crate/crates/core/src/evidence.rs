//! Evidence state: per-crop findings mapped to the global frame,
//! de-duplicated across overlapping crops and rolled up along the plan.

use crate::geometry::{compose_to_global, crop_frame, iou, FrameChain, NormBox};
use crate::plan::PlanState;
use crate::trajectory::{Answer, AnswerPayload, ObjContext, SectionKind, StepKind, Trajectory, GLOBAL_VIEW_ID};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

pub const DEFAULT_DEDUP_IOU: f64 = 0.5;
/// Minimum IoU for an answer box to agree with the best evidence box.
pub const GROUNDING_CONSISTENCY_IOU: f64 = 0.5;
/// Label given to Obj lines written without one.
pub const DEFAULT_LABEL: &str = "object";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceStatus {
    Verified,
    Rejected,
    /// Claimed in the final aggregation but never listed in a local summary.
    Unresolved,
}

/// Frame in which local-summary Obj lines are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjFrame {
    /// Relative to the view the line was written in.
    #[default]
    View,
    /// Already in the global frame.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub global_box: NormBox,
    pub label: String,
    pub status: EvidenceStatus,
    pub source_turn: usize,
    pub depth: usize,
    pub view_id: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub label: String,
    /// Box of the surviving entry after the merge.
    pub kept: NormBox,
    pub merged: NormBox,
    pub merged_turn: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceStore {
    pub entries: Vec<EvidenceEntry>,
    pub dedup_log: Vec<MergeRecord>,
}

impl EvidenceStore {
    pub fn verified(&self) -> impl Iterator<Item = &EvidenceEntry> {
        self.entries.iter().filter(|e| e.status == EvidenceStatus::Verified)
    }

    pub fn verified_boxes(&self) -> Vec<NormBox> {
        self.verified().map(|e| e.global_box).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error("turn {turn}: Obj line `{line}` was written in unknown view `{view_id}`")]
    UnknownView {
        turn: usize,
        view_id: String,
        line: String,
    },
}

fn norm_label(label: Option<&str>) -> String {
    label
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .unwrap_or_else(|| DEFAULT_LABEL.to_string())
}

/// Rebuilds the frame chain of every view opened in a transcript of an image
/// of `width x height` pixels. Zooms that cannot be resolved are skipped.
pub fn chains_from_transcript(t: &Trajectory, width: u32, height: u32) -> HashMap<String, FrameChain> {
    let mut chains = HashMap::new();
    let Ok(global) = FrameChain::global(width, height, GLOBAL_VIEW_ID) else {
        return chains;
    };
    chains.insert(GLOBAL_VIEW_ID.to_string(), global);
    let mut pending = None;
    for step in &t.steps {
        match &step.kind {
            StepKind::ToolCall(tc) => pending = Some(tc.clone()),
            StepKind::Observation(o) => {
                let Some(tc) = pending.take() else { continue };
                let (Some(src), Some(b)) = (chains.get(&tc.source_image_id), tc.norm_bbox()) else {
                    continue;
                };
                let inner = src.innermost();
                let chain = crop_frame(src.view_id(), inner.width, inner.height, &b)
                    .and_then(|f| src.push(f, o.view_id.clone()));
                if let Ok(c) = chain {
                    chains.insert(o.view_id.clone(), c);
                }
            }
            _ => {}
        }
    }
    chains
}

/// Maps every Obj line of `t` into the global frame.
pub fn ingest(
    t: &Trajectory,
    frames: &HashMap<String, FrameChain>,
    obj_frame: ObjFrame,
) -> Result<EvidenceStore, EvidenceError> {
    let mut entries = Vec::new();
    let mut claimed = Vec::new();
    let mut current = GLOBAL_VIEW_ID.to_string();
    for step in &t.steps {
        let tb = match &step.kind {
            StepKind::Observation(o) => {
                current = o.view_id.clone();
                continue;
            }
            StepKind::Think(tb) => tb,
            _ => continue,
        };
        for section in &tb.sections {
            let context = if section.kind == SectionKind::FinalAggregation {
                ObjContext::Aggregation
            } else {
                ObjContext::Local
            };
            for line in &section.objects {
                let label = norm_label(line.label.as_deref());
                if context == ObjContext::Aggregation {
                    claimed.push((step.turn, label, line.bbox, line.rejected));
                    continue;
                }
                let chain = frames.get(&current).ok_or_else(|| EvidenceError::UnknownView {
                    turn: step.turn,
                    view_id: current.clone(),
                    line: format!("{}", line.bbox),
                })?;
                let global_box = match obj_frame {
                    ObjFrame::View => compose_to_global(&line.bbox, chain).map_err(|_| EvidenceError::UnknownView {
                        turn: step.turn,
                        view_id: current.clone(),
                        line: format!("{}", line.bbox),
                    })?,
                    ObjFrame::Global => line.bbox,
                };
                entries.push(EvidenceEntry {
                    global_box,
                    label,
                    status: if line.rejected {
                        EvidenceStatus::Rejected
                    } else {
                        EvidenceStatus::Verified
                    },
                    source_turn: step.turn,
                    depth: chain.depth(),
                    view_id: current.clone(),
                    note: String::new(),
                });
            }
        }
    }
    for (turn, label, bbox, rejected) in claimed {
        if rejected {
            continue;
        }
        let backed = entries.iter().any(|e| {
            e.status == EvidenceStatus::Verified
                && e.label == label
                && iou(&e.global_box, &bbox) >= DEFAULT_DEDUP_IOU
        });
        if !backed {
            entries.push(EvidenceEntry {
                global_box: bbox,
                label,
                status: EvidenceStatus::Unresolved,
                source_turn: turn,
                depth: 0,
                view_id: GLOBAL_VIEW_ID.to_string(),
                note: "only in final aggregation".into(),
            });
        }
    }
    Ok(EvidenceStore {
        entries,
        dedup_log: Vec::new(),
    })
}

fn dedup_pass(s: &EvidenceStore, tau: f64) -> EvidenceStore {
    let mut out = EvidenceStore {
        entries: Vec::with_capacity(s.entries.len()),
        dedup_log: s.dedup_log.clone(),
    };
    for e in &s.entries {
        if e.status != EvidenceStatus::Verified {
            out.entries.push(e.clone());
            continue;
        }
        let hit = out.entries.iter_mut().find_map(|k| {
            if k.status != EvidenceStatus::Verified || k.label != e.label {
                return None;
            }
            let v = iou(&k.global_box, &e.global_box);
            (v > tau).then_some((k, v))
        });
        match hit {
            Some((k, v)) => {
                if e.depth > k.depth {
                    k.global_box = e.global_box;
                    k.depth = e.depth;
                    k.view_id = e.view_id.clone();
                }
                out.dedup_log.push(MergeRecord {
                    label: e.label.clone(),
                    kept: k.global_box,
                    merged: e.global_box,
                    merged_turn: e.source_turn,
                    iou: v,
                });
            }
            None => out.entries.push(e.clone()),
        }
    }
    out
}

/// Merges same-label verified entries overlapping by more than `tau`, in
/// document order, until no pair qualifies.
pub fn dedup(s: &EvidenceStore, tau: f64) -> EvidenceStore {
    let mut cur = dedup_pass(s, tau);
    loop {
        let next = dedup_pass(&cur, tau);
        if next.entries.len() == cur.entries.len() {
            return cur;
        }
        cur = next;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Plan item id; `None` for the root.
    pub item: Option<String>,
    pub parent: Option<String>,
    pub entries: Vec<EvidenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTree {
    /// Root first, then plan items in plan order.
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSummary {
    pub counts: BTreeMap<String, usize>,
    pub best_box: BTreeMap<String, NormBox>,
    pub unresolved: Vec<EvidenceEntry>,
    pub rejected: usize,
}

impl EvidenceSummary {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Count for `label`, or the total over all labels.
    pub fn count_for(&self, label: Option<&str>) -> usize {
        match label {
            Some(l) => self.counts.get(&norm_label(Some(l))).copied().unwrap_or(0),
            None => self.total(),
        }
    }
}

/// Attaches entries to plan items and summarizes verified findings.
pub fn aggregate(s: &EvidenceStore, plan: &PlanState) -> (EvidenceTree, EvidenceSummary) {
    let mut nodes = vec![TreeNode {
        item: None,
        parent: None,
        entries: Vec::new(),
    }];
    nodes.extend(plan.items.iter().map(|i| TreeNode {
        item: Some(i.id.clone()),
        parent: i.parent.clone(),
        entries: Vec::new(),
    }));
    let rois: Vec<_> = plan.items.iter().map(|i| (i.global_roi(), i.depth)).collect();
    let mut summary = EvidenceSummary::default();
    let mut best: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for e in &s.entries {
        let r = e.global_box.as_rel_rect();
        let mut slot = 0;
        let mut top = (0.0, 0usize);
        for (i, (roi, depth)) in rois.iter().enumerate() {
            let Some(roi) = roi else { continue };
            let a = roi.intersection_area(&r);
            if a > top.0 || (a > 0.0 && a == top.0 && *depth > top.1) {
                top = (a, *depth);
                slot = i + 1;
            }
        }
        nodes[slot].entries.push(e.clone());
        match e.status {
            EvidenceStatus::Verified => {
                *summary.counts.entry(e.label.clone()).or_default() += 1;
                let rank = (e.depth, e.source_turn);
                let cur = best.get(&e.label);
                if cur.is_none_or(|c| rank >= *c) {
                    best.insert(e.label.clone(), rank);
                    summary.best_box.insert(e.label.clone(), e.global_box);
                }
            }
            EvidenceStatus::Rejected => summary.rejected += 1,
            EvidenceStatus::Unresolved => summary.unresolved.push(e.clone()),
        }
    }
    (EvidenceTree { nodes }, summary)
}

impl EvidenceTree {
    /// Indented plain-text report, one line per node and entry.
    pub fn report(&self) -> String {
        let mut out = String::new();
        self.write_node(&mut out, None, 0);
        out
    }

    fn write_node(&self, out: &mut String, item: Option<&str>, indent: usize) {
        let Some(node) = self.nodes.iter().find(|n| n.item.as_deref() == item) else {
            return;
        };
        let pad = "  ".repeat(indent);
        let _ = writeln!(out, "{pad}{}", item.unwrap_or("root"));
        for e in &node.entries {
            let status = match e.status {
                EvidenceStatus::Verified => "verified",
                EvidenceStatus::Rejected => "rejected",
                EvidenceStatus::Unresolved => "unresolved",
            };
            let _ = writeln!(
                out,
                "{pad}  * {} {} {status} (turn {}, depth {})",
                e.label, e.global_box, e.source_turn, e.depth
            );
        }
        let children: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| n.item.is_some() && n.parent.as_deref() == item)
            .filter_map(|n| n.item.as_deref())
            .collect();
        for c in children {
            self.write_node(out, Some(c), indent + 1);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    /// Answer count minus evidence count.
    pub delta: Option<i64>,
    pub iou: Option<f64>,
}

/// Checks a final answer against the trajectory's own evidence.
pub fn consistency(answer: &Answer, summary: &EvidenceSummary, label: Option<&str>) -> ConsistencyReport {
    match &answer.payload {
        AnswerPayload::Count(n) => {
            let delta = *n as i64 - summary.count_for(label) as i64;
            ConsistencyReport {
                consistent: delta == 0,
                delta: Some(delta),
                iou: None,
            }
        }
        AnswerPayload::Box(b) => {
            let best = match label {
                Some(l) => summary.best_box.get(&norm_label(Some(l))),
                None => summary.best_box.values().next(),
            };
            let v = best.map_or(0.0, |g| iou(b, g));
            ConsistencyReport {
                consistent: v >= GROUNDING_CONSISTENCY_IOU,
                delta: None,
                iou: Some(v),
            }
        }
        _ => ConsistencyReport {
            consistent: false,
            delta: None,
            iou: None,
        },
    }
}
