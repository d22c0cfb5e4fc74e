//! Plan state machine and plan-following score.
//!
//! A plan is a checklist of regions to inspect. Items start `Pending`, become
//! `Completed` once marked done, or `Expanded` when a finer sub-plan is
//! appended under them. The state is a pure fold over [`PlanEvent`]s; illegal
//! transitions are logged as [`Violation`]s instead of aborting.
//!
//! Scoring rule table:
//!
//! | condition                                                      | Q  |
//! |----------------------------------------------------------------|----|
//! | any violation                                                  | -1 |
//! | no plan, SOP requires one                                      |  0 |
//! | answered with a pending item                                   |  0 |
//! | an item was completed with no covering inspection before it    |  0 |
//! | otherwise                                                      |  1 |
//!
//! An inspection covers an item when the zoomed region overlaps at least half
//! of the item's area, both measured in the global relative frame.

use crate::geometry::{NormBox, RelRect};
use crate::task::TaskKind;
use crate::trajectory::{ChecklistItem, SectionKind, Step, StepKind, Trajectory, ViewTracker};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_ITEMS: usize = 8;
pub const COVERAGE_THRESHOLD: f64 = 0.5;
/// Deepest allowed item depth (two layers: 0 and 1).
pub const MAX_ITEM_DEPTH: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Completed,
    Expanded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanItem {
    pub id: String,
    pub goal: String,
    /// Region as written, relative to the view where the item was authored.
    pub roi: Option<NormBox>,
    /// Global relative region of the authoring view.
    pub frame: RelRect,
    pub status: ItemStatus,
    pub depth: usize,
    pub parent: Option<String>,
    /// Completed without any earlier inspection covering it.
    pub bypassed: bool,
    /// Sequence number of the event that created the item.
    created_at: usize,
}

impl PlanItem {
    /// The item's region in the global relative frame.
    pub fn global_roi(&self) -> Option<RelRect> {
        self.roi.map(|r| self.frame.compose(&r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewItem {
    pub id: String,
    pub goal: String,
    pub roi: Option<NormBox>,
}

impl From<&ChecklistItem> for NewItem {
    fn from(c: &ChecklistItem) -> Self {
        Self {
            id: c.id.clone(),
            goal: c.label.clone(),
            roi: c.roi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PlanEvent {
    Init { items: Vec<NewItem>, frame: RelRect },
    /// A zoom; `region` is the zoomed area in the global relative frame, when known.
    Inspect { view_id: String, region: Option<RelRect> },
    Complete { id: String },
    Expand { id: String, children: Vec<NewItem>, frame: RelRect },
    /// A done item listed as not done again.
    Reopen { id: String },
    /// An item mentioned without a transition.
    Reference { id: String },
    /// A `[FINAL AGGREGATION]` section was written.
    AggregationClaimed,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyPlan,
    DuplicatePlan,
    TooManyItems { count: usize, max: usize },
    DuplicateId { id: String },
    UnknownItem { id: String },
    AlreadyCompleted { id: String },
    ExpandCompleted { id: String },
    DepthExceeded { id: String },
    Reopened { id: String },
    /// Aggregation claimed while a never-inspected item was still pending.
    SkippedRegion { id: String },
    RepeatedAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum PlanFlag {
    FullFrameRoi { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Event(PlanEvent),
    /// Parent auto-completed after its last child completed.
    AutoComplete { id: String },
    Violation(Violation),
    Flag(PlanFlag),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanState {
    pub items: Vec<PlanItem>,
    pub log: Vec<LogEntry>,
    pub answered: bool,
    pub max_items: usize,
    initialized: bool,
    inspections: Vec<Option<RelRect>>,
    seq: usize,
}

impl PlanState {
    pub fn new(max_items: usize) -> Self {
        Self {
            max_items,
            ..Default::default()
        }
    }

    /// Rebuilds a state from the input events of `self`'s log.
    pub fn replay(max_items: usize, events: impl IntoIterator<Item = PlanEvent>) -> Self {
        let mut s = Self::new(max_items);
        for e in events {
            s.apply(e);
        }
        s
    }

    pub fn events(&self) -> impl Iterator<Item = &PlanEvent> {
        self.log.iter().filter_map(|l| match l {
            LogEntry::Event(e) => Some(e),
            _ => None,
        })
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.log.iter().filter_map(|l| match l {
            LogEntry::Violation(v) => Some(v),
            _ => None,
        })
    }

    pub fn flags(&self) -> impl Iterator<Item = &PlanFlag> {
        self.log.iter().filter_map(|l| match l {
            LogEntry::Flag(f) => Some(f),
            _ => None,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn get(&self, id: &str) -> Option<&PlanItem> {
        self.items.iter().find(|i| i.id == id)
    }

    fn index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.id == id)
    }

    pub fn pending(&self) -> impl Iterator<Item = &PlanItem> {
        self.items.iter().filter(|i| i.status == ItemStatus::Pending)
    }

    fn violate(&mut self, v: Violation) {
        self.log.push(LogEntry::Violation(v));
    }

    fn covered(&self, idx: usize, inspections: &[Option<RelRect>]) -> bool {
        let item = &self.items[idx];
        match item.global_roi() {
            None => !inspections.is_empty(),
            Some(roi) => {
                let area = roi.area();
                inspections.iter().flatten().any(|r| {
                    if area <= 0.0 {
                        r.intersection_area(&roi) > 0.0 || contains_point(r, roi.x1, roi.y1)
                    } else {
                        r.intersection_area(&roi) / area >= COVERAGE_THRESHOLD
                    }
                })
            }
        }
    }

    fn insert(&mut self, new: &NewItem, frame: RelRect, depth: usize, parent: Option<String>) {
        if self.index(&new.id).is_some() {
            self.violate(Violation::DuplicateId { id: new.id.clone() });
            return;
        }
        if new.roi == Some(NormBox::FULL) && depth == 0 {
            self.log
                .push(LogEntry::Flag(PlanFlag::FullFrameRoi { id: new.id.clone() }));
        }
        self.items.push(PlanItem {
            id: new.id.clone(),
            goal: new.goal.clone(),
            roi: new.roi,
            frame,
            status: ItemStatus::Pending,
            depth,
            parent,
            bypassed: false,
            created_at: self.seq,
        });
    }

    fn auto_complete_parents(&mut self, mut idx: usize) {
        while let Some(parent) = self.items[idx].parent.clone() {
            let Some(p) = self.index(&parent) else { break };
            let done = self
                .items
                .iter()
                .filter(|c| c.parent.as_deref() == Some(parent.as_str()))
                .all(|c| c.status == ItemStatus::Completed);
            if !(done && self.items[p].status == ItemStatus::Expanded) {
                break;
            }
            self.items[p].status = ItemStatus::Completed;
            self.log.push(LogEntry::AutoComplete { id: parent });
            idx = p;
        }
    }

    /// Applies one event in place.
    pub fn apply(&mut self, e: PlanEvent) {
        self.seq += 1;
        self.log.push(LogEntry::Event(e.clone()));
        match e {
            PlanEvent::Init { items, frame } => {
                if self.initialized {
                    self.violate(Violation::DuplicatePlan);
                    return;
                }
                self.initialized = true;
                if items.is_empty() {
                    self.violate(Violation::EmptyPlan);
                }
                if items.len() > self.max_items {
                    self.violate(Violation::TooManyItems {
                        count: items.len(),
                        max: self.max_items,
                    });
                }
                for it in &items {
                    self.insert(it, frame, 0, None);
                }
            }
            PlanEvent::Inspect { region, .. } => self.inspections.push(region),
            PlanEvent::Complete { id } => match self.index(&id) {
                None => self.violate(Violation::UnknownItem { id }),
                Some(i) => match self.items[i].status {
                    ItemStatus::Completed => self.violate(Violation::AlreadyCompleted { id }),
                    ItemStatus::Expanded => {
                        self.items[i].status = ItemStatus::Completed;
                        self.auto_complete_parents(i);
                    }
                    ItemStatus::Pending => {
                        let inspections = self.inspections.clone();
                        self.items[i].bypassed = !self.covered(i, &inspections);
                        self.items[i].status = ItemStatus::Completed;
                        self.auto_complete_parents(i);
                    }
                },
            },
            PlanEvent::Expand { id, children, frame } => match self.index(&id) {
                None => self.violate(Violation::UnknownItem { id }),
                Some(i) => {
                    let depth = self.items[i].depth + 1;
                    if self.items[i].status == ItemStatus::Completed {
                        self.violate(Violation::ExpandCompleted { id });
                    } else if depth > MAX_ITEM_DEPTH {
                        self.violate(Violation::DepthExceeded { id });
                    } else if !children.is_empty() {
                        self.items[i].status = ItemStatus::Expanded;
                        for c in &children {
                            self.insert(c, frame, depth, Some(id.clone()));
                        }
                    }
                }
            },
            PlanEvent::Reopen { id } => match self.index(&id) {
                None => self.violate(Violation::UnknownItem { id }),
                Some(i) if self.items[i].status == ItemStatus::Completed => {
                    self.violate(Violation::Reopened { id })
                }
                Some(_) => {}
            },
            PlanEvent::Reference { id } => {
                if self.index(&id).is_none() {
                    self.violate(Violation::UnknownItem { id });
                }
            }
            PlanEvent::AggregationClaimed => {
                let skipped: Vec<String> = (0..self.items.len())
                    .filter(|&i| self.items[i].status == ItemStatus::Pending)
                    .filter(|&i| !self.covered(i, &self.inspections))
                    .map(|i| self.items[i].id.clone())
                    .collect();
                for id in skipped {
                    self.violate(Violation::SkippedRegion { id });
                }
            }
            PlanEvent::Answer => {
                if self.answered {
                    self.violate(Violation::RepeatedAnswer);
                }
                self.answered = true;
            }
        }
    }
}

fn contains_point(r: &RelRect, x: f64, y: f64) -> bool {
    x >= r.x1 && x <= r.x2 && y >= r.y1 && y <= r.y2
}

/// Pure single-step transition.
pub fn apply_event(s: &PlanState, e: PlanEvent) -> PlanState {
    let mut next = s.clone();
    next.apply(e);
    next
}

/// Initializes a plan from the first `[PLAN]` checklist, authored in the
/// global view.
pub fn init_plan(items: &[ChecklistItem], max_items: usize) -> PlanState {
    let mut s = PlanState::new(max_items);
    s.apply(PlanEvent::Init {
        items: items.iter().map(NewItem::from).collect(),
        frame: RelRect::FULL,
    });
    s
}

/// Plan-following score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum QPlan {
    Valid,
    Bypass,
    Violation,
}

impl QPlan {
    pub fn value(self) -> i8 {
        match self {
            QPlan::Valid => 1,
            QPlan::Bypass => 0,
            QPlan::Violation => -1,
        }
    }
}

impl From<QPlan> for i8 {
    fn from(q: QPlan) -> i8 {
        q.value()
    }
}

impl TryFrom<i8> for QPlan {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(QPlan::Valid),
            0 => Ok(QPlan::Bypass),
            -1 => Ok(QPlan::Violation),
            other => Err(format!("Q_plan must be 1, 0 or -1, found {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub q: QPlan,
    pub state: PlanState,
    pub violations: Vec<Violation>,
    pub bypassed: Vec<String>,
    pub pending: Vec<String>,
}

/// Scores a final plan state for `task`.
pub fn score_state(state: &PlanState, task: TaskKind) -> PlanReport {
    let violations: Vec<Violation> = state.violations().cloned().collect();
    let bypassed: Vec<String> = state
        .items
        .iter()
        .filter(|i| i.bypassed)
        .map(|i| i.id.clone())
        .collect();
    let pending: Vec<String> = state.pending().map(|i| i.id.clone()).collect();
    let q = if !violations.is_empty() {
        QPlan::Violation
    } else if !state.is_initialized() {
        if task.plan_required() {
            QPlan::Bypass
        } else {
            QPlan::Valid
        }
    } else if (state.answered && !pending.is_empty()) || !bypassed.is_empty() {
        QPlan::Bypass
    } else {
        QPlan::Valid
    };
    PlanReport {
        q,
        state: state.clone(),
        violations,
        bypassed,
        pending,
    }
}

/// Turns parsed trajectory steps into plan events as they arrive.
#[derive(Debug, Clone)]
pub struct PlanTracker {
    state: PlanState,
    views: ViewTracker,
}

impl PlanTracker {
    pub fn new(max_items: usize) -> Self {
        Self {
            state: PlanState::new(max_items),
            views: ViewTracker::default(),
        }
    }

    pub fn state(&self) -> &PlanState {
        &self.state
    }

    pub fn observe(&mut self, step: &Step) {
        self.views.observe(step);
        match &step.kind {
            StepKind::Think(tb) => {
                for section in &tb.sections {
                    match section.kind {
                        SectionKind::Plan if !self.state.is_initialized() => {
                            self.state.apply(PlanEvent::Init {
                                items: section.items.iter().map(NewItem::from).collect(),
                                frame: self.views.current_region(),
                            });
                            // Nested items in the initial plan expand immediately.
                            self.sync(&section.items, true);
                        }
                        SectionKind::Plan | SectionKind::Progress => self.sync(&section.items, false),
                        SectionKind::FinalAggregation => self.state.apply(PlanEvent::AggregationClaimed),
                        _ => {}
                    }
                }
            }
            StepKind::ToolCall(tc) => self.state.apply(PlanEvent::Inspect {
                view_id: tc.source_image_id.clone(),
                region: self.views.pending_zoom(),
            }),
            StepKind::Observation(_) => {}
            StepKind::Answer(_) => self.state.apply(PlanEvent::Answer),
        }
    }

    /// Reconciles a checklist listing with the current state.
    fn sync(&mut self, listed: &[ChecklistItem], structure_only: bool) {
        let frame = self.views.current_region();
        // New children first so that completions below can see them.
        self.expand_new(listed, frame);
        if structure_only {
            return;
        }
        for item in listed {
            self.mark(item);
        }
    }

    fn expand_new(&mut self, listed: &[ChecklistItem], frame: RelRect) {
        for item in listed {
            let known = self.state.get(&item.id).is_some();
            if known {
                let fresh: Vec<NewItem> = item
                    .children
                    .iter()
                    .filter(|c| self.state.get(&c.id).is_none())
                    .map(NewItem::from)
                    .collect();
                if !fresh.is_empty() {
                    self.state.apply(PlanEvent::Expand {
                        id: item.id.clone(),
                        children: fresh,
                        frame,
                    });
                }
                self.expand_new(&item.children, frame);
            }
        }
    }

    fn mark(&mut self, item: &ChecklistItem) {
        // A parent auto-completed by its children in this same listing is
        // not reopened by its own unticked line.
        let before = self.state.get(&item.id).map(|i| i.status);
        for c in &item.children {
            self.mark(c);
        }
        let status = self.state.get(&item.id).map(|i| i.status);
        match (before, status, item.done) {
            (None, _, _) => self.state.apply(PlanEvent::Reference { id: item.id.clone() }),
            (_, Some(ItemStatus::Pending | ItemStatus::Expanded), true) => {
                self.state.apply(PlanEvent::Complete { id: item.id.clone() })
            }
            (Some(ItemStatus::Completed), _, false) => {
                self.state.apply(PlanEvent::Reopen { id: item.id.clone() })
            }
            _ => {}
        }
    }

    pub fn finish(&self, task: TaskKind) -> PlanReport {
        score_state(&self.state, task)
    }
}

/// Plan-following score of a whole trajectory.
pub fn evaluate_qplan(t: &Trajectory, task: TaskKind, max_items: usize) -> PlanReport {
    let mut tracker = PlanTracker::new(max_items);
    for step in &t.steps {
        tracker.observe(step);
    }
    tracker.finish(task)
}

/// Difficulty coefficient in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difficulty(f64);

/// Floor keeping the coefficient strictly positive.
pub const MIN_DIFFICULTY: f64 = 1e-6;

impl Difficulty {
    pub fn new(v: f64) -> Self {
        Self(v.clamp(MIN_DIFFICULTY, 1.0))
    }

    /// Grows with the number of targets: `1 - exp(-lambda_c * y)`.
    pub fn counting(count: u64, lambda_c: f64) -> Self {
        Self::new(1.0 - (-lambda_c * count as f64).exp())
    }

    /// Shrinks with target area: `exp(-lambda_g * area / 1e6)`.
    pub fn grounding(target: &NormBox, lambda_g: f64) -> Self {
        Self::new((-lambda_g * target.area() as f64 / 1e6).exp())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}
