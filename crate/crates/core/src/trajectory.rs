//! Interleaved trajectory grammar.
//!
//! A trajectory is a flat sequence of tagged blocks:
//!
//! ```text
//! <think>... [PLAN] / [PROGRESS] / [FINAL AGGREGATION] sections ...</think>
//! <tool_call>{"name": "zoom_in", "arguments": {"source_image_id": "v0", "bbox": [0, 0, 500, 500]}}</tool_call>
//! <observation>Current View: v1</observation>
//! <answer>12</answer>
//! ```
//!
//! `<observation>` blocks are authored by the runtime and start a new turn;
//! everything else is model-authored. Tags are matched case-insensitively and
//! any text outside tags is ignored.

use crate::geometry::{NormBox, RelRect};
use crate::task::{AnswerKind, TaskKind};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::LazyLock;
use thiserror::Error;

/// Default cap on raw trajectory size in bytes.
pub const DEFAULT_MAX_BYTES: usize = 65_536;

/// The only tool the runtime exposes.
pub const ZOOM_TOOL: &str = "zoom_in";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub turn: usize,
    #[serde(flatten)]
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum StepKind {
    Think(ThinkBlock),
    ToolCall(ToolCall),
    Observation(Observation),
    Answer(Answer),
}

impl StepKind {
    pub fn is_model_authored(&self) -> bool {
        !matches!(self, StepKind::Observation(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinkBlock {
    pub raw: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    /// Text before the first header.
    Preamble,
    ObservationNote,
    Plan,
    /// `[PROGRESS]` and `[Track]` are the same section.
    Progress,
    FinalAggregation,
    /// Unrecognized bracketed header, kept as free text.
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub header: Option<String>,
    pub body: String,
    pub items: Vec<ChecklistItem>,
    pub objects: Vec<ObjLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: String,
    pub label: String,
    pub roi: Option<NormBox>,
    pub done: bool,
    pub children: Vec<ChecklistItem>,
}

impl ChecklistItem {
    /// Depth of the deepest nested item, counting this one as 0.
    pub fn nesting(&self) -> usize {
        self.children
            .iter()
            .map(|c| c.nesting() + 1)
            .max()
            .unwrap_or(0)
    }
}

/// A `* Obj (label): [x1, y1, x2, y2]` line. `Rejected` lines record
/// inspected-and-dismissed candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjLine {
    pub label: Option<String>,
    pub bbox: NormBox,
    pub rejected: bool,
}

/// One coordinate of a tool-call bbox: a number, or a bare placeholder name
/// as written in the tool schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coord {
    Value(i64),
    Placeholder(String),
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Value(v) => write!(f, "{v}"),
            Coord::Placeholder(p) => f.write_str(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub source_image_id: String,
    pub bbox: [Coord; 4],
}

impl ToolCall {
    pub fn zoom(source_image_id: impl Into<String>, bbox: NormBox) -> Self {
        let [a, b, c, d] = bbox.coords();
        Self {
            name: ZOOM_TOOL.into(),
            source_image_id: source_image_id.into(),
            bbox: [a, b, c, d].map(|v| Coord::Value(v as i64)),
        }
    }

    /// The numeric bbox, if every coordinate is a number.
    pub fn raw_bbox(&self) -> Option<[i64; 4]> {
        let mut out = [0i64; 4];
        for (o, c) in out.iter_mut().zip(&self.bbox) {
            match c {
                Coord::Value(v) => *o = *v,
                Coord::Placeholder(_) => return None,
            }
        }
        Some(out)
    }

    pub fn norm_bbox(&self) -> Option<NormBox> {
        let [a, b, c, d] = self.raw_bbox()?;
        NormBox::new(a, b, c, d).ok()
    }

    /// Canonical body with keys in schema order.
    pub fn to_json(&self) -> String {
        let coords: Vec<String> = self.bbox.iter().map(Coord::to_string).collect();
        format!(
            "{{\"name\": {}, \"arguments\": {{\"source_image_id\": {}, \"bbox\": [{}]}}}}",
            serde_json::Value::String(self.name.clone()),
            serde_json::Value::String(self.source_image_id.clone()),
            coords.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub view_id: String,
    /// Global relative region covered by the view, when the runtime states it.
    pub region: Option<NormBox>,
}

impl Observation {
    pub fn body(&self) -> String {
        let mut s = format!("Current View: {}", self.view_id);
        if let Some(r) = self.region {
            s.push_str(&format!("\nRegion: {r}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AnswerPayload {
    Count(u64),
    Box(NormBox),
    Choice(char),
    Text(String),
}

impl fmt::Display for AnswerPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerPayload::Count(n) => write!(f, "{n}"),
            AnswerPayload::Box(b) => write!(f, "{b}"),
            AnswerPayload::Choice(c) => write!(f, "{c}"),
            AnswerPayload::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub kind: AnswerKind,
    pub payload: AnswerPayload,
}

impl Answer {
    /// Types a raw answer body for `kind`. Surrounding whitespace is ignored.
    pub fn parse(raw: &str, kind: AnswerKind) -> Result<Answer, String> {
        let s = raw.trim();
        let payload = match kind {
            AnswerKind::Count => s
                .parse::<u64>()
                .map(AnswerPayload::Count)
                .map_err(|_| format!("expected a non-negative integer count, found `{s}`"))?,
            AnswerKind::Grounding => {
                let c = BOX_LITERAL
                    .captures(s)
                    .filter(|c| c.get(0).map(|m| m.as_str().len()) == Some(s.len()))
                    .ok_or_else(|| format!("expected [x1, y1, x2, y2], found `{s}`"))?;
                let v = box_captures(&c).ok_or_else(|| format!("box literal out of range: `{s}`"))?;
                AnswerPayload::Box(
                    NormBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())?,
                )
            }
            AnswerKind::Choice => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if matches!(c.to_ascii_uppercase(), 'A'..='D') => {
                        AnswerPayload::Choice(c.to_ascii_uppercase())
                    }
                    _ => return Err(format!("expected one letter A-D, found `{s}`")),
                }
            }
            AnswerKind::Text | AnswerKind::Route => {
                if s.is_empty() {
                    return Err("empty answer".into());
                }
                AnswerPayload::Text(s.to_string())
            }
        };
        Ok(Answer { kind, payload })
    }

    pub fn count(&self) -> Option<u64> {
        match self.payload {
            AnswerPayload::Count(n) => Some(n),
            _ => None,
        }
    }

    pub fn bbox(&self) -> Option<NormBox> {
        match self.payload {
            AnswerPayload::Box(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum ParseErrorKind {
    #[error("text is {len} bytes, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("unclosed <{0}> tag")]
    UnclosedTag(String),
    #[error("malformed tool call: {0}")]
    MalformedToolCall(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("non-numeric Obj line: {0}")]
    NonNumericObj(String),
    #[error("Obj box out of range: {0}")]
    InvalidObjBox(String),
    #[error("observation without a Current View line")]
    MalformedObservation,
    #[error("answer does not match task: {0}")]
    AnswerMismatch(String),
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_bytes: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

static OPEN_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<(think|tool_call|answer|observation)>").unwrap());
static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\[([A-Za-z][A-Za-z _-]*)\]\s?(.*)$").unwrap());
static CHECK_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([ \t]*)(?:[-*+\u{2022}]|\d+[.)])?\s*\[([ xX])\]\s*(.*?)\s*$").unwrap()
});
static OBJ_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*+\u{2022}]\s*)?(obj|rejected)\s*(?:\(([^)]*)\))?\s*:\s*(.*?)\s*$")
        .unwrap()
});
static BOX_LITERAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]").unwrap()
});
static CURRENT_VIEW: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)current view:\s*(\S+)").unwrap());
static REGION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)region:\s*(\[[^\]]*\])").unwrap());
static BBOX_ARRAY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"("bbox"\s*:\s*\[)([^\]]*)(\])"#).unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());

fn box_captures(c: &regex::Captures<'_>) -> Option<[i64; 4]> {
    let mut v = [0i64; 4];
    for (i, slot) in v.iter_mut().enumerate() {
        *slot = c.get(i + 1)?.as_str().parse().ok()?;
    }
    Some(v)
}

/// All `[a, b, c, d]` integer literals in `text`.
pub fn box_literals(text: &str) -> Vec<[i64; 4]> {
    BOX_LITERAL
        .captures_iter(text)
        .filter_map(|c| box_captures(&c))
        .collect()
}

/// Parses a full trajectory, failing if anything could not be parsed.
pub fn parse(text: &str, task: TaskKind) -> Result<Trajectory, Vec<ParseError>> {
    let (t, errors) = parse_partial(text, task, ParseOptions::default());
    if errors.is_empty() {
        Ok(t)
    } else {
        Err(errors)
    }
}

/// Parses as much as possible, returning the steps recognized so far along
/// with every error found. Parsing stops at the first unclosed tag.
pub fn parse_partial(text: &str, task: TaskKind, opts: ParseOptions) -> (Trajectory, Vec<ParseError>) {
    let mut errors = Vec::new();
    let mut steps = Vec::new();
    if text.len() > opts.max_bytes {
        errors.push(ParseError {
            offset: opts.max_bytes,
            kind: ParseErrorKind::TooLong {
                len: text.len(),
                max: opts.max_bytes,
            },
        });
        return (Trajectory { steps }, errors);
    }
    let lower = text.to_ascii_lowercase();
    let mut pos = 0;
    let mut turn = 0;
    while let Some(m) = OPEN_TAG.captures(&text[pos..]) {
        let whole = m.get(0).unwrap();
        let tag = m[1].to_ascii_lowercase();
        let open_at = pos + whole.start();
        let body_start = pos + whole.end();
        let close = format!("</{tag}>");
        let Some(rel_end) = lower[body_start..].find(&close) else {
            errors.push(ParseError {
                offset: open_at,
                kind: ParseErrorKind::UnclosedTag(tag),
            });
            break;
        };
        let body_end = body_start + rel_end;
        let body = &text[body_start..body_end];
        pos = body_end + close.len();
        let err = |kind| ParseError {
            offset: body_start,
            kind,
        };
        let kind = match tag.as_str() {
            "think" => {
                let (block, errs) = parse_think(body, body_start);
                errors.extend(errs);
                StepKind::Think(block)
            }
            "tool_call" => match parse_tool_call(body) {
                Ok(tc) => StepKind::ToolCall(tc),
                Err(k) => {
                    errors.push(err(k));
                    continue;
                }
            },
            "answer" => match Answer::parse(body, task.answer_kind()) {
                Ok(a) => StepKind::Answer(a),
                Err(msg) => {
                    errors.push(err(ParseErrorKind::AnswerMismatch(msg)));
                    continue;
                }
            },
            _ => match parse_observation(body) {
                Some(o) => {
                    turn += 1;
                    StepKind::Observation(o)
                }
                None => {
                    errors.push(err(ParseErrorKind::MalformedObservation));
                    continue;
                }
            },
        };
        steps.push(Step { turn, kind });
    }
    (Trajectory { steps }, errors)
}

fn parse_observation(body: &str) -> Option<Observation> {
    let view_id = CURRENT_VIEW.captures(body)?[1].to_string();
    let region = REGION
        .captures(body)
        .and_then(|c| BOX_LITERAL.captures(&c[1]).and_then(|b| box_captures(&b)))
        .and_then(|v| NormBox::new(v[0], v[1], v[2], v[3]).ok());
    Some(Observation { view_id, region })
}

/// Parses a tool-call body. Bare identifiers inside the bbox array (as in the
/// published tool schema) are accepted as placeholders.
pub fn parse_tool_call(body: &str) -> Result<ToolCall, ParseErrorKind> {
    let quoted = BBOX_ARRAY.replace(body.trim(), |c: &regex::Captures<'_>| {
        let items: Vec<String> = c[2]
            .split(',')
            .map(|t| {
                let t = t.trim();
                if IDENT.is_match(t) {
                    format!("\"{t}\"")
                } else {
                    t.to_string()
                }
            })
            .collect();
        format!("{}{}{}", &c[1], items.join(", "), &c[3])
    });
    let v: serde_json::Value = serde_json::from_str(&quoted)
        .map_err(|e| ParseErrorKind::MalformedToolCall(e.to_string()))?;
    let malformed = |m: &str| ParseErrorKind::MalformedToolCall(m.to_string());
    let name = v
        .get("name")
        .and_then(|n| n.as_str())
        .ok_or_else(|| malformed("missing \"name\""))?;
    if name != ZOOM_TOOL {
        return Err(ParseErrorKind::UnknownTool(name.to_string()));
    }
    let args = v
        .get("arguments")
        .and_then(|a| a.as_object())
        .ok_or_else(|| malformed("missing \"arguments\" object"))?;
    let source = args
        .get("source_image_id")
        .and_then(|s| s.as_str())
        .ok_or_else(|| malformed("missing \"source_image_id\""))?;
    let raw = args
        .get("bbox")
        .and_then(|b| b.as_array())
        .ok_or_else(|| malformed("missing \"bbox\" array"))?;
    if raw.len() != 4 {
        return Err(malformed("bbox must have four coordinates"));
    }
    let mut coords = Vec::with_capacity(4);
    for c in raw {
        let coord = match c {
            serde_json::Value::Number(n) => {
                Coord::Value(n.as_i64().ok_or_else(|| malformed("bbox coordinates must be integers"))?)
            }
            serde_json::Value::String(s) if IDENT.is_match(s) => Coord::Placeholder(s.clone()),
            _ => return Err(malformed("bbox coordinates must be integers")),
        };
        coords.push(coord);
    }
    Ok(ToolCall {
        name: name.to_string(),
        source_image_id: source.to_string(),
        bbox: coords.try_into().expect("four coordinates"),
    })
}

fn parse_think(raw: &str, base: usize) -> (ThinkBlock, Vec<ParseError>) {
    let mut errors = Vec::new();
    let mut sections: Vec<Section> = Vec::new();
    let mut current = Section {
        kind: SectionKind::Preamble,
        header: None,
        body: String::new(),
        items: Vec::new(),
        objects: Vec::new(),
    };
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let line_at = base + offset;
        offset += line.len();
        let content = line.trim_end_matches(['\n', '\r']);
        if let Some(h) = HEADER.captures(content).filter(|h| !h[1].eq_ignore_ascii_case("x")) {
            let header = h[1].trim().to_string();
            let kind = match header.to_ascii_lowercase().as_str() {
                "plan" => SectionKind::Plan,
                "progress" | "track" => SectionKind::Progress,
                "final aggregation" => SectionKind::FinalAggregation,
                "observation" => SectionKind::ObservationNote,
                _ => SectionKind::Other,
            };
            let prev = std::mem::replace(
                &mut current,
                Section {
                    kind,
                    header: Some(header),
                    body: String::new(),
                    items: Vec::new(),
                    objects: Vec::new(),
                },
            );
            if prev.header.is_some() || !prev.body.trim().is_empty() {
                sections.push(prev);
            }
            let rest = h.get(2).map_or("", |m| m.as_str());
            if !rest.is_empty() {
                current.body.push_str(rest);
                current.body.push('\n');
                scan_line(rest, &mut current, line_at, &mut errors);
            }
            continue;
        }
        current.body.push_str(line);
        scan_line(content, &mut current, line_at, &mut errors);
    }
    if current.header.is_some() || !current.body.trim().is_empty() {
        sections.push(current);
    }
    for s in &mut sections {
        if matches!(s.kind, SectionKind::Plan | SectionKind::Progress) {
            s.items = parse_checklist(&s.body);
        }
    }
    (
        ThinkBlock {
            raw: raw.to_string(),
            sections,
        },
        errors,
    )
}

fn scan_line(line: &str, section: &mut Section, offset: usize, errors: &mut Vec<ParseError>) {
    let Some(c) = OBJ_LINE.captures(line) else {
        return;
    };
    let rejected = c[1].eq_ignore_ascii_case("rejected");
    let label = c
        .get(2)
        .map(|m| m.as_str().trim().to_string())
        .filter(|l| !l.is_empty());
    let value = &c[3];
    let Some(b) = BOX_LITERAL
        .captures(value)
        .filter(|b| b.get(0).unwrap().start() == 0)
    else {
        errors.push(ParseError {
            offset,
            kind: ParseErrorKind::NonNumericObj(line.trim().to_string()),
        });
        return;
    };
    let Some(v) = box_captures(&b) else {
        errors.push(ParseError {
            offset,
            kind: ParseErrorKind::NonNumericObj(line.trim().to_string()),
        });
        return;
    };
    match NormBox::new(v[0], v[1], v[2], v[3]) {
        Ok(bbox) => section.objects.push(ObjLine {
            label,
            bbox,
            rejected,
        }),
        Err(_) => errors.push(ParseError {
            offset,
            kind: ParseErrorKind::InvalidObjBox(line.trim().to_string()),
        }),
    }
}

fn indent_width(s: &str) -> usize {
    s.chars().map(|c| if c == '\t' { 4 } else { 1 }).sum()
}

fn parse_checklist(body: &str) -> Vec<ChecklistItem> {
    // (indent, item) stack; items close into their parent when a line with
    // smaller or equal indent arrives.
    let mut roots: Vec<ChecklistItem> = Vec::new();
    let mut stack: Vec<(usize, ChecklistItem)> = Vec::new();
    fn close_to(stack: &mut Vec<(usize, ChecklistItem)>, roots: &mut Vec<ChecklistItem>, indent: usize) {
        while let Some((i, _)) = stack.last() {
            if *i < indent {
                break;
            }
            let (_, item) = stack.pop().unwrap();
            match stack.last_mut() {
                Some((_, parent)) => parent.children.push(item),
                None => roots.push(item),
            }
        }
    }
    for line in body.lines() {
        let Some(c) = CHECK_ITEM.captures(line) else {
            continue;
        };
        let indent = indent_width(&c[1]);
        let done = c[2].eq_ignore_ascii_case("x");
        let label = c[3].to_string();
        let roi = BOX_LITERAL
            .captures(&label)
            .and_then(|b| box_captures(&b))
            .and_then(|v| NormBox::new(v[0], v[1], v[2], v[3]).ok());
        let item = ChecklistItem {
            id: item_id(&label),
            label,
            roi,
            done,
            children: Vec::new(),
        };
        close_to(&mut stack, &mut roots, indent);
        stack.push((indent, item));
    }
    close_to(&mut stack, &mut roots, 0);
    roots
}

/// Item id: the text before the first `:`, or the label without its box.
fn item_id(label: &str) -> String {
    if let Some((head, _)) = label.split_once(':') {
        let head = head.trim();
        if !head.is_empty() && !head.contains('[') {
            return head.to_string();
        }
    }
    let stripped = BOX_LITERAL.replace_all(label, "");
    stripped
        .trim()
        .trim_end_matches([',', '.', '-', ':'])
        .trim()
        .to_string()
}

/// Canonical text form. `parse(serialize(t))` reproduces `t`.
pub fn serialize(t: &Trajectory) -> String {
    let parts: Vec<String> = t.steps.iter().map(|s| serialize_step(&s.kind)).collect();
    parts.join("\n")
}

pub fn serialize_step(kind: &StepKind) -> String {
    match kind {
        StepKind::Think(tb) => format!("<think>{}</think>", tb.raw),
        StepKind::ToolCall(tc) => format!("<tool_call>\n{}\n</tool_call>", tc.to_json()),
        StepKind::Observation(o) => format!("<observation>\n{}\n</observation>", o.body()),
        StepKind::Answer(a) => format!("<answer>{}</answer>", a.payload),
    }
}

impl Trajectory {
    /// Builds a trajectory from step kinds, numbering turns at observations.
    pub fn from_kinds(kinds: impl IntoIterator<Item = StepKind>) -> Self {
        let mut turn = 0;
        let steps = kinds
            .into_iter()
            .map(|kind| {
                if matches!(kind, StepKind::Observation(_)) {
                    turn += 1;
                }
                Step { turn, kind }
            })
            .collect();
        Self { steps }
    }

    pub fn answer(&self) -> Option<&Answer> {
        self.steps.iter().rev().find_map(|s| match &s.kind {
            StepKind::Answer(a) => Some(a),
            _ => None,
        })
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = (usize, &ToolCall)> {
        self.steps.iter().filter_map(|s| match &s.kind {
            StepKind::ToolCall(tc) => Some((s.turn, tc)),
            _ => None,
        })
    }

    pub fn think_blocks(&self) -> impl Iterator<Item = (usize, &ThinkBlock)> {
        self.steps.iter().filter_map(|s| match &s.kind {
            StepKind::Think(tb) => Some((s.turn, tb)),
            _ => None,
        })
    }

    pub fn turn_count(&self) -> usize {
        self.steps.last().map_or(0, |s| s.turn + 1)
    }
}

/// Id of the global view, injected before the first turn.
pub const GLOBAL_VIEW_ID: &str = "v0";

/// Follows zooms and observations to know each view's global region.
#[derive(Debug, Clone)]
pub struct ViewTracker {
    views: std::collections::HashMap<String, (RelRect, usize)>,
    current: String,
    pending: Option<(RelRect, usize)>,
}

impl Default for ViewTracker {
    fn default() -> Self {
        let mut views = std::collections::HashMap::new();
        views.insert(GLOBAL_VIEW_ID.to_string(), (RelRect::FULL, 0));
        Self {
            views,
            current: GLOBAL_VIEW_ID.to_string(),
            pending: None,
        }
    }
}

impl ViewTracker {
    pub fn observe(&mut self, step: &Step) {
        match &step.kind {
            StepKind::ToolCall(tc) => {
                self.pending = match (self.views.get(&tc.source_image_id), tc.norm_bbox()) {
                    (Some((src, d)), Some(b)) => Some((src.compose(&b), d + 1)),
                    _ => None,
                };
            }
            StepKind::Observation(o) => {
                let region = self
                    .pending
                    .take()
                    .or_else(|| o.region.map(|r| (r.as_rel_rect(), 1)));
                if let Some(r) = region {
                    self.views.insert(o.view_id.clone(), r);
                }
                self.current = o.view_id.clone();
            }
            _ => {}
        }
    }

    /// Global region of the most recent zoom call, if it was resolvable.
    pub fn pending_zoom(&self) -> Option<RelRect> {
        self.pending.map(|p| p.0)
    }

    pub fn current_id(&self) -> &str {
        &self.current
    }

    pub fn current_region(&self) -> RelRect {
        self.region(&self.current).unwrap_or(RelRect::FULL)
    }

    pub fn current_depth(&self) -> usize {
        self.views.get(&self.current).map_or(0, |v| v.1)
    }

    pub fn region(&self, view_id: &str) -> Option<RelRect> {
        self.views.get(view_id).map(|v| v.0)
    }
}

/// Where an Obj line was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjContext {
    /// Per-crop summary; coordinates are relative to the current view.
    Local,
    /// `[FINAL AGGREGATION]`; coordinates are global.
    Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjRecord {
    pub turn: usize,
    pub context: ObjContext,
    pub line: ObjLine,
}

/// Obj lines in document order, tagged by section.
pub fn extract_obj_boxes(t: &Trajectory) -> Vec<ObjRecord> {
    let mut out = Vec::new();
    for (turn, tb) in t.think_blocks() {
        for s in &tb.sections {
            let context = if s.kind == SectionKind::FinalAggregation {
                ObjContext::Aggregation
            } else {
                ObjContext::Local
            };
            out.extend(s.objects.iter().map(|line| ObjRecord {
                turn,
                context,
                line: line.clone(),
            }));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FormatIssue {
    Unparseable { errors: Vec<ParseError> },
    NoAnswer,
    AnswerNotLast,
    MultipleAnswers,
    AnswerKindMismatch { expected: AnswerKind, found: AnswerKind },
    BothActionsInTurn { turn: usize },
    MultipleToolCallsInTurn { turn: usize },
    NoActionInTurn { turn: usize },
    ToolCallWithoutThink { turn: usize },
    BboxPlaceholder { turn: usize },
    BboxOutOfRange { turn: usize, bbox: [i64; 4] },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub r_fmt: u8,
    pub issues: Vec<FormatIssue>,
}

impl FormatVerdict {
    pub fn is_valid(&self) -> bool {
        self.r_fmt == 1
    }

    fn from_issues(issues: Vec<FormatIssue>) -> Self {
        Self {
            r_fmt: u8::from(issues.is_empty()),
            issues,
        }
    }
}

/// The binary format judgment together with every violated rule.
pub fn validate_format(t: &Trajectory, task: TaskKind) -> FormatVerdict {
    let mut issues = Vec::new();
    let answers: Vec<(usize, &Answer)> = t
        .steps
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match &s.kind {
            StepKind::Answer(a) => Some((i, a)),
            _ => None,
        })
        .collect();
    match answers.as_slice() {
        [] => issues.push(FormatIssue::NoAnswer),
        [.., (last, a)] => {
            if answers.len() > 1 {
                issues.push(FormatIssue::MultipleAnswers);
            }
            if *last + 1 != t.steps.len() {
                issues.push(FormatIssue::AnswerNotLast);
            }
            if a.kind != task.answer_kind() {
                issues.push(FormatIssue::AnswerKindMismatch {
                    expected: task.answer_kind(),
                    found: a.kind,
                });
            }
        }
    }
    for turn in 0..t.turn_count() {
        let steps: Vec<&Step> = t.steps.iter().filter(|s| s.turn == turn).collect();
        let tools = steps
            .iter()
            .filter(|s| matches!(s.kind, StepKind::ToolCall(_)))
            .count();
        let answered = steps.iter().any(|s| matches!(s.kind, StepKind::Answer(_)));
        if tools > 0 && answered {
            issues.push(FormatIssue::BothActionsInTurn { turn });
        }
        if tools > 1 {
            issues.push(FormatIssue::MultipleToolCallsInTurn { turn });
        }
        if tools == 0 && !answered {
            issues.push(FormatIssue::NoActionInTurn { turn });
        }
        let mut thought = false;
        for s in &steps {
            match &s.kind {
                StepKind::Think(_) => thought = true,
                StepKind::ToolCall(tc) => {
                    if !thought {
                        issues.push(FormatIssue::ToolCallWithoutThink { turn });
                    }
                    match tc.raw_bbox() {
                        None => issues.push(FormatIssue::BboxPlaceholder { turn }),
                        Some(b) if NormBox::new(b[0], b[1], b[2], b[3]).is_err() => {
                            issues.push(FormatIssue::BboxOutOfRange { turn, bbox: b })
                        }
                        Some(_) => {}
                    }
                }
                _ => {}
            }
        }
    }
    FormatVerdict::from_issues(issues)
}

/// Parses then validates; a parse failure yields `r_fmt = 0`.
pub fn validate_text(text: &str, task: TaskKind, opts: ParseOptions) -> FormatVerdict {
    let (t, errors) = parse_partial(text, task, opts);
    if !errors.is_empty() {
        return FormatVerdict::from_issues(vec![FormatIssue::Unparseable { errors }]);
    }
    validate_format(&t, task)
}
