//! Task kinds and the standard operating procedure each one follows.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The task a trajectory solves. Each kind maps to one prompt SOP with its
/// own answer type, zoom-layer cap and planning requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GlobalCounting,
    RegionCounting,
    ObjectCounting,
    Grounding,
    Classification,
    SpatialRelation,
    Color,
    RoutePlanning,
}

/// Type of the final answer payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Count,
    Grounding,
    Choice,
    Text,
    Route,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::GlobalCounting,
        TaskKind::RegionCounting,
        TaskKind::ObjectCounting,
        TaskKind::Grounding,
        TaskKind::Classification,
        TaskKind::SpatialRelation,
        TaskKind::Color,
        TaskKind::RoutePlanning,
    ];

    pub fn answer_kind(self) -> AnswerKind {
        match self {
            TaskKind::GlobalCounting | TaskKind::RegionCounting | TaskKind::ObjectCounting => {
                AnswerKind::Count
            }
            TaskKind::Grounding => AnswerKind::Grounding,
            TaskKind::Classification | TaskKind::Color => AnswerKind::Choice,
            TaskKind::SpatialRelation => AnswerKind::Text,
            TaskKind::RoutePlanning => AnswerKind::Route,
        }
    }

    /// Maximum zoom depth below the global view allowed by the SOP.
    pub fn max_zoom_layers(self) -> usize {
        match self {
            TaskKind::GlobalCounting => 0,
            TaskKind::RegionCounting | TaskKind::Classification | TaskKind::Color => 1,
            TaskKind::ObjectCounting
            | TaskKind::Grounding
            | TaskKind::SpatialRelation
            | TaskKind::RoutePlanning => 2,
        }
    }

    /// Whether the SOP demands a `[PLAN]` checklist before any zoom.
    pub fn plan_required(self) -> bool {
        matches!(self, TaskKind::RegionCounting | TaskKind::ObjectCounting)
    }

    /// Whether the SOP forbids plans and progress sections altogether.
    pub fn plan_forbidden(self) -> bool {
        matches!(self, TaskKind::GlobalCounting)
    }

    /// Counting and grounding answers can be scored automatically.
    pub fn is_verifiable(self) -> bool {
        matches!(self.answer_kind(), AnswerKind::Count | AnswerKind::Grounding)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::GlobalCounting => "global_counting",
            TaskKind::RegionCounting => "region_counting",
            TaskKind::ObjectCounting => "object_counting",
            TaskKind::Grounding => "grounding",
            TaskKind::Classification => "classification",
            TaskKind::SpatialRelation => "spatial_relation",
            TaskKind::Color => "color",
            TaskKind::RoutePlanning => "route_planning",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "count" | "counting" => "region_counting",
            "ground" => "grounding",
            "choice" => "classification",
            "route" => "route_planning",
            "spatial" => "spatial_relation",
            other => other,
        };
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == alias)
            .ok_or_else(|| format!("unknown task kind `{s}`"))
    }
}

impl fmt::Display for AnswerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AnswerKind::Count => "count",
            AnswerKind::Grounding => "grounding",
            AnswerKind::Choice => "choice",
            AnswerKind::Text => "text",
            AnswerKind::Route => "route",
        };
        f.write_str(s)
    }
}
