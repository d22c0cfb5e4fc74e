//! System prompt templates shipped with the crate.

use crate::task::TaskKind;

pub const SYSTEM: &str = include_str!("../../assets/prompts/system.txt");

/// Task SOP appended to the system prompt.
pub fn task_prompt(task: TaskKind) -> &'static str {
    match task {
        TaskKind::GlobalCounting => include_str!("../../assets/prompts/global_counting.txt"),
        TaskKind::RegionCounting => include_str!("../../assets/prompts/region_counting.txt"),
        TaskKind::ObjectCounting => include_str!("../../assets/prompts/object_counting.txt"),
        TaskKind::Grounding => include_str!("../../assets/prompts/grounding.txt"),
        TaskKind::Classification => include_str!("../../assets/prompts/classification.txt"),
        TaskKind::SpatialRelation => include_str!("../../assets/prompts/spatial_relation.txt"),
        TaskKind::Color => include_str!("../../assets/prompts/color.txt"),
        TaskKind::RoutePlanning => include_str!("../../assets/prompts/route_planning.txt"),
    }
}

pub fn system_prompt(task: TaskKind) -> String {
    format!("{}\n\n{}", SYSTEM.trim_end(), task_prompt(task).trim_end())
}
