//! The `zoom_in` tool: scenes, rendered views, and the per-episode budget.
//!
//! Every crop is re-extracted from the full-resolution source, never by
//! magnifying a previously rendered view, and then downsampled so that no
//! view exceeds the pixel cap.

mod generate;
pub mod overlay;
mod scene;

pub use generate::{gen_scene, GenSpec};
pub use scene::{color_label, label_color, LabeledRect, Scene, SceneSource, SyntheticSpec, DEFAULT_BACKGROUND, PALETTE};

use crate::geometry::{crop_frame, FrameChain, GeometryError, NormBox, ZoomLevel};
pub use crate::trajectory::GLOBAL_VIEW_ID;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_MAX_PIXELS: u64 = 1_003_520;
pub const DEFAULT_MAX_TOOL_CALLS: usize = 17;
pub const DEFAULT_MAX_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown view id `{0}`; copy the id from a `Current View:` line")]
    UnknownView(String),
    #[error("invalid bbox {0:?}: coordinates must satisfy 0 <= x1 < x2 <= 1000, 0 <= y1 < y2 <= 1000")]
    InvalidBbox([i64; 4]),
    #[error("tool budget exhausted ({max} calls)")]
    BudgetExhausted { max: usize },
    #[error("zoom depth {depth} exceeds the cap of {max} layers")]
    DepthExceeded { depth: usize, max: usize },
    #[error("scene canvas has zero size")]
    EmptyCanvas,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("cannot read scene: {0}")]
    Unreadable(String),
    #[error("could not place object {placed} of {requested} without overlap")]
    InfeasiblePacking { placed: usize, requested: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl ToolError {
    /// Outcomes that end an episode instead of being reported back.
    pub fn is_terminal(&self) -> bool {
        matches!(self, ToolError::BudgetExhausted { .. } | ToolError::DepthExceeded { .. })
    }
}

/// Tool-call budget; counters only grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_tool_calls: usize,
    pub max_depth: usize,
    pub used_calls: usize,
    pub max_depth_reached: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_TOOL_CALLS, DEFAULT_MAX_DEPTH)
    }
}

impl Budget {
    pub fn new(max_tool_calls: usize, max_depth: usize) -> Self {
        Self {
            max_tool_calls,
            max_depth,
            used_calls: 0,
            max_depth_reached: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.max_tool_calls - self.used_calls
    }
}

/// Largest size with the same aspect ratio and at most `max_pixels` pixels.
/// Never upscales.
pub fn view_size(width: u32, height: u32, max_pixels: u64) -> (u32, u32) {
    let total = width as u64 * height as u64;
    if total <= max_pixels {
        return (width, height);
    }
    let s = (max_pixels as f64 / total as f64).sqrt();
    let w = ((width as f64 * s).floor() as u32).max(1);
    let h = ((height as f64 * s).floor() as u32).max(1);
    (w, h)
}

#[derive(Debug, Clone)]
pub struct View {
    pub view_id: String,
    pub chain: FrameChain,
    pub level: ZoomLevel,
    pub pixels: Arc<RgbImage>,
}

/// Serializable view metadata (no pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub view_id: String,
    pub chain: FrameChain,
    pub level: ZoomLevel,
    pub width: u32,
    pub height: u32,
    pub global_region: NormBox,
}

impl View {
    pub fn info(&self) -> ViewInfo {
        ViewInfo {
            view_id: self.view_id.clone(),
            chain: self.chain.clone(),
            level: self.level,
            width: self.pixels.width(),
            height: self.pixels.height(),
            global_region: self.chain.global_region(),
        }
    }

    pub fn depth(&self) -> usize {
        self.chain.depth()
    }
}

/// Per-episode view registry bound to one shared scene.
#[derive(Debug, Clone)]
pub struct ZoomTool {
    scene: Arc<Scene>,
    views: Vec<View>,
    budget: Budget,
    max_pixels: u64,
}

impl ZoomTool {
    /// Opens the scene and renders the global view `v0`.
    pub fn open(scene: Arc<Scene>, budget: Budget, max_pixels: u64) -> Result<Self, ToolError> {
        let chain = FrameChain::global(scene.width, scene.height, GLOBAL_VIEW_ID)?;
        let frame = chain.image_region();
        let (w, h) = view_size(frame.width, frame.height, max_pixels);
        let pixels = Arc::new(scene.render(&frame, w, h));
        Ok(Self {
            views: vec![View {
                view_id: GLOBAL_VIEW_ID.into(),
                chain,
                level: ZoomLevel::L0,
                pixels,
            }],
            scene,
            budget,
            max_pixels,
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn global(&self) -> &View {
        &self.views[0]
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, id: &str) -> Option<&View> {
        self.views.iter().find(|v| v.view_id == id)
    }

    pub fn chains(&self) -> HashMap<String, FrameChain> {
        self.views.iter().map(|v| (v.view_id.clone(), v.chain.clone())).collect()
    }

    pub fn snapshot(&self) -> Vec<ViewInfo> {
        self.views.iter().map(View::info).collect()
    }

    /// Crops `bbox` (relative to `source_id`) out of the original raster.
    /// Refused calls leave the budget untouched.
    pub fn zoom_in(&mut self, source_id: &str, bbox: [i64; 4]) -> Result<&View, ToolError> {
        let source = self
            .view(source_id)
            .ok_or_else(|| ToolError::UnknownView(source_id.to_string()))?;
        let norm = NormBox::new(bbox[0], bbox[1], bbox[2], bbox[3]).map_err(|_| ToolError::InvalidBbox(bbox))?;
        if norm.is_degenerate() {
            return Err(ToolError::InvalidBbox(bbox));
        }
        if self.budget.used_calls >= self.budget.max_tool_calls {
            return Err(ToolError::BudgetExhausted {
                max: self.budget.max_tool_calls,
            });
        }
        let depth = source.depth() + 1;
        if depth > self.budget.max_depth {
            return Err(ToolError::DepthExceeded {
                depth,
                max: self.budget.max_depth,
            });
        }
        let inner = source.chain.innermost();
        let frame = crop_frame(source.chain.view_id(), inner.width, inner.height, &norm)?;
        let view_id = format!("v{}", self.views.len());
        let chain = source.chain.push(frame, view_id.clone())?;
        let level = source.level.deeper();
        let region = chain.image_region();
        let (w, h) = view_size(region.width, region.height, self.max_pixels);
        let pixels = Arc::new(self.scene.render(&region, w, h));
        self.budget.used_calls += 1;
        self.budget.max_depth_reached = self.budget.max_depth_reached.max(depth);
        self.views.push(View {
            view_id,
            chain,
            level,
            pixels,
        });
        Ok(self.views.last().expect("just pushed"))
    }
}
