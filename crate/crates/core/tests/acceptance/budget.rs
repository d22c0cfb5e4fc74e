use geoscope_core::agent::{run_episode, EpisodeConfig, Outcome, ReplayBackend};
use geoscope_core::imagetool::{
    Budget, Scene, SyntheticSpec, ToolError, ZoomTool, DEFAULT_BACKGROUND, DEFAULT_MAX_DEPTH, DEFAULT_MAX_PIXELS,
    DEFAULT_MAX_TOOL_CALLS,
};
use std::sync::Arc;

fn scene() -> Arc<Scene> {
    Arc::new(
        Scene::synthetic(SyntheticSpec {
            width: 4000,
            height: 4000,
            background: DEFAULT_BACKGROUND,
            objects: Vec::new(),
        })
        .unwrap(),
    )
}

fn zoom_turn(src: &str, bbox: [i64; 4]) -> String {
    format!(
        r#"<think>Look closer.</think><tool_call>{{"name": "zoom_in", "arguments": {{"source_image_id": "{src}", "bbox": [{}, {}, {}, {}]}}}}</tool_call>"#,
        bbox[0], bbox[1], bbox[2], bbox[3]
    )
}

pub fn run() -> Result<String, String> {
    ensure!(DEFAULT_MAX_TOOL_CALLS == 17, "default budget {DEFAULT_MAX_TOOL_CALLS}");
    ensure!(DEFAULT_MAX_DEPTH == 2, "default depth {DEFAULT_MAX_DEPTH}");
    let rt = tokio::runtime::Builder::new_current_thread().build().map_err(|e| e.to_string())?;

    // Eighteen distinct zooms of the global view.
    let turns: Vec<String> = (0..18).map(|i| zoom_turn("v0", [i * 10, 0, i * 10 + 500, 500])).collect();
    let cfg = EpisodeConfig::default();
    let r = rt
        .block_on(run_episode(scene(), "How many vehicles?", &ReplayBackend::new(turns), &cfg, None))
        .map_err(|e| e.to_string())?;
    ensure!(r.outcome == Outcome::BudgetExhausted, "18th call ended as {:?}", r.outcome);
    ensure!(r.budget.used_calls == 17, "{} calls executed", r.budget.used_calls);
    ensure!(r.views.len() == 18, "{} views opened", r.views.len());

    let turns = vec![
        zoom_turn("v0", [0, 0, 500, 500]),
        zoom_turn("v1", [0, 0, 500, 500]),
        zoom_turn("v2", [0, 0, 500, 500]),
    ];
    let r = rt
        .block_on(run_episode(scene(), "How many vehicles?", &ReplayBackend::new(turns), &cfg, None))
        .map_err(|e| e.to_string())?;
    ensure!(r.outcome == Outcome::DepthExceeded, "third-layer zoom ended as {:?}", r.outcome);
    ensure!(r.budget.max_depth_reached == 2, "depth reached {}", r.budget.max_depth_reached);
    ensure!(r.views.len() == 3, "{} views opened", r.views.len());

    // The tool itself, without the runtime around it.
    let mut tool = ZoomTool::open(scene(), Budget::default(), DEFAULT_MAX_PIXELS).map_err(|e| e.to_string())?;
    tool.zoom_in("v0", [0, 0, 500, 500]).map_err(|e| e.to_string())?;
    tool.zoom_in("v1", [0, 0, 500, 500]).map_err(|e| e.to_string())?;
    let err = tool.zoom_in("v2", [0, 0, 500, 500]).map(|_| ()).unwrap_err();
    ensure!(matches!(err, ToolError::DepthExceeded { depth: 3, max: 2 }), "depth-3 zoom gave {err:?}");
    let mut tool = ZoomTool::open(scene(), Budget::default(), DEFAULT_MAX_PIXELS).map_err(|e| e.to_string())?;
    for _ in 0..17 {
        tool.zoom_in("v0", [0, 0, 500, 500]).map_err(|e| e.to_string())?;
    }
    let err = tool.zoom_in("v0", [0, 0, 500, 500]).map(|_| ()).unwrap_err();
    ensure!(matches!(err, ToolError::BudgetExhausted { max: 17 }), "18th call gave {err:?}");

    Ok("18th call ends the episode as budget_exhausted after 17 crops; a third layer is refused as depth_exceeded".into())
}
