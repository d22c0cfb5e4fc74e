//! HTTP/JSON front end for the episode runtime, scorer and corpus filter.
//!
//! Every route takes and returns the types in `geoscope_core::api`. Errors
//! come back as `ErrorBody` with a 4xx status for bad input and 502 when
//! a remote model backend could not be reached.

mod error;

pub use error::{ApiError, ApiJson};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::{Json, Router};
use geoscope_core::agent::{run_episode, run_group, score_episode, Backend};
use geoscope_core::api::{
    encode_b64, encode_png, episode_overlay, CorpusExportResponse, CorpusRequest, CorpusValidateResponse,
    GroupMember, GroupRunRequest, GroupRunResponse, GroupScoreRequest, GroupScoreResponse, HealthResponse,
    ParseResponse, RunRequest, RunResponse, SceneResponse, ScoreRequest, ScoreResponse, TextRequest,
    ValidateResponse,
};
use geoscope_core::corpus::{
    export_sft, filter_corpus, read_annotations, read_jsonl, validate_structure, CorpusItem, QcOptions,
    DEFAULT_LEAK_IOU,
};
use geoscope_core::imagetool::{gen_scene, GenSpec, Scene};
use geoscope_core::plan::{evaluate_qplan, DEFAULT_MAX_ITEMS};
use geoscope_core::reward::group_advantages;
use geoscope_core::trajectory::{parse, parse_partial, serialize, validate_format, validate_text, ParseOptions};
use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// Large rasters travel inline as base64.
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/trajectory/parse", post(parse_trajectory))
        .route("/v1/trajectory/validate", post(validate_trajectory))
        .route("/v1/scenes/generate", post(generate_scene))
        .route("/v1/episodes/run", post(run))
        .route("/v1/episodes/score", post(score))
        .route("/v1/groups/run", post(group_run))
        .route("/v1/groups/score", post(group_score))
        .route("/v1/corpus/validate", post(corpus_validate))
        .route("/v1/corpus/export", post(corpus_export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` (port 0 picks a free one) and serves in the background.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "listening");
    Ok((local, tokio::spawn(serve(listener))))
}

/// An ephemeral server on the loopback interface.
pub async fn spawn_loopback() -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    spawn(SocketAddr::from(([127, 0, 0, 1], 0))).await
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn parse_trajectory(ApiJson(req): ApiJson<TextRequest>) -> ApiResult<ParseResponse> {
    let (trajectory, errors) = parse_partial(&req.text, req.task, ParseOptions::default());
    let canonical = errors.is_empty().then(|| serialize(&trajectory));
    Ok(Json(ParseResponse {
        trajectory,
        errors: errors.iter().map(|e| e.to_string()).collect(),
        canonical,
    }))
}

async fn validate_trajectory(ApiJson(req): ApiJson<TextRequest>) -> ApiResult<ValidateResponse> {
    Ok(Json(match parse(&req.text, req.task) {
        Ok(t) => ValidateResponse {
            format: validate_format(&t, req.task),
            structure: validate_structure(&t, req.task),
            plan: Some(evaluate_qplan(&t, req.task, DEFAULT_MAX_ITEMS)),
        },
        Err(_) => ValidateResponse {
            format: validate_text(&req.text, req.task, ParseOptions::default()),
            structure: Vec::new(),
            plan: None,
        },
    }))
}

async fn generate_scene(ApiJson(spec): ApiJson<GenSpec>) -> ApiResult<SceneResponse> {
    let scene = gen_scene(&spec).map_err(|e| ApiError::unprocessable("invalid_scene", e.to_string()))?;
    Ok(Json(SceneResponse { scene }))
}

fn load_scene(req: &RunRequest) -> Result<Arc<Scene>, ApiError> {
    req.scene
        .load()
        .map(Arc::new)
        .map_err(|e| ApiError::unprocessable("invalid_scene", e.to_string()))
}

async fn run(ApiJson(req): ApiJson<RunRequest>) -> ApiResult<RunResponse> {
    let scene = load_scene(&req)?;
    let cfg = req.effective_config();
    let gt = req.resolve_ground_truth(&scene, &cfg);
    let backend = req.backend.build(0).map_err(geoscope_core::agent::AgentError::from)?;
    let record = run_episode(scene.clone(), &req.question, backend.as_ref(), &cfg, gt.as_ref()).await?;
    let overlay_png = if req.overlay {
        let png = encode_png(&episode_overlay(&scene, &record))
            .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "render", e))?;
        Some(encode_b64(&png))
    } else {
        None
    };
    Ok(Json(RunResponse {
        record,
        ground_truth: gt,
        overlay_png,
    }))
}

async fn score(ApiJson(req): ApiJson<ScoreRequest>) -> ApiResult<ScoreResponse> {
    let breakdown = score_episode(&req.record, &req.ground_truth)?;
    let matches_stored = req.record.breakdown.as_ref().map(|b| *b == breakdown);
    Ok(Json(ScoreResponse {
        breakdown,
        matches_stored,
    }))
}

async fn group_run(ApiJson(req): ApiJson<GroupRunRequest>) -> ApiResult<GroupRunResponse> {
    let scene = load_scene(&req.run)?;
    let cfg = req.run.effective_config();
    let gt = req
        .run
        .resolve_ground_truth(&scene, &cfg)
        .ok_or_else(|| ApiError::unprocessable("no_ground_truth", "group scoring needs a ground truth"))?;
    let backends = (0..req.group)
        .map(|i| req.run.backend.build(i))
        .collect::<Result<Vec<Arc<dyn Backend>>, _>>()
        .map_err(geoscope_core::agent::AgentError::from)?;
    let g = run_group(scene, &req.run.question, |i| backends[i].clone(), req.group, &cfg, &gt).await?;
    let members = g
        .records
        .into_iter()
        .map(|r| match r {
            Ok(rec) => GroupMember {
                record: Some(rec),
                error: None,
            },
            Err(e) => GroupMember {
                record: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(Json(GroupRunResponse {
        members,
        scores: g.scores,
        ground_truth: gt,
    }))
}

async fn group_score(ApiJson(req): ApiJson<GroupScoreRequest>) -> ApiResult<GroupScoreResponse> {
    let breakdowns = req
        .records
        .iter()
        .map(|r| score_episode(r, &req.ground_truth))
        .collect::<Result<Vec<_>, _>>()?;
    let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let scores = group_advantages(&rewards).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(GroupScoreResponse { breakdowns, scores }))
}

struct CorpusInput {
    items: Vec<CorpusItem>,
    annotations: Option<HashMap<String, geoscope_core::corpus::OracleAnnotation>>,
    opts: QcOptions,
}

fn corpus_input(req: &CorpusRequest) -> Result<CorpusInput, ApiError> {
    let items = read_jsonl(req.records.as_bytes())?;
    let annotations = match &req.annotations {
        Some(a) => Some(read_annotations(a.as_bytes())?),
        None => None,
    };
    let leak_iou = req.leak_iou.unwrap_or(DEFAULT_LEAK_IOU);
    if !(0.0..=1.0).contains(&leak_iou) {
        return Err(ApiError::bad_request(format!("leak_iou must lie in [0, 1], got {leak_iou}")));
    }
    Ok(CorpusInput {
        items,
        annotations,
        opts: QcOptions {
            leak_iou,
            blocklist: req.blocklist.iter().cloned().collect(),
        },
    })
}

async fn corpus_validate(ApiJson(req): ApiJson<CorpusRequest>) -> ApiResult<CorpusValidateResponse> {
    let input = corpus_input(&req)?;
    let (_, report) = filter_corpus(input.items, &input.annotations.unwrap_or_default(), &input.opts);
    Ok(Json(CorpusValidateResponse {
        text: report.text(),
        report,
    }))
}

async fn corpus_export(ApiJson(req): ApiJson<CorpusRequest>) -> ApiResult<CorpusExportResponse> {
    let input = corpus_input(&req)?;
    let (records, report) = match input.annotations {
        Some(ann) => {
            let (kept, report) = filter_corpus(input.items, &ann, &input.opts);
            (kept, Some(report))
        }
        None => {
            let records = input
                .items
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ApiError::unprocessable("malformed_corpus", e))?;
            (records, None)
        }
    };
    let sft = export_sft(&records).map_err(|e| ApiError::unprocessable("export", e))?;
    Ok(Json(CorpusExportResponse {
        sft,
        exported: records.len(),
        report,
    }))
}
