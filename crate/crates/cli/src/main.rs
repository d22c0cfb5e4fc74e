//! `geoscope`: run, replay and score episodes, filter corpora, generate
//! scenes. Talks to a geoscope service; without `--server` it starts one on
//! the loopback interface for the duration of the command.

mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{prepare_out_dir, remote_config, BackendChoice, FileConfig, DEFAULT_OUT};
use geoscope_client::Client;
use geoscope_core::agent::{EpisodeConfig, EpisodeRecord, ReplayBackend};
use geoscope_core::api::{
    decode_b64, encode_b64, encode_png, BackendSpec, CorpusRequest, GroupRunRequest, GroupScoreRequest, RunRequest,
    SceneInput, ScoreRequest,
};
use geoscope_core::imagetool::{view_size, GenSpec, Scene, SyntheticSpec, DEFAULT_MAX_PIXELS};
use geoscope_core::reward::GroundTruth;
use geoscope_core::task::TaskKind;
use serde::Serialize;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "geoscope", version, about = "Active perception episodes over very large images")]
struct Cli {
    /// Service root URL. When absent an embedded loopback server is used.
    #[arg(long, global = true, env = "GEOSCOPE_SERVER")]
    server: Option<String>,
    /// TOML settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode (or a group) and write record, breakdown and overlay.
    Run(RunArgs),
    /// Recompute reward breakdowns from stored records.
    Score(ScoreArgs),
    /// Run the quality gates over a JSONL corpus and print the report.
    Validate(CorpusArgs),
    /// Filter a corpus (when annotations are given) and export training samples.
    Export(ExportArgs),
    /// Write a seeded synthetic scene and its ground truth.
    GenScene(GenSceneArgs),
    /// Parse a transcript and print its structure.
    Parse(ParseArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene file: a synthetic scene JSON or a PNG/JPEG/TIFF raster.
    /// Without it a scene is generated from --seed.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    question: Option<String>,
    /// heuristic, replay:<file>, or remote.
    #[arg(long)]
    backend: Option<BackendChoice>,
    /// Maximum zoom calls per episode.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Reward weight overrides, e.g. `beta=0.3,w_iou=0.5`.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run N episodes and normalize their rewards as a group.
    #[arg(long)]
    group: Option<usize>,
    /// Target label; defaults to the one named in the question.
    #[arg(long)]
    label: Option<String>,
    /// Evidence merge threshold.
    #[arg(long, conflicts_with = "no_dedup")]
    dedup_iou: Option<f64>,
    /// Count every sighting without merging.
    #[arg(long)]
    no_dedup: bool,
    /// Ground truth JSON; derived from synthetic scenes when absent.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Chat completions URL for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Episode record files.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// Ground truth JSON; defaults to gt.json beside the first record.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Score the records as one group and print advantages.
    #[arg(long)]
    group: bool,
}

#[derive(Args)]
struct CorpusArgs {
    /// Trajectory corpus, one JSON record per line.
    corpus: PathBuf,
    /// Oracle annotations, one JSON object per line.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// File of record ids (one per line) that overlap evaluation sets.
    #[arg(long)]
    blocklist: Option<PathBuf>,
    /// IoU at which a quoted box counts as leaked.
    #[arg(long)]
    leak_iou: Option<f64>,
    /// Print the full report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Destination file; `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    min_objects: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    min_size: Option<u32>,
    #[arg(long)]
    max_size: Option<u32>,
    /// Comma-separated label names.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Objects forced across the vertical midline.
    #[arg(long)]
    straddle: Option<usize>,
    #[arg(long)]
    midline_clearance: Option<u32>,
    /// Restrict the written ground truth to one label.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the global view to scene.png.
    #[arg(long)]
    png: bool,
}

#[derive(Args)]
struct ParseArgs {
    file: PathBuf,
    #[arg(long)]
    task: Option<TaskKind>,
    /// Also run format, structure and plan checks.
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: SocketAddr,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("GEOSCOPE_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn dispatch(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Command::Serve(a) = &cli.cmd {
        return serve(a.addr).await;
    }
    let server = cli.server.clone().or_else(|| file.server.clone());
    let client = connect(server).await?;
    match cli.cmd {
        Command::Run(a) => run(&client, a, &file).await,
        Command::Score(a) => score(&client, a).await,
        Command::Validate(a) => validate(&client, a).await,
        Command::Export(a) => export(&client, a).await,
        Command::GenScene(a) => gen_scene(&client, a, &file).await,
        Command::Parse(a) => parse(&client, a, &file).await,
        Command::Serve(_) => unreachable!("handled above"),
    }
}

async fn serve(addr: SocketAddr) -> Result<ExitCode> {
    let (local, handle) = geoscope_server::spawn(addr).await.with_context(|| format!("cannot bind {addr}"))?;
    println!("listening on http://{local}");
    handle.await.context("server task panicked")??;
    Ok(ExitCode::SUCCESS)
}

/// A client for `server`, or for a fresh embedded server. The embedded
/// server lives on this process's runtime and stops with it.
async fn connect(server: Option<String>) -> Result<Client> {
    let url = match server {
        Some(u) => u,
        None => {
            let (addr, _) = geoscope_server::spawn_loopback()
                .await
                .context("cannot start embedded server")?;
            format!("http://{addr}")
        }
    };
    Ok(Client::new(&url)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_scene(path: &Path) -> Result<SceneInput> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let spec: SyntheticSpec = read_json(path)?;
        return Ok(SceneInput::Synthetic { spec });
    }
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(SceneInput::Raster { data: encode_b64(&bytes) })
}

fn default_question(task: TaskKind, label: Option<&str>) -> String {
    let noun = label.unwrap_or("object");
    match task {
        TaskKind::Grounding => format!("Where is the {noun}? Give its bounding box."),
        _ => format!("How many {noun}s are in the image?"),
    }
}

/// Everything `run` needs, after layering flags over the file.
struct Resolved {
    request: RunRequest,
    out: PathBuf,
    group: Option<usize>,
}

fn resolve_run(a: RunArgs, file: &FileConfig) -> Result<Resolved> {
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let scene = match a.scene.or_else(|| file.scene.clone()) {
        Some(p) => load_scene(&p)?,
        None => SceneInput::Generate {
            spec: GenSpec {
                seed,
                ..GenSpec::default()
            },
        },
    };
    let mut cfg = EpisodeConfig::default();
    cfg.task = a.task.or(file.task).unwrap_or(cfg.task);
    cfg.max_tool_calls = a.budget.or(file.budget).unwrap_or(cfg.max_tool_calls);
    cfg.max_depth = a.max_depth.or(file.max_depth).unwrap_or(cfg.max_depth);
    cfg.max_turns = a.max_turns.or(file.max_turns).unwrap_or(cfg.max_turns);
    cfg.weights = file.weights()?;
    if let Some(w) = &a.weights {
        cfg.weights = cfg.weights.with_overrides(w)?;
    }
    cfg.label = a.label.or_else(|| file.label.clone());
    cfg.dedup_iou = if a.no_dedup {
        None
    } else {
        Some(a.dedup_iou.or(file.dedup_iou).unwrap_or(geoscope_core::evidence::DEFAULT_DEDUP_IOU))
    };
    let question = match a.question.or_else(|| file.question.clone()) {
        Some(q) => q,
        None => default_question(cfg.task, cfg.label.as_deref().or(Some("vehicle"))),
    };
    let choice = match a.backend {
        Some(b) => b,
        None => match &file.backend {
            Some(s) => s.parse().map_err(|e: String| anyhow!(e))?,
            None => BackendChoice::Heuristic,
        },
    };
    let backend = match choice {
        BackendChoice::Heuristic => BackendSpec::Heuristic {
            seed: Some(seed),
            dedup_iou: cfg.dedup_iou,
        },
        BackendChoice::Replay(p) => {
            let script = ReplayBackend::load(&p).with_context(|| format!("cannot read replay script {}", p.display()))?;
            BackendSpec::Replay {
                turns: script.turns().to_vec(),
            }
        }
        BackendChoice::Remote => {
            let r = remote_config(a.endpoint, a.model, &file.remote);
            BackendSpec::Remote {
                endpoint: r.endpoint,
                model: r.model,
                token: r.token,
                retries: r.retries,
                timeout_ms: r.timeout.as_millis() as u64,
                backoff_ms: r.backoff.as_millis() as u64,
                temperature: r.temperature,
            }
        }
    };
    let ground_truth = match &a.gt {
        Some(p) => Some(read_json::<GroundTruth>(p)?),
        None => None,
    };
    Ok(Resolved {
        request: RunRequest {
            scene,
            question,
            config: cfg,
            backend,
            ground_truth,
            overlay: true,
        },
        out: a.out.or_else(|| file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        group: a.group.or(file.group),
    })
}

async fn run(client: &Client, a: RunArgs, file: &FileConfig) -> Result<ExitCode> {
    let r = resolve_run(a, file)?;
    prepare_out_dir(&r.out)?;
    if let Some(g) = r.group {
        return run_group(client, r.request, g, &r.out).await;
    }
    let resp = client.run(&r.request).await?;
    let rec = &resp.record;
    write_json(&r.out.join("record.json"), rec)?;
    if let Some(b) = &rec.breakdown {
        write_json(&r.out.join("breakdown.json"), b)?;
    }
    if let Some(gt) = &resp.ground_truth {
        write_json(&r.out.join("gt.json"), gt)?;
    }
    if let Some(png) = &resp.overlay_png {
        let bytes = decode_b64(png).map_err(|e| anyhow!(e))?;
        std::fs::write(r.out.join("overlay.png"), bytes).context("cannot write overlay.png")?;
    }
    print_run_summary(rec);
    if rec.breakdown.is_none() {
        eprintln!("note: no ground truth for this scene, reward not computed");
    }
    Ok(ExitCode::SUCCESS)
}

fn print_run_summary(rec: &EpisodeRecord) {
    let answer = rec
        .trajectory
        .answer()
        .map(|a| a.payload.to_string())
        .unwrap_or_else(|| "-".into());
    println!("outcome: {}", serde_json::to_value(rec.outcome).unwrap().as_str().unwrap_or("?"));
    println!("answer: {answer}");
    println!("tool calls: {}", rec.budget.used_calls);
    if let Some(d) = &rec.detail {
        println!("detail: {d}");
    }
    if let Some(b) = &rec.breakdown {
        println!("reward: {:.6}", b.total);
    }
}

async fn run_group(client: &Client, run: RunRequest, group: usize, out: &Path) -> Result<ExitCode> {
    let resp = client.run_group(&GroupRunRequest { run, group }).await?;
    let dir = out.join("records");
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (i, m) in resp.members.iter().enumerate() {
        match (&m.record, &m.error) {
            (Some(rec), _) => write_json(&dir.join(format!("record_{i}.json")), rec)?,
            (None, Some(e)) => eprintln!("member {i} failed: {e}"),
            (None, None) => {}
        }
    }
    write_json(&out.join("gt.json"), &resp.ground_truth)?;
    write_json(&out.join("group.json"), &resp.scores)?;
    println!("member  reward      advantage");
    for (i, (r, adv)) in resp.scores.rewards.iter().zip(&resp.scores.advantages).enumerate() {
        println!("{i:>6}  {r:>10.6}  {adv:>10.6}");
    }
    Ok(ExitCode::SUCCESS)
}

async fn score(client: &Client, a: ScoreArgs) -> Result<ExitCode> {
    let gt_path = match a.gt {
        Some(p) => p,
        None => a.records[0]
            .parent()
            .map(|d| d.join("gt.json"))
            .ok_or_else(|| anyhow!("no --gt given and the record has no directory"))?,
    };
    let gt: GroundTruth = read_json(&gt_path)?;
    let records = a
        .records
        .iter()
        .map(|p| read_json::<EpisodeRecord>(p))
        .collect::<Result<Vec<_>>>()?;
    if a.group {
        let resp = client
            .score_group(&GroupScoreRequest {
                records,
                ground_truth: gt,
            })
            .await?;
        print_json(&resp)?;
        return Ok(ExitCode::SUCCESS);
    }
    if records.len() != 1 {
        bail!("score takes one record unless --group is given");
    }
    let record = records.into_iter().next().expect("one record");
    let resp = client
        .score(&ScoreRequest {
            record,
            ground_truth: gt,
        })
        .await?;
    print_json(&resp.breakdown)?;
    match resp.matches_stored {
        Some(true) => eprintln!("stored breakdown: identical"),
        Some(false) => eprintln!("stored breakdown: differs"),
        None => eprintln!("stored breakdown: absent"),
    }
    Ok(ExitCode::SUCCESS)
}

fn corpus_request(a: &CorpusArgs) -> Result<CorpusRequest> {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
    let blocklist = match &a.blocklist {
        Some(p) => read(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };
    Ok(CorpusRequest {
        records: read(&a.corpus)?,
        annotations: a.annotations.as_deref().map(read).transpose()?,
        leak_iou: a.leak_iou,
        blocklist,
    })
}

async fn validate(client: &Client, a: CorpusArgs) -> Result<ExitCode> {
    let resp = client.validate_corpus(&corpus_request(&a)?).await?;
    if a.json {
        print_json(&resp.report)?;
    } else {
        print!("{}", resp.text);
    }
    Ok(ExitCode::SUCCESS)
}

async fn export(client: &Client, a: ExportArgs) -> Result<ExitCode> {
    let resp = client.export_corpus(&corpus_request(&a.corpus)?).await?;
    if a.out.as_os_str() == "-" {
        print!("{}", resp.sft);
    } else {
        std::fs::write(&a.out, &resp.sft).with_context(|| format!("cannot write {}", a.out.display()))?;
    }
    eprintln!("exported: {}", resp.exported);
    if let Some(r) = &resp.report {
        eprint!("{}", r.text());
    }
    Ok(ExitCode::SUCCESS)
}

async fn gen_scene(client: &Client, a: GenSceneArgs, file: &FileConfig) -> Result<ExitCode> {
    let d = GenSpec::default();
    let spec = GenSpec {
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
        width: a.width.unwrap_or(d.width),
        height: a.height.unwrap_or(d.height),
        min_objects: a.min_objects.unwrap_or(d.min_objects),
        max_objects: a.max_objects.unwrap_or(d.max_objects),
        min_size: a.min_size.unwrap_or(d.min_size),
        max_size: a.max_size.unwrap_or(d.max_size),
        labels: a.labels.unwrap_or(d.labels),
        min_gap: d.min_gap,
        straddle: a.straddle.unwrap_or(d.straddle),
        midline_clearance: a.midline_clearance.unwrap_or(d.midline_clearance),
    };
    let out = a.out.or_else(|| file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
    prepare_out_dir(&out)?;
    let scene = client.generate_scene(&spec).await?.scene;
    write_json(&out.join("scene.json"), &scene)?;
    let label = a.label.or_else(|| file.label.clone());
    let boxes = Scene::synthetic(scene.clone())
        .map_err(|e| anyhow!(e))?
        .ground_truth_norm()
        .into_iter()
        .filter(|(l, _)| label.as_deref().is_none_or(|q| q == l))
        .map(|(_, b)| b)
        .collect::<Vec<_>>();
    let gt = GroundTruth::Count {
        count: boxes.len() as u64,
        boxes,
    };
    write_json(&out.join("gt.json"), &gt)?;
    if a.png {
        let s = Scene::synthetic(scene.clone()).map_err(|e| anyhow!(e))?;
        let (w, h) = view_size(s.width, s.height, DEFAULT_MAX_PIXELS);
        let png = encode_png(&s.render(&s.image_frame(), w, h)).map_err(|e| anyhow!(e))?;
        std::fs::write(out.join("scene.png"), png).context("cannot write scene.png")?;
    }
    println!("objects: {}", scene.objects.len());
    println!("wrote {}", out.join("scene.json").display());
    Ok(ExitCode::SUCCESS)
}

async fn parse(client: &Client, a: ParseArgs, file: &FileConfig) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.file).with_context(|| format!("cannot read {}", a.file.display()))?;
    let task = a.task.or(file.task).unwrap_or(EpisodeConfig::default().task);
    if a.validate {
        let v = client.validate(&text, task).await?;
        print_json(&v)?;
        return Ok(if v.format.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    let p = client.parse(&text, task).await?;
    print_json(&p)?;
    for e in &p.errors {
        eprintln!("parse error: {e}");
    }
    Ok(if p.errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
