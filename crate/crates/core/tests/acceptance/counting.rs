use geoscope_core::agent::{
    run_episode, scene_ground_truth, EpisodeConfig, HeuristicBackend, HeuristicConfig, Outcome,
};
use geoscope_core::imagetool::{gen_scene, GenSpec, Scene};
use geoscope_core::task::TaskKind;
use std::sync::Arc;
use std::time::Instant;
use tokio::task::JoinSet;

const QUESTION: &str = "How many vehicles are in the image?";

struct Run {
    seed: u64,
    dedup: bool,
    truth: u64,
    answer: Option<u64>,
    outcome: Outcome,
}

async fn count(seed: u64, spec: GenSpec, dedup: bool) -> Result<Run, String> {
    let scene = Arc::new(
        Scene::synthetic(gen_scene(&spec).map_err(|e| format!("seed {seed}: {e}"))?).map_err(|e| e.to_string())?,
    );
    let gt = scene_ground_truth(&scene, TaskKind::RegionCounting, Some("vehicle")).ok_or("no ground truth")?;
    let truth = scene.ground_truth_norm().len() as u64;
    let dedup_iou = dedup.then_some(0.5);
    let cfg = EpisodeConfig {
        dedup_iou,
        label: Some("vehicle".into()),
        ..Default::default()
    };
    let backend = HeuristicBackend::new(HeuristicConfig { dedup_iou, seed: None });
    let r = run_episode(scene, QUESTION, &backend, &cfg, Some(&gt))
        .await
        .map_err(|e| format!("seed {seed}: {e}"))?;
    Ok(Run {
        seed,
        dedup,
        truth,
        answer: r.trajectory.answer().and_then(|a| a.count()),
        outcome: r.outcome,
    })
}

pub fn run() -> Result<String, String> {
    let t0 = Instant::now();
    let rt = tokio::runtime::Builder::new_multi_thread().build().map_err(|e| e.to_string())?;
    let (plain, straddle) = rt.block_on(async {
        let mut set = JoinSet::new();
        for seed in 0..100u64 {
            let spec = GenSpec { seed, ..Default::default() };
            set.spawn(async move { (false, count(seed, spec, true).await) });
        }
        for seed in 0..20u64 {
            let spec = GenSpec {
                seed: 1000 + seed,
                straddle: 1,
                midline_clearance: 500,
                ..Default::default()
            };
            for dedup in [true, false] {
                let spec = spec.clone();
                set.spawn(async move { (true, count(seed, spec, dedup).await) });
            }
        }
        let (mut plain, mut straddle) = (Vec::new(), Vec::new());
        while let Some(joined) = set.join_next().await {
            let (adversarial, run) = joined.map_err(|e| e.to_string())?;
            if adversarial {
                straddle.push(run?);
            } else {
                plain.push(run?);
            }
        }
        Ok::<_, String>((plain, straddle))
    })?;

    ensure!(plain.len() == 100 && straddle.len() == 40, "missing runs");
    let wrong: Vec<String> = plain
        .iter()
        .filter(|r| r.answer != Some(r.truth) || r.outcome != Outcome::Answered)
        .map(|r| format!("seed {} answered {:?} ({:?}) for {}", r.seed, r.answer, r.outcome, r.truth))
        .collect();
    ensure!(wrong.is_empty(), "{} of 100 seeded scenes wrong: {}", wrong.len(), wrong.join("; "));
    for r in &straddle {
        let ok = match (r.dedup, r.answer) {
            (true, Some(n)) => n == r.truth,
            (false, Some(n)) => n > r.truth,
            _ => false,
        };
        ensure!(
            ok,
            "straddle seed {} dedup={} answered {:?} for {}",
            r.seed,
            r.dedup,
            r.answer,
            r.truth
        );
    }
    let targets: u64 = plain.iter().map(|r| r.truth).sum();
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!(
        "100/100 seeded scenes exact ({targets} targets), 20/20 straddle scenes exact with dedup and over-counted without"
    ))
}
