use geoscope_core::geometry::NormBox;
use geoscope_core::task::{AnswerKind, TaskKind};
use geoscope_core::trajectory::{
    parse, parse_tool_call, serialize, Answer, AnswerPayload, Coord, Observation, StepKind, ToolCall, Trajectory,
    ZOOM_TOOL,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The tool schema as printed in the published system prompt, trailing
/// spaces included.
const SCHEMA_EXAMPLE: &str = "{\n  \"name\": \"zoom_in\", \n  \"arguments\": {\n    \"source_image_id\": \"<COPY_EXACT_ID_HERE>\", \n    \"bbox\": [x_min, y_min, x_max, y_max]\n  }\n}";

const WORDS: &[&str] = &[
    "vehicles", "the", "north", "cluster", "ships", "dock", "shadow", "maybe", "two", "edge", "roof", "é", "→",
    "(partial)", "x", "count:", "50%",
];

fn norm_box(rng: &mut ChaCha8Rng) -> NormBox {
    let x1 = rng.random_range(0..1000);
    let y1 = rng.random_range(0..1000);
    NormBox::new(x1, y1, rng.random_range(x1 + 1..=1000), rng.random_range(y1 + 1..=1000)).unwrap()
}

fn lit(b: &NormBox) -> String {
    let [a, c, d, e] = b.coords();
    format!("[{a}, {c}, {d}, {e}]")
}

fn prose(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..8);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn think_raw(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    if rng.random_bool(0.5) {
        out.push('\n');
    }
    for _ in 0..rng.random_range(0..10) {
        let line = match rng.random_range(0..9) {
            0 => prose(rng),
            1 => ["[PLAN]", "[PROGRESS]", "[Track]", "[FINAL AGGREGATION]", "[OBSERVATION]", "[Notes]"]
                .choose(rng)
                .unwrap()
                .to_string(),
            2 | 3 => {
                let indent = ["", "", "  ", "    ", "\t"].choose(rng).unwrap();
                let mark = ["[ ]", "[x]", "[X]"].choose(rng).unwrap();
                let bullet = ["- ", "* ", "1. ", ""].choose(rng).unwrap();
                let roi = if rng.random_bool(0.7) { format!(" {}", lit(&norm_box(rng))) } else { String::new() };
                format!("{indent}{bullet}{mark} R{}: {}{roi}", rng.random_range(1..9), prose(rng))
            }
            4 | 5 => {
                let label = ["", " (vehicle)", " (ship)", " ()"].choose(rng).unwrap();
                let head = ["* Obj", "- Obj", "Obj", "* Rejected"].choose(rng).unwrap();
                format!("{head}{label}: {}", lit(&norm_box(rng)))
            }
            6 => format!("[Observation] {}", prose(rng)),
            7 => format!("candidate near {}", lit(&norm_box(rng))),
            _ => String::new(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    if rng.random_bool(0.3) {
        out.push_str(&prose(rng));
    }
    out
}

fn think(rng: &mut ChaCha8Rng, task: TaskKind) -> Result<StepKind, String> {
    let raw = think_raw(rng);
    let t = parse(&format!("<think>{raw}</think>"), task).map_err(|e| format!("{raw:?}: {e:?}"))?;
    match t.steps.into_iter().next().map(|s| s.kind) {
        Some(k @ StepKind::Think(_)) => Ok(k),
        other => Err(format!("think block parsed as {other:?}")),
    }
}

fn tool_call(rng: &mut ChaCha8Rng) -> StepKind {
    let source = match rng.random_range(0..4) {
        0 => "v0".to_string(),
        1 => format!("v{}", rng.random_range(1..20)),
        2 => "view \"7\" \\ é".to_string(),
        _ => String::new(),
    };
    let bbox = [0; 4].map(|_| {
        if rng.random_bool(0.05) {
            Coord::Placeholder(["x_min", "y_min", "x_max", "y_max"].choose(rng).unwrap().to_string())
        } else {
            Coord::Value(rng.random_range(-50..1100))
        }
    });
    StepKind::ToolCall(ToolCall {
        name: ZOOM_TOOL.into(),
        source_image_id: source,
        bbox,
    })
}

fn observation(rng: &mut ChaCha8Rng) -> StepKind {
    StepKind::Observation(Observation {
        view_id: format!("v{}", rng.random_range(0..30)),
        region: rng.random_bool(0.6).then(|| norm_box(rng)),
    })
}

fn answer(rng: &mut ChaCha8Rng, task: TaskKind) -> StepKind {
    let kind = task.answer_kind();
    let payload = match kind {
        AnswerKind::Count => AnswerPayload::Count(rng.random_range(0..10_000)),
        AnswerKind::Grounding => AnswerPayload::Box(norm_box(rng)),
        AnswerKind::Choice => AnswerPayload::Choice(*['A', 'B', 'C', 'D'].choose(rng).unwrap()),
        AnswerKind::Text | AnswerKind::Route => AnswerPayload::Text(prose(rng)),
    };
    StepKind::Answer(Answer { kind, payload })
}

fn generate(rng: &mut ChaCha8Rng, task: TaskKind) -> Result<Trajectory, String> {
    let mut kinds = Vec::new();
    if rng.random_bool(0.8) {
        // Well-formed shape: think (call observe think)* answer.
        kinds.push(think(rng, task)?);
        for _ in 0..rng.random_range(0..6) {
            kinds.push(tool_call(rng));
            kinds.push(observation(rng));
            kinds.push(think(rng, task)?);
        }
        if rng.random_bool(0.9) {
            kinds.push(answer(rng, task));
        }
    } else {
        for _ in 0..rng.random_range(0..10) {
            kinds.push(match rng.random_range(0..4) {
                0 => think(rng, task)?,
                1 => tool_call(rng),
                2 => observation(rng),
                _ => answer(rng, task),
            });
        }
    }
    Ok(Trajectory::from_kinds(kinds))
}

pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut steps = 0;
    let mut sections = 0;
    for i in 0..1000 {
        let task = TaskKind::ALL[i % TaskKind::ALL.len()];
        let t = generate(&mut rng, task)?;
        let text = serialize(&t);
        let back = parse(&text, task).map_err(|e| format!("case {i}: {e:?}\n{text}"))?;
        ensure!(back == t, "case {i} changed on round trip:\n{text}");
        ensure!(serialize(&back) == text, "case {i}: serialization not stable");
        steps += t.steps.len();
        sections += t
            .think_blocks()
            .map(|(_, b)| b.sections.len())
            .sum::<usize>();
    }

    let tc = parse_tool_call(SCHEMA_EXAMPLE).map_err(|e| e.to_string())?;
    ensure!(tc.name == "zoom_in", "name {}", tc.name);
    ensure!(tc.source_image_id == "<COPY_EXACT_ID_HERE>", "source {}", tc.source_image_id);
    let want = ["x_min", "y_min", "x_max", "y_max"].map(|p| Coord::Placeholder(p.into()));
    ensure!(tc.bbox == want, "bbox {:?}", tc.bbox);
    ensure!(tc.raw_bbox().is_none(), "placeholders read as numbers");
    let wrapped = parse(&format!("<tool_call>{SCHEMA_EXAMPLE}</tool_call>"), TaskKind::RegionCounting)
        .map_err(|e| format!("{e:?}"))?;
    ensure!(
        wrapped.steps.len() == 1 && wrapped.steps[0].kind == StepKind::ToolCall(tc.clone()),
        "wrapped schema parsed as {:?}",
        wrapped.steps
    );

    Ok(format!(
        "1000 generated trajectories ({steps} steps, {sections} think sections) round-trip; schema example parses to zoom_in / <COPY_EXACT_ID_HERE> / [x_min, y_min, x_max, y_max]"
    ))
}
