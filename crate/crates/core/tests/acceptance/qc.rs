use geoscope_core::corpus::{filter_corpus, CorpusItem, CorpusRecord, OracleAnnotation, QcOptions, QcReason};
use geoscope_core::imagetool::LabeledRect;
use geoscope_core::task::TaskKind;
use geoscope_core::trajectory::AnswerPayload;
use std::collections::HashMap;

#[derive(Clone, Copy, PartialEq)]
enum Defect {
    Leakage,
    Structure,
    Syntax,
    Inconsistency,
    DuplicatePlan,
}

fn zoom(bbox: &str) -> String {
    format!("<tool_call>\n{{\"name\": \"zoom_in\", \"arguments\": {{\"source_image_id\": \"v0\", \"bbox\": {bbox}}}}}\n</tool_call>")
}

/// A two-quadrant count on a 1000x1000 canvas (pixels equal global units).
/// Object `a` sits in the top-left quadrant, `b` in the bottom-right one.
fn transcript(a: (u32, u32), b: (u32, u32), defect: Option<Defect>) -> String {
    let lit = |x: u32, y: u32| format!("[{x}, {y}, {}, {}]", x + 50, y + 50);
    // Views are 500px crops shown at 1000 units: local = 2 * offset.
    let local = |x: u32, y: u32, ox: u32| format!("[{}, {}, {}, {}]", 2 * (x - ox), 2 * (y - ox), 2 * (x - ox + 50), 2 * (y - ox + 50));
    let plan = "[PLAN]\n- [ ] A: top-left [0, 0, 500, 500]\n- [ ] B: bottom-right [500, 500, 1000, 1000]\n";
    let preamble = match defect {
        Some(Defect::Leakage) => format!("The second one is at {}.\n", lit(b.0, b.1)),
        _ => "Two clusters.\n".to_string(),
    };
    let first_plan = if defect == Some(Defect::Structure) { "" } else { plan };
    let extra_plan = if defect == Some(Defect::DuplicatePlan) { "[PLAN]\n- [ ] C: extra [0, 500, 500, 1000]\n" } else { "" };
    let early_answer = if defect == Some(Defect::Syntax) { "<answer>2</answer>" } else { "" };
    let answer = if defect == Some(Defect::Inconsistency) { 3 } else { 2 };
    format!(
        "<think>{preamble}{first_plan}</think>\n{}{early_answer}\n\
<observation>\nCurrent View: v1\nRegion: [0, 0, 500, 500]\n</observation>\n\
<think>\n* Obj (vehicle): {}\n{extra_plan}[PROGRESS]\n- [x] A: top-left [0, 0, 500, 500]\n- [ ] B: bottom-right [500, 500, 1000, 1000]\n</think>\n{}\n\
<observation>\nCurrent View: v2\nRegion: [500, 500, 1000, 1000]\n</observation>\n\
<think>\n* Obj (vehicle): {}\n[PROGRESS]\n- [x] A: top-left [0, 0, 500, 500]\n- [x] B: bottom-right [500, 500, 1000, 1000]\n\
[FINAL AGGREGATION]\n* Obj (vehicle): {}\n* Obj (vehicle): {}\n</think>\n<answer>{answer}</answer>",
        zoom("[0, 0, 500, 500]"),
        local(a.0, a.1, 0),
        zoom("[500, 500, 1000, 1000]"),
        local(b.0, b.1, 500),
        lit(a.0, a.1),
        lit(b.0, b.1),
    )
}

fn rect(x: u32, y: u32) -> LabeledRect {
    LabeledRect {
        label: "vehicle".into(),
        x,
        y,
        width: 50,
        height: 50,
    }
}

pub fn run() -> Result<String, String> {
    let defects = [
        (3, Defect::Leakage, QcReason::Leakage),
        (7, Defect::Structure, QcReason::Structure),
        (11, Defect::Syntax, QcReason::Syntax),
        (15, Defect::Inconsistency, QcReason::Inconsistency),
        (19, Defect::DuplicatePlan, QcReason::Structure),
    ];
    let mut records: Vec<CorpusItem> = Vec::new();
    let mut anns = HashMap::new();
    for i in 0..20u32 {
        let id = format!("rec-{i:02}");
        let a = (60 + 15 * i, 100 + 7 * i);
        let b = (620 + 9 * i, 880 - 11 * i);
        let defect = defects.iter().find(|d| d.0 == i).map(|d| d.1);
        records.push(Ok(CorpusRecord {
            id: id.clone(),
            task: TaskKind::RegionCounting,
            question: "How many vehicles are in the image?".into(),
            width: 1000,
            height: 1000,
            transcript: transcript(a, b, defect),
            images: Vec::new(),
        }));
        anns.insert(
            id.clone(),
            OracleAnnotation {
                id,
                task: TaskKind::RegionCounting,
                width: 1000,
                height: 1000,
                boxes: vec![rect(a.0, a.1), rect(b.0, b.1)],
                gold: Some(AnswerPayload::Count(2)),
            },
        );
    }

    let (kept, report) = filter_corpus(records, &anns, &QcOptions::default());
    ensure!(report.total == 20, "total {}", report.total);
    for v in &report.verdicts {
        let id = v.id.clone().unwrap_or_default();
        let i: u32 = id.trim_start_matches("rec-").parse().map_err(|_| format!("bad id {id}"))?;
        match defects.iter().find(|d| d.0 == i) {
            None => ensure!(v.kept, "clean record {id} dropped: {:?} {:?}", v.reasons, v.detail),
            Some(&(_, defect, reason)) => {
                ensure!(!v.kept && v.reasons == vec![reason], "{id}: expected {reason:?}, got {:?} {:?}", v.reasons, v.detail);
                if defect == Defect::DuplicatePlan {
                    ensure!(v.detail.iter().any(|d| d.contains("DuplicatePlan")), "{id}: {:?}", v.detail);
                }
            }
        }
    }
    ensure!(kept.len() == 15 && report.kept == 15, "kept {}", kept.len());
    let want = [
        (QcReason::Syntax, 1),
        (QcReason::Structure, 2),
        (QcReason::Leakage, 1),
        (QcReason::Inconsistency, 1),
        (QcReason::Overlap, 0),
    ];
    for (r, n) in want {
        ensure!(report.drops_for(r) == n, "{r:?} drops {} (want {n})", report.drops_for(r));
    }
    Ok("20 records, 5 drops: leakage 1, structure 2 (missing plan, duplicate plan), syntax 1, inconsistency 1; 15 kept".into())
}
