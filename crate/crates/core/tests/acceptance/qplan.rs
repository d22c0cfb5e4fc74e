//! Plan scoring checked against a separate rule checker that works on a
//! small trajectory description rather than on parsed steps.

use geoscope_core::plan::{evaluate_qplan, QPlan, DEFAULT_MAX_ITEMS};
use geoscope_core::task::TaskKind;
use geoscope_core::trajectory::parse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

type R = [i32; 4];

#[derive(Clone)]
struct It {
    id: String,
    roi: Option<R>,
    done: bool,
    kids: Vec<It>,
}

fn it(id: &str, roi: Option<R>, done: bool) -> It {
    It { id: id.into(), roi, done, kids: Vec::new() }
}

fn with(mut p: It, kids: Vec<It>) -> It {
    p.kids = kids;
    p
}

#[derive(Clone)]
enum Sec {
    Plan(Vec<It>),
    Progress(Vec<It>),
    Agg,
}

#[derive(Clone)]
enum Act {
    Zoom(&'static str, R),
    Answer,
    Nothing,
}

#[derive(Clone)]
struct Turn {
    secs: Vec<Sec>,
    act: Act,
}

fn turn(secs: Vec<Sec>, act: Act) -> Turn {
    Turn { secs, act }
}

struct Case {
    name: String,
    task: TaskKind,
    turns: Vec<Turn>,
}

const Q1: R = [0, 0, 500, 500];
const Q2: R = [500, 0, 1000, 500];
const Q3: R = [0, 500, 500, 1000];
const Q4: R = [500, 500, 1000, 1000];
const QUADS: [(&str, R); 4] = [("A", Q1), ("B", Q2), ("C", Q3), ("D", Q4)];

// ---------------------------------------------------------------- rendering

fn lines(items: &[It], depth: usize, out: &mut String) {
    for i in items {
        let roi = i.roi.map_or(String::new(), |r| format!(" [{}, {}, {}, {}]", r[0], r[1], r[2], r[3]));
        let mark = if i.done { "x" } else { " " };
        out.push_str(&format!("{}- [{mark}] {}: check region{roi}\n", "  ".repeat(depth), i.id));
        lines(&i.kids, depth + 1, out);
    }
}

fn render(turns: &[Turn], task: TaskKind) -> String {
    let answer = if task == TaskKind::Grounding { "[10, 10, 20, 20]" } else { "3" };
    let mut out = String::new();
    let mut views = 0;
    for t in turns {
        out.push_str("<think>\nWorking.\n");
        for s in &t.secs {
            match s {
                Sec::Plan(items) => {
                    out.push_str("[PLAN]\n");
                    lines(items, 0, &mut out);
                }
                Sec::Progress(items) => {
                    out.push_str("[PROGRESS]\n");
                    lines(items, 0, &mut out);
                }
                Sec::Agg => out.push_str("[FINAL AGGREGATION]\nAll regions merged.\n"),
            }
        }
        out.push_str("</think>\n");
        match t.act {
            Act::Zoom(src, b) => {
                views += 1;
                out.push_str(&format!(
                    "<tool_call>{{\"name\": \"zoom_in\", \"arguments\": {{\"source_image_id\": \"{src}\", \"bbox\": [{}, {}, {}, {}]}}}}</tool_call>\n<observation>\nCurrent View: v{views}\n</observation>\n",
                    b[0], b[1], b[2], b[3]
                ));
            }
            Act::Answer => out.push_str(&format!("<answer>{answer}</answer>\n")),
            Act::Nothing => {}
        }
    }
    out
}

// ------------------------------------------------------------------ checker

type F = [f64; 4];

fn place(frame: F, r: R) -> F {
    let (w, h) = (frame[2] - frame[0], frame[3] - frame[1]);
    [
        frame[0] + r[0] as f64 * w / 1000.0,
        frame[1] + r[1] as f64 * h / 1000.0,
        frame[0] + r[2] as f64 * w / 1000.0,
        frame[1] + r[3] as f64 * h / 1000.0,
    ]
}

fn overlap(a: F, b: F) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

#[derive(Clone, Copy, PartialEq)]
enum St {
    Open,
    Split,
    Done,
}

struct Entry {
    region: Option<F>,
    st: St,
    depth: usize,
    parent: Option<String>,
    skipped_check: bool,
}

#[derive(Default)]
struct Checker {
    entries: BTreeMap<String, Entry>,
    looks: Vec<Option<F>>,
    planned: bool,
    answers: usize,
    found: Vec<(String, String)>,
}

impl Checker {
    fn flag(&mut self, kind: &str, id: &str) {
        self.found.push((kind.into(), id.into()));
    }

    fn seen(&self, region: Option<F>) -> bool {
        match region {
            None => !self.looks.is_empty(),
            Some(g) => {
                let area = (g[2] - g[0]) * (g[3] - g[1]);
                self.looks.iter().flatten().any(|z| {
                    if area > 0.0 {
                        overlap(*z, g) >= 0.5 * area
                    } else {
                        overlap(*z, g) > 0.0 || (g[0] >= z[0] && g[0] <= z[2] && g[1] >= z[1] && g[1] <= z[3])
                    }
                })
            }
        }
    }

    fn add(&mut self, i: &It, frame: F, depth: usize, parent: Option<&str>) {
        if self.entries.contains_key(&i.id) {
            self.flag("duplicate_id", &i.id);
            return;
        }
        self.entries.insert(
            i.id.clone(),
            Entry {
                region: i.roi.map(|r| place(frame, r)),
                st: St::Open,
                depth,
                parent: parent.map(String::from),
                skipped_check: false,
            },
        );
    }

    /// New children under listed items that the plan already knows.
    fn grow(&mut self, items: &[It], frame: F) {
        for i in items {
            if !self.entries.contains_key(&i.id) {
                continue;
            }
            let fresh: Vec<&It> = i.kids.iter().filter(|k| !self.entries.contains_key(&k.id)).collect();
            if !fresh.is_empty() {
                let (st, depth) = (self.entries[&i.id].st, self.entries[&i.id].depth);
                if st == St::Done {
                    self.flag("expand_completed", &i.id);
                } else if depth >= 1 {
                    self.flag("depth_exceeded", &i.id);
                } else {
                    self.entries.get_mut(&i.id).unwrap().st = St::Split;
                    for k in fresh {
                        self.add(k, frame, depth + 1, Some(&i.id));
                    }
                }
            }
            self.grow(&i.kids, frame);
        }
    }

    fn close_parents(&mut self, id: &str) {
        let mut cur = self.entries[id].parent.clone();
        while let Some(p) = cur {
            let all_done = self.entries.values().filter(|e| e.parent.as_deref() == Some(&p)).all(|e| e.st == St::Done);
            if !all_done || self.entries[&p].st != St::Split {
                break;
            }
            self.entries.get_mut(&p).unwrap().st = St::Done;
            cur = self.entries[&p].parent.clone();
        }
    }

    fn tick(&mut self, items: &[It]) {
        for i in items {
            let was = self.entries.get(&i.id).map(|e| e.st);
            self.tick(&i.kids);
            let Some(st) = self.entries.get(&i.id).map(|e| e.st) else {
                self.flag("unknown_item", &i.id);
                continue;
            };
            // Only a line contradicting an earlier listing reopens.
            if was == Some(St::Done) && !i.done {
                self.flag("reopened", &i.id);
                continue;
            }
            match (st, i.done) {
                (St::Open, true) => {
                    let miss = !self.seen(self.entries[&i.id].region);
                    let e = self.entries.get_mut(&i.id).unwrap();
                    e.skipped_check = miss;
                    e.st = St::Done;
                    self.close_parents(&i.id);
                }
                (St::Split, true) => {
                    self.entries.get_mut(&i.id).unwrap().st = St::Done;
                    self.close_parents(&i.id);
                }
                _ => {}
            }
        }
    }

    fn score(case: &Case) -> (QPlan, Vec<(String, String)>) {
        let mut c = Checker::default();
        let mut views: HashMap<String, F> = HashMap::from([("v0".to_string(), [0.0, 0.0, 1000.0, 1000.0])]);
        let mut here: F = [0.0, 0.0, 1000.0, 1000.0];
        let mut n = 0;
        for t in &case.turns {
            for s in &t.secs {
                match s {
                    Sec::Plan(items) if !c.planned => {
                        c.planned = true;
                        if items.is_empty() {
                            c.flag("empty_plan", "");
                        }
                        if items.len() > DEFAULT_MAX_ITEMS {
                            c.flag("too_many_items", "");
                        }
                        for i in items {
                            c.add(i, here, 0, None);
                        }
                        c.grow(items, here);
                    }
                    Sec::Plan(items) | Sec::Progress(items) => {
                        c.grow(items, here);
                        c.tick(items);
                    }
                    Sec::Agg => {
                        let open: Vec<(String, Option<F>)> = c
                            .entries
                            .iter()
                            .filter(|(_, e)| e.st == St::Open)
                            .map(|(id, e)| (id.clone(), e.region))
                            .collect();
                        for (id, region) in open {
                            if !c.seen(region) {
                                c.flag("skipped_region", &id);
                            }
                        }
                    }
                }
            }
            match t.act {
                Act::Zoom(src, b) => {
                    n += 1;
                    let region = views.get(src).map(|f| place(*f, b));
                    c.looks.push(region);
                    if let Some(r) = region {
                        views.insert(format!("v{n}"), r);
                    }
                    here = views.get(&format!("v{n}")).copied().unwrap_or([0.0, 0.0, 1000.0, 1000.0]);
                }
                Act::Answer => {
                    if c.answers > 0 {
                        c.flag("repeated_answer", "");
                    }
                    c.answers += 1;
                }
                Act::Nothing => {}
            }
        }
        let q = if !c.found.is_empty() {
            QPlan::Violation
        } else if !c.planned {
            if case.task.plan_required() {
                QPlan::Bypass
            } else {
                QPlan::Valid
            }
        } else if (c.answers > 0 && c.entries.values().any(|e| e.st == St::Open))
            || c.entries.values().any(|e| e.skipped_check)
        {
            QPlan::Bypass
        } else {
            QPlan::Valid
        };
        let mut found = c.found;
        found.sort();
        (q, found)
    }
}

// -------------------------------------------------------------------- suite

fn zoom(b: R) -> Act {
    Act::Zoom("v0", b)
}

fn quads(done: &[bool]) -> Vec<It> {
    QUADS.iter().zip(done).map(|((id, r), d)| it(id, Some(*r), *d)).collect()
}

fn case(name: impl Into<String>, task: TaskKind, turns: Vec<Turn>) -> Case {
    Case { name: name.into(), task, turns }
}

fn suite() -> Vec<Case> {
    use TaskKind::*;
    let mut cases = Vec::new();
    let two = |a: bool, b: bool| vec![it("A", Some(Q1), a), it("B", Some(Q4), b)];

    cases.push(case(
        "two quadrants inspected then ticked",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], zoom(Q4)),
            turn(vec![Sec::Progress(two(true, true)), Sec::Agg], Act::Answer),
        ],
    ));
    cases.push(case(
        "answer with one item pending",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], Act::Answer),
        ],
    ));
    cases.push(case(
        "progress marks an item missing from the plan",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(vec![it("A", Some(Q1), true), it("C", Some(Q3), true)])], Act::Answer),
        ],
    ));
    cases.push(case(
        "tick without any inspection",
        RegionCounting,
        vec![turn(vec![Sec::Plan(two(false, false)), Sec::Progress(two(true, true))], Act::Answer)],
    ));
    cases.push(case(
        "tick the wrong quadrant",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, true))], Act::Answer),
        ],
    ));
    cases.push(case(
        "ticked item reopened",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], zoom(Q4)),
            turn(vec![Sec::Progress(two(false, true))], Act::Answer),
        ],
    ));
    cases.push(case(
        "aggregation claimed over an unvisited region",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false)), Sec::Agg], Act::Answer),
        ],
    ));
    cases.push(case(
        "aggregation over a visited but unticked region",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], zoom(Q4)),
            turn(vec![Sec::Agg], Act::Answer),
        ],
    ));
    cases.push(case(
        "two answers",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], zoom(Q4)),
            turn(vec![Sec::Progress(two(true, true))], Act::Answer),
            turn(vec![], Act::Answer),
        ],
    ));
    cases.push(case("empty plan", RegionCounting, vec![turn(vec![Sec::Plan(vec![])], Act::Answer)]));
    let nine: Vec<It> = (0..9).map(|k| it(&format!("R{k}"), None, false)).collect();
    cases.push(case("nine items", RegionCounting, vec![turn(vec![Sec::Plan(nine)], Act::Answer)]));
    let eight: Vec<It> = (0..8).map(|k| it(&format!("R{k}"), None, false)).collect();
    let eight_done: Vec<It> = (0..8).map(|k| it(&format!("R{k}"), None, true)).collect();
    cases.push(case(
        "eight roi-less items after one look",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(eight)], zoom(Q2)),
            turn(vec![Sec::Progress(eight_done)], Act::Answer),
        ],
    ));
    cases.push(case(
        "duplicate ids",
        RegionCounting,
        vec![turn(vec![Sec::Plan(vec![it("A", Some(Q1), false), it("A", Some(Q2), false)])], Act::Answer)],
    ));
    cases.push(case(
        "expand a ticked item",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], Act::Nothing),
            turn(
                vec![Sec::Progress(vec![with(it("A", Some(Q1), true), vec![it("A1", Some([0, 0, 500, 1000]), false)])])],
                Act::Answer,
            ),
        ],
    ));
    cases.push(case(
        "children and parent tick in one listing",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(
                vec![Sec::Progress(vec![with(it("A", Some(Q1), true), vec![it("A1", Some([0, 0, 500, 1000]), false)])])],
                Act::Answer,
            ),
        ],
    ));
    cases.push(case(
        "grandchildren in the first plan",
        RegionCounting,
        vec![turn(
            vec![Sec::Plan(vec![with(
                it("A", Some(Q1), false),
                vec![with(it("A1", Some([0, 0, 250, 500]), false), vec![it("A1a", Some([0, 0, 250, 250]), false)])],
            )])],
            Act::Answer,
        )],
    ));
    cases.push(case(
        "progress before any plan",
        RegionCounting,
        vec![turn(vec![Sec::Progress(two(false, false))], zoom(Q1)), turn(vec![], Act::Answer)],
    ));
    cases.push(case("no plan for a region count", RegionCounting, vec![turn(vec![], zoom(Q1)), turn(vec![], Act::Answer)]));
    cases.push(case("no plan for a global count", GlobalCounting, vec![turn(vec![], Act::Answer)]));
    cases.push(case("no plan for grounding", Grounding, vec![turn(vec![], zoom(Q3)), turn(vec![], Act::Answer)]));
    cases.push(case("no plan for object counting", ObjectCounting, vec![turn(vec![], Act::Answer)]));

    // Nested plans.
    let halves = |a: bool, b: bool| vec![it("A1", Some([0, 0, 500, 250]), a), it("A2", Some([0, 250, 500, 500]), b)];
    cases.push(case(
        "children in the first plan close their parent",
        ObjectCounting,
        vec![
            turn(vec![Sec::Plan(vec![with(it("A", Some(Q1), false), halves(false, false))])], zoom([0, 0, 500, 250])),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), false), halves(true, false))])], zoom([0, 250, 500, 500])),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), false), halves(true, true))])], Act::Answer),
        ],
    ));
    cases.push(case(
        "parent ticked while a child is pending",
        ObjectCounting,
        vec![
            turn(vec![Sec::Plan(vec![with(it("A", Some(Q1), false), halves(false, false))])], zoom([0, 0, 500, 250])),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), true), halves(true, false))])], Act::Answer),
        ],
    ));
    // Children written inside the zoomed view use that view's frame:
    // [0, 0, 1000, 500] in v1 = Q1 is global [0, 0, 500, 250].
    let local_halves = |a: bool, b: bool| vec![it("A1", Some([0, 0, 1000, 500]), a), it("A2", Some([0, 500, 1000, 1000]), b)];
    cases.push(case(
        "sub-plan authored in a crop, refined from the crop",
        ObjectCounting,
        vec![
            turn(vec![Sec::Plan(vec![it("A", Some(Q1), false)])], zoom(Q1)),
            turn(
                vec![Sec::Progress(vec![with(it("A", Some(Q1), false), local_halves(false, false))])],
                Act::Zoom("v1", [0, 0, 1000, 500]),
            ),
            turn(
                vec![Sec::Progress(vec![with(it("A", Some(Q1), false), local_halves(true, false))])],
                Act::Zoom("v1", [0, 500, 1000, 1000]),
            ),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), false), local_halves(true, true))])], Act::Answer),
        ],
    ));
    cases.push(case(
        "sub-plan child ticked on the parent crop only",
        ObjectCounting,
        vec![
            turn(vec![Sec::Plan(vec![it("A", Some(Q1), false)])], zoom(Q1)),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), false), local_halves(true, true))])], Act::Answer),
        ],
    ));
    cases.push(case(
        "sub-plan authored in another crop, child zoomed outside it",
        ObjectCounting,
        vec![
            turn(vec![Sec::Plan(vec![it("A", Some(Q1), false)])], zoom(Q4)),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), false), local_halves(false, false))])], zoom([0, 0, 500, 240])),
            turn(vec![Sec::Progress(vec![with(it("A", Some(Q1), false), local_halves(true, false))])], Act::Answer),
        ],
    ));
    cases.push(case(
        "grandchild added to a child",
        ObjectCounting,
        vec![
            turn(vec![Sec::Plan(vec![with(it("A", Some(Q1), false), halves(false, false))])], zoom(Q1)),
            turn(
                vec![Sec::Progress(vec![with(
                    it("A", Some(Q1), false),
                    vec![with(it("A1", Some([0, 0, 500, 250]), false), vec![it("A1a", None, false)]), it("A2", Some([0, 250, 500, 500]), false)],
                )])],
                Act::Answer,
            ),
        ],
    ));

    // First plan written after zooming: its regions live in the crop, which
    // itself already covers them.
    for (label, act) in [
        ("drill from the crop", Act::Zoom("v1", Q1)),
        ("same area from the global view", zoom([0, 0, 250, 250])),
        ("neighbouring area from the global view", zoom([250, 250, 500, 500])),
    ] {
        cases.push(case(
            format!("plan authored in a crop, {label}"),
            ObjectCounting,
            vec![
                turn(vec![], zoom(Q1)),
                turn(vec![Sec::Plan(vec![it("P", Some(Q1), false)])], act),
                turn(vec![Sec::Progress(vec![it("P", Some(Q1), true)])], Act::Answer),
            ],
        ));
    }

    // Coverage threshold sweep: zoom [0, 0, w, 100] against item [0, 0, 100, 100].
    for w in [1, 30, 49, 50, 51, 99, 100, 1000] {
        cases.push(case(
            format!("coverage sweep w={w}"),
            RegionCounting,
            vec![
                turn(vec![Sec::Plan(vec![it("S", Some([0, 0, 100, 100]), false)])], zoom([0, 0, w, 100])),
                turn(vec![Sec::Progress(vec![it("S", Some([0, 0, 100, 100]), true)])], Act::Answer),
            ],
        ));
    }

    // Zero-area items.
    for (label, z) in [("inside", [250, 250, 400, 400]), ("on the edge", [300, 300, 500, 500]), ("away", [400, 400, 600, 600])] {
        let p = [300, 300, 300, 350];
        cases.push(case(
            format!("zero-width item, zoom {label}"),
            RegionCounting,
            vec![
                turn(vec![Sec::Plan(vec![it("Z", Some(p), false)])], zoom(z)),
                turn(vec![Sec::Progress(vec![it("Z", Some(p), true)])], Act::Answer),
            ],
        ));
    }

    // Zooms the runtime could not place still count as inspections of
    // region-less items.
    for (label, roi) in [("item with region", Some(Q1)), ("item without region", None)] {
        cases.push(case(
            format!("zoom from an unknown view, {label}"),
            RegionCounting,
            vec![
                turn(vec![Sec::Plan(vec![it("U", roi, false)])], Act::Zoom("v9", Q1)),
                turn(vec![Sec::Progress(vec![it("U", roi, true)])], Act::Answer),
            ],
        ));
    }

    // A second plan section is reconciled like a progress listing.
    cases.push(case(
        "second plan restating the state",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Plan(two(true, false))], zoom(Q4)),
            turn(vec![Sec::Progress(two(true, true))], Act::Answer),
        ],
    ));
    cases.push(case(
        "second plan resetting a ticked item",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], zoom(Q4)),
            turn(vec![Sec::Plan(two(false, false))], Act::Answer),
        ],
    ));
    cases.push(case(
        "second plan with a new item",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], zoom(Q1)),
            turn(vec![Sec::Plan(vec![it("A", Some(Q1), true), it("E", Some(Q2), false)])], Act::Answer),
        ],
    ));
    cases.push(case(
        "think-only turn between steps",
        RegionCounting,
        vec![
            turn(vec![Sec::Plan(two(false, false))], Act::Nothing),
            turn(vec![], zoom(Q1)),
            turn(vec![Sec::Progress(two(true, false))], Act::Nothing),
            turn(vec![], zoom(Q4)),
            turn(vec![Sec::Progress(two(true, true)), Sec::Agg], Act::Answer),
        ],
    ));
    cases.push(case("plan but no answer", RegionCounting, vec![turn(vec![Sec::Plan(two(false, false))], zoom(Q1))]));

    // Four-quadrant sweeps: visit a subset, then tick everything.
    for mask in 0u32..16 {
        let mut turns = vec![turn(vec![Sec::Plan(quads(&[false; 4]))], Act::Nothing)];
        let mut ticked = [false; 4];
        for (k, (_, r)) in QUADS.iter().enumerate() {
            if mask & (1 << k) != 0 {
                turns.push(turn(vec![], zoom(*r)));
                ticked[k] = true;
                turns.push(turn(vec![Sec::Progress(quads(&ticked))], Act::Nothing));
            }
        }
        turns.push(turn(vec![Sec::Progress(quads(&[true; 4])), Sec::Agg], Act::Answer));
        cases.push(case(format!("quadrant sweep visiting {mask:04b}"), RegionCounting, turns));
    }
    // Early answers after k of 4 quadrants.
    for k in 0..=4 {
        let mut turns = vec![turn(vec![Sec::Plan(quads(&[false; 4]))], Act::Nothing)];
        let mut ticked = [false; 4];
        for (j, (_, r)) in QUADS.iter().enumerate().take(k) {
            turns.push(turn(vec![], zoom(*r)));
            ticked[j] = true;
            turns.push(turn(vec![Sec::Progress(quads(&ticked))], Act::Nothing));
        }
        turns.push(turn(vec![], Act::Answer));
        cases.push(case(format!("answer after {k} of 4 quadrants"), RegionCounting, turns));
    }
    cases
}

pub fn run() -> Result<String, String> {
    let cases = suite();
    ensure!(cases.len() >= 50, "only {} cases", cases.len());
    let mut by_q: BTreeMap<i8, usize> = BTreeMap::new();
    let mut kinds: BTreeSet<String> = BTreeSet::new();
    for c in &cases {
        let text = render(&c.turns, c.task);
        let t = parse(&text, c.task).map_err(|e| format!("{}: {e:?}\n{text}", c.name))?;
        let report = evaluate_qplan(&t, c.task, DEFAULT_MAX_ITEMS);
        let (want_q, want_v) = Checker::score(c);
        let mut got_v: Vec<(String, String)> = report
            .violations
            .iter()
            .map(|v| {
                let j = serde_json::to_value(v).unwrap();
                (
                    j["violation"].as_str().unwrap_or_default().to_string(),
                    j["id"].as_str().unwrap_or_default().to_string(),
                )
            })
            .collect();
        got_v.sort();
        ensure!(
            report.q == want_q && got_v == want_v,
            "{}: evaluate_qplan {:?} {got_v:?}, checker {want_q:?} {want_v:?}\n{text}",
            c.name,
            report.q
        );
        *by_q.entry(want_q.value()).or_default() += 1;
        kinds.extend(want_v.into_iter().map(|v| v.0));
    }
    for q in [1, 0, -1] {
        ensure!(by_q.contains_key(&q), "no case scores {q}");
    }
    let classes = [
        "empty_plan",
        "too_many_items",
        "duplicate_id",
        "unknown_item",
        "expand_completed",
        "depth_exceeded",
        "reopened",
        "skipped_region",
        "repeated_answer",
    ];
    for k in classes {
        ensure!(kinds.contains(k), "no case triggers {k}");
    }
    Ok(format!(
        "{} cases agree (valid {}, bypass {}, violation {}); {} violation classes exercised (already_completed and duplicate_plan cannot arise from a trajectory)",
        cases.len(),
        by_q[&1],
        by_q[&0],
        by_q[&-1],
        classes.len()
    ))
}
