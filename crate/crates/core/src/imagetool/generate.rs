use super::scene::{LabeledRect, SyntheticSpec, DEFAULT_BACKGROUND};
use super::ToolError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MAX_ATTEMPTS: usize = 2000;

/// Parameters of the seeded scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: u32,
    pub max_size: u32,
    pub labels: Vec<String>,
    /// Minimum free space between two objects, in pixels.
    pub min_gap: u32,
    /// How many objects are forced across the vertical midline.
    pub straddle: usize,
    /// Other objects keep at least this far from both midlines.
    pub midline_clearance: u32,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 8192,
            height: 8192,
            min_objects: 5,
            max_objects: 40,
            min_size: 150,
            max_size: 400,
            labels: vec!["vehicle".into()],
            min_gap: 64,
            straddle: 0,
            midline_clearance: 0,
        }
    }
}

/// Deterministic scene for `spec.seed`.
pub fn gen_scene(spec: &GenSpec) -> Result<SyntheticSpec, ToolError> {
    if spec.width == 0 || spec.height == 0 {
        return Err(ToolError::EmptyCanvas);
    }
    if spec.min_size == 0
        || spec.min_size > spec.max_size
        || spec.max_size >= spec.width.min(spec.height)
        || spec.min_objects > spec.max_objects
        || spec.labels.is_empty()
    {
        return Err(ToolError::InvalidScene("inconsistent generator ranges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.random_range(spec.min_objects..=spec.max_objects).max(spec.straddle);
    let (mx, my) = (spec.width / 2, spec.height / 2);
    let clear = spec.midline_clearance;
    let mut objects: Vec<LabeledRect> = Vec::with_capacity(n);
    for k in 0..n {
        let straddler = k < spec.straddle;
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let w = rng.random_range(spec.min_size..=spec.max_size);
            let h = rng.random_range(spec.min_size..=spec.max_size);
            let x = if straddler {
                // At least a quarter of the width on each side of the midline.
                let lo = mx.saturating_sub(w * 3 / 4);
                let hi = mx.saturating_sub(w / 4);
                rng.random_range(lo..=hi)
            } else {
                rng.random_range(0..=spec.width - w)
            };
            let y = rng.random_range(0..=spec.height - h);
            let label = spec.labels[rng.random_range(0..spec.labels.len())].clone();
            let r = LabeledRect { label, x, y, width: w, height: h };
            let near = |lo: u32, len: u32, mid: u32| lo < mid + clear && mid < lo + len + clear;
            if clear > 0 && (near(r.y, h, my) || (!straddler && near(r.x, w, mx))) {
                continue;
            }
            if objects.iter().any(|o| o.overlaps(&r, spec.min_gap)) {
                continue;
            }
            objects.push(r);
            placed = true;
            break;
        }
        if !placed {
            return Err(ToolError::InfeasiblePacking { placed: objects.len(), requested: n });
        }
    }
    Ok(SyntheticSpec {
        width: spec.width,
        height: spec.height,
        background: DEFAULT_BACKGROUND,
        objects,
    })
}
