//! Static overlay of plan regions, zoom crops and evidence on the global view.

use crate::geometry::{NormBox, REL_EXTENT};
use image::{Rgb, RgbImage};

pub const PLAN_COLOR: [u8; 3] = [255, 220, 0];
pub const CROP_COLOR: [u8; 3] = [0, 200, 255];
pub const EVIDENCE_COLOR: [u8; 3] = [255, 0, 200];

#[derive(Debug, Clone, Default)]
pub struct Overlay {
    pub plan: Vec<NormBox>,
    pub crops: Vec<NormBox>,
    pub evidence: Vec<NormBox>,
}

/// Draws every box of `overlay` as an outline on a copy of `base`.
pub fn render(base: &RgbImage, overlay: &Overlay) -> RgbImage {
    let mut img = base.clone();
    for (boxes, color, thickness) in [
        (&overlay.plan, PLAN_COLOR, 3),
        (&overlay.crops, CROP_COLOR, 2),
        (&overlay.evidence, EVIDENCE_COLOR, 1),
    ] {
        for b in boxes {
            outline(&mut img, b, Rgb(color), thickness);
        }
    }
    img
}

fn outline(img: &mut RgbImage, b: &NormBox, color: Rgb<u8>, thickness: u32) {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let k = REL_EXTENT as f64;
    let px = |v: i32| ((v as f64 / k * w as f64) as u32).min(w - 1);
    let py = |v: i32| ((v as f64 / k * h as f64) as u32).min(h - 1);
    let (x1, y1, x2, y2) = (px(b.x1()), py(b.y1()), px(b.x2()), py(b.y2()));
    for t in 0..thickness {
        for x in x1..=x2 {
            img.put_pixel(x, (y1 + t).min(h - 1), color);
            img.put_pixel(x, y2.saturating_sub(t), color);
        }
        for y in y1..=y2 {
            img.put_pixel((x1 + t).min(w - 1), y, color);
            img.put_pixel(x2.saturating_sub(t), y, color);
        }
    }
}
