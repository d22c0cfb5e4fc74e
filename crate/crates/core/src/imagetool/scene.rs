use super::ToolError;
use crate::geometry::{box_to_relative, FrameBox, NormBox, PixelBox};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

pub const DEFAULT_BACKGROUND: [u8; 3] = [34, 51, 34];

/// An axis-aligned labeled rectangle in global pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRect {
    pub label: String,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl LabeledRect {
    pub fn x_max(&self) -> u32 {
        self.x + self.width
    }

    pub fn y_max(&self) -> u32 {
        self.y + self.height
    }

    pub fn pixel_box(&self) -> PixelBox {
        PixelBox::new(self.x as f64, self.y as f64, self.x_max() as f64, self.y_max() as f64)
    }

    pub fn overlaps(&self, other: &LabeledRect, gap: u32) -> bool {
        self.x < other.x_max() + gap
            && other.x < self.x_max() + gap
            && self.y < other.y_max() + gap
            && other.y < self.y_max() + gap
    }
}

/// A canvas of solid rectangles on a flat background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    #[serde(default)]
    pub objects: Vec<LabeledRect>,
}

fn default_background() -> [u8; 3] {
    DEFAULT_BACKGROUND
}

/// Fixed label colors; the heuristic detector inverts this table.
pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("vehicle", [220, 40, 40]),
    ("ship", [40, 90, 220]),
    ("plane", [240, 200, 30]),
    ("building", [150, 60, 200]),
    ("storage-tank", [40, 190, 170]),
    ("tree", [90, 200, 60]),
    ("ground-track-field", [240, 130, 30]),
    ("object", [245, 245, 245]),
];

pub fn label_color(label: &str) -> [u8; 3] {
    if let Some((_, c)) = PALETTE.iter().find(|(l, _)| *l == label) {
        return *c;
    }
    // FNV-1a, folded into the bright half so it never equals the background.
    let h = label
        .bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    [128 | (h as u8), 128 | ((h >> 8) as u8), 128 | ((h >> 16) as u8)]
}

pub fn color_label(c: [u8; 3]) -> Option<&'static str> {
    PALETTE.iter().find(|(_, p)| *p == c).map(|(l, _)| *l)
}

#[derive(Debug, Clone)]
pub enum SceneSource {
    Raster(Arc<RgbImage>),
    Synthetic(Arc<SyntheticSpec>),
}

/// An immutable source image, shared read-only by every episode on it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub source: SceneSource,
    pub width: u32,
    pub height: u32,
    pub ground_truth: Vec<LabeledRect>,
}

impl Scene {
    pub fn synthetic(spec: SyntheticSpec) -> Result<Self, ToolError> {
        if spec.width == 0 || spec.height == 0 {
            return Err(ToolError::EmptyCanvas);
        }
        if let Some(o) = spec
            .objects
            .iter()
            .find(|o| o.width == 0 || o.height == 0 || o.x_max() > spec.width || o.y_max() > spec.height)
        {
            return Err(ToolError::InvalidScene(format!(
                "object `{}` at ({}, {}) size {}x{} does not fit the canvas",
                o.label, o.x, o.y, o.width, o.height
            )));
        }
        Ok(Self {
            width: spec.width,
            height: spec.height,
            ground_truth: spec.objects.clone(),
            source: SceneSource::Synthetic(Arc::new(spec)),
        })
    }

    pub fn from_image(img: RgbImage) -> Result<Self, ToolError> {
        let (width, height) = img.dimensions();
        if width == 0 || height == 0 {
            return Err(ToolError::EmptyCanvas);
        }
        Ok(Self {
            source: SceneSource::Raster(Arc::new(img)),
            width,
            height,
            ground_truth: Vec::new(),
        })
    }

    /// Loads a PNG/JPEG/TIFF raster.
    pub fn open(path: &Path) -> Result<Self, ToolError> {
        let img = image::open(path).map_err(|e| ToolError::Unreadable(format!("{}: {e}", path.display())))?;
        Self::from_image(img.to_rgb8())
    }

    pub fn image_frame(&self) -> FrameBox {
        FrameBox::image(self.width, self.height).expect("scene has nonzero size")
    }

    /// Ground truth in the global relative frame.
    pub fn ground_truth_norm(&self) -> Vec<(String, NormBox)> {
        let frame = self.image_frame();
        self.ground_truth
            .iter()
            .map(|r| (r.label.clone(), box_to_relative(r.pixel_box(), &frame).expect("validated at load")))
            .collect()
    }

    /// Renders the image-frame `region` into an `out_w x out_h` raster.
    pub fn render(&self, region: &FrameBox, out_w: u32, out_h: u32) -> RgbImage {
        match &self.source {
            SceneSource::Synthetic(spec) => render_synthetic(spec, region, out_w, out_h),
            SceneSource::Raster(img) => {
                let crop = image::imageops::crop_imm(
                    img.as_ref(),
                    region.x_min,
                    region.y_min,
                    region.width,
                    region.height,
                )
                .to_image();
                if (out_w, out_h) == (region.width, region.height) {
                    crop
                } else {
                    image::imageops::thumbnail(&crop, out_w, out_h)
                }
            }
        }
    }
}

/// Nearest-neighbour rasterization: output pixel `i` samples the image point
/// at the center of its footprint.
fn render_synthetic(spec: &SyntheticSpec, region: &FrameBox, out_w: u32, out_h: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(out_w, out_h, image::Rgb(spec.background));
    let sx = region.width as f64 / out_w as f64;
    let sy = region.height as f64 / out_h as f64;
    // First output index whose sample point is >= `edge`.
    let first = |edge: f64, origin: u32, scale: f64, n: u32| -> u32 {
        let i = ((edge - origin as f64) / scale - 0.5).ceil();
        i.clamp(0.0, n as f64) as u32
    };
    for o in &spec.objects {
        let x0 = first(o.x as f64, region.x_min, sx, out_w);
        let x1 = first(o.x_max() as f64, region.x_min, sx, out_w);
        let y0 = first(o.y as f64, region.y_min, sy, out_h);
        let y1 = first(o.y_max() as f64, region.y_min, sy, out_h);
        let c = image::Rgb(label_color(&o.label));
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, y, c);
            }
        }
    }
    img
}
