//! Scale-invariant coordinates.
//!
//! Every spatial reference the model reads or writes lives on a discrete
//! 0..=1000 grid relative to some view. Pixel frames ([`FrameBox`]) describe
//! where a view sits inside its parent view's native pixel grid, and a
//! [`FrameChain`] strings them together from the full image down to the
//! current crop.
//!
//! Forward transforms round half away from zero. Inverse transforms and chain
//! composition stay in continuous arithmetic and round exactly once at the end.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Size of the relative grid along each axis.
pub const REL_EXTENT: i32 = 1000;

/// Frame id of the raw image, i.e. the parent of the global view.
pub const IMAGE_FRAME: &str = "image";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point ({x}, {y}) lies outside frame {frame}")]
    OutOfFrame { x: f64, y: f64, frame: String },
    #[error("box corners are inverted: ({x1}, {y1}) .. ({x2}, {y2})")]
    InvertedBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid relative box [{0}, {1}, {2}, {3}]")]
    InvalidNormBox(i64, i64, i64, i64),
    #[error("invalid frame {frame}: {reason}")]
    InvalidFrame { frame: String, reason: String },
    #[error("broken frame chain at link {index}: expected parent {expected}, found {found}")]
    BrokenChain { index: usize, expected: String, found: String },
    #[error("empty frame chain")]
    EmptyChain,
}

/// Zoom level of a view: global, region or object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ZoomLevel {
    L0,
    L1,
    L2,
}

impl ZoomLevel {
    pub fn deeper(self) -> ZoomLevel {
        match self {
            ZoomLevel::L0 => ZoomLevel::L1,
            ZoomLevel::L1 | ZoomLevel::L2 => ZoomLevel::L2,
        }
    }
}

/// A continuous point in some pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A continuous corner-form box in some pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }
}

/// An axis-aligned pixel rectangle `(x_min, y_min, width, height)` living in
/// the pixel grid of the frame named by `frame_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame_id: String,
    pub x_min: u32,
    pub y_min: u32,
    pub width: u32,
    pub height: u32,
}

impl FrameBox {
    pub fn new(
        frame_id: impl Into<String>,
        x_min: u32,
        y_min: u32,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let frame_id = frame_id.into();
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidFrame {
                frame: frame_id,
                reason: "zero extent".into(),
            });
        }
        Ok(Self {
            frame_id,
            x_min,
            y_min,
            width,
            height,
        })
    }

    /// Frame covering a whole `width x height` image.
    pub fn image(width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(IMAGE_FRAME, 0, 0, width, height)
    }

    pub fn x_max(&self) -> u32 {
        self.x_min + self.width
    }

    pub fn y_max(&self) -> u32 {
        self.y_min + self.height
    }

    pub fn as_pixel_box(&self) -> PixelBox {
        PixelBox::new(
            self.x_min as f64,
            self.y_min as f64,
            self.x_max() as f64,
            self.y_max() as f64,
        )
    }

    fn contains_point(&self, p: PixelPoint) -> bool {
        p.x >= self.x_min as f64
            && p.x <= self.x_max() as f64
            && p.y >= self.y_min as f64
            && p.y <= self.y_max() as f64
    }
}

/// A box on the relative 0..=1000 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i32; 4]")]
pub struct NormBox {
    x1: i32,
    y1: i32,
    x2: i32,
    y2: i32,
}

impl NormBox {
    pub const FULL: NormBox = NormBox {
        x1: 0,
        y1: 0,
        x2: REL_EXTENT,
        y2: REL_EXTENT,
    };

    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, GeometryError> {
        let max = REL_EXTENT as i64;
        let ok = (0..=max).contains(&x1)
            && (0..=max).contains(&y1)
            && (0..=max).contains(&x2)
            && (0..=max).contains(&y2)
            && x1 <= x2
            && y1 <= y2;
        if !ok {
            return Err(GeometryError::InvalidNormBox(x1, y1, x2, y2));
        }
        Ok(Self {
            x1: x1 as i32,
            y1: y1 as i32,
            x2: x2 as i32,
            y2: y2 as i32,
        })
    }

    pub fn x1(&self) -> i32 {
        self.x1
    }
    pub fn y1(&self) -> i32 {
        self.y1
    }
    pub fn x2(&self) -> i32 {
        self.x2
    }
    pub fn y2(&self) -> i32 {
        self.y2
    }

    pub fn coords(&self) -> [i32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> i32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i32 {
        self.y2 - self.y1
    }

    /// Half-open area in squared relative units.
    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn is_degenerate(&self) -> bool {
        self.x1 == self.x2 || self.y1 == self.y2
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x1 + self.x2) as f64 / 2.0,
            (self.y1 + self.y2) as f64 / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &NormBox) -> i64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0) as i64;
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0) as i64;
        w * h
    }

    pub fn contains(&self, other: &NormBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn as_rel_rect(&self) -> RelRect {
        RelRect::new(self.x1 as f64, self.y1 as f64, self.x2 as f64, self.y2 as f64)
    }
}

impl TryFrom<[i64; 4]> for NormBox {
    type Error = GeometryError;
    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        NormBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormBox> for [i32; 4] {
    fn from(b: NormBox) -> Self {
        b.coords()
    }
}

impl fmt::Display for NormBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// A point on the relative 0..=1000 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormPoint {
    u: i32,
    v: i32,
}

impl NormPoint {
    pub fn new(u: i64, v: i64) -> Result<Self, GeometryError> {
        let max = REL_EXTENT as i64;
        if !(0..=max).contains(&u) || !(0..=max).contains(&v) {
            return Err(GeometryError::InvalidNormBox(u, v, u, v));
        }
        Ok(Self {
            u: u as i32,
            v: v as i32,
        })
    }
    pub fn u(&self) -> i32 {
        self.u
    }
    pub fn v(&self) -> i32 {
        self.v
    }
}

/// Continuous box on the relative grid, used wherever composition must not
/// round (plan coverage, chain composition of relative boxes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelRect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl RelRect {
    pub const FULL: RelRect = RelRect {
        x1: 0.0,
        y1: 0.0,
        x2: 1000.0,
        y2: 1000.0,
    };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn intersection_area(&self, other: &RelRect) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Maps a box expressed relative to `self` into `self`'s parent frame.
    pub fn compose(&self, inner: &NormBox) -> RelRect {
        let w = self.x2 - self.x1;
        let h = self.y2 - self.y1;
        let k = REL_EXTENT as f64;
        RelRect::new(
            self.x1 + inner.x1 as f64 / k * w,
            self.y1 + inner.y1 as f64 / k * h,
            self.x1 + inner.x2 as f64 / k * w,
            self.y1 + inner.y2 as f64 / k * h,
        )
    }

    /// Inverse of [`RelRect::compose`] without rounding.
    pub fn localize(&self, outer: &RelRect) -> RelRect {
        let w = self.x2 - self.x1;
        let h = self.y2 - self.y1;
        let k = REL_EXTENT as f64;
        RelRect::new(
            (outer.x1 - self.x1) / w * k,
            (outer.y1 - self.y1) / h * k,
            (outer.x2 - self.x1) / w * k,
            (outer.y2 - self.y1) / h * k,
        )
    }

    /// Rounds to the grid, clamping into range and widening collapsed edges.
    pub fn round(&self) -> NormBox {
        let c = |v: f64| v.round().clamp(0.0, REL_EXTENT as f64) as i64;
        let (x1, x2) = widen(c(self.x1), c(self.x2));
        let (y1, y2) = widen(c(self.y1), c(self.y2));
        NormBox::new(x1, y1, x2, y2).expect("rounded box is in range")
    }

    /// Rounds outward (floor/ceil) to the grid.
    pub fn round_outward(&self) -> NormBox {
        let max = REL_EXTENT as f64;
        let (x1, x2) = widen(
            self.x1.floor().clamp(0.0, max) as i64,
            self.x2.ceil().clamp(0.0, max) as i64,
        );
        let (y1, y2) = widen(
            self.y1.floor().clamp(0.0, max) as i64,
            self.y2.ceil().clamp(0.0, max) as i64,
        );
        NormBox::new(x1, y1, x2, y2).expect("rounded box is in range")
    }
}

fn widen(lo: i64, hi: i64) -> (i64, i64) {
    if lo != hi {
        return (lo, hi);
    }
    let max = REL_EXTENT as i64;
    if hi < max {
        (lo, hi + 1)
    } else {
        (lo - 1, hi)
    }
}

fn rel_coord(coord: f64, min: u32, extent: u32) -> f64 {
    ((coord - min as f64) / extent as f64 * REL_EXTENT as f64).round()
}

/// Forward transform of a pixel point into the relative grid of `roi`.
pub fn to_relative(p: PixelPoint, roi: &FrameBox) -> Result<NormPoint, GeometryError> {
    if !roi.contains_point(p) {
        return Err(GeometryError::OutOfFrame {
            x: p.x,
            y: p.y,
            frame: roi.frame_id.clone(),
        });
    }
    let u = rel_coord(p.x, roi.x_min, roi.width) as i64;
    let v = rel_coord(p.y, roi.y_min, roi.height) as i64;
    NormPoint::new(u, v)
}

/// Forward transform of a pixel box, corner by corner.
///
/// A box whose corners collapse onto one grid line is widened by one unit on
/// the right/bottom edge (or the left/top edge when already at 1000).
pub fn box_to_relative(b: PixelBox, roi: &FrameBox) -> Result<NormBox, GeometryError> {
    if b.x2 < b.x1 || b.y2 < b.y1 {
        return Err(GeometryError::InvertedBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        });
    }
    let a = to_relative(PixelPoint::new(b.x1, b.y1), roi)?;
    let c = to_relative(PixelPoint::new(b.x2, b.y2), roi)?;
    let (x1, x2) = widen(a.u as i64, c.u as i64);
    let (y1, y2) = widen(a.v as i64, c.v as i64);
    NormBox::new(x1, y1, x2, y2)
}

/// Inverse transform of a relative point; no rounding.
pub fn point_to_pixels(n: NormPoint, roi: &FrameBox) -> PixelPoint {
    let k = REL_EXTENT as f64;
    PixelPoint::new(
        roi.x_min as f64 + n.u as f64 / k * roi.width as f64,
        roi.y_min as f64 + n.v as f64 / k * roi.height as f64,
    )
}

/// Inverse transform of a relative box; no rounding.
pub fn box_to_pixels(n: &NormBox, roi: &FrameBox) -> PixelBox {
    let k = REL_EXTENT as f64;
    PixelBox::new(
        roi.x_min as f64 + n.x1 as f64 / k * roi.width as f64,
        roi.y_min as f64 + n.y1 as f64 / k * roi.height as f64,
        roi.x_min as f64 + n.x2 as f64 / k * roi.width as f64,
        roi.y_min as f64 + n.y2 as f64 / k * roi.height as f64,
    )
}

/// Intersection over union on half-open boxes. Zero-area boxes score 0.
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// The pixel frame that a zoom on `bbox` carves out of a parent view of size
/// `parent_width x parent_height`, rounded outward to whole pixels.
pub fn crop_frame(
    parent_id: &str,
    parent_width: u32,
    parent_height: u32,
    bbox: &NormBox,
) -> Result<FrameBox, GeometryError> {
    let k = REL_EXTENT as f64;
    let x1 = (bbox.x1 as f64 / k * parent_width as f64).floor() as u32;
    let y1 = (bbox.y1 as f64 / k * parent_height as f64).floor() as u32;
    let x2 = ((bbox.x2 as f64 / k * parent_width as f64).ceil() as u32).min(parent_width);
    let y2 = ((bbox.y2 as f64 / k * parent_height as f64).ceil() as u32).min(parent_height);
    FrameBox::new(
        parent_id,
        x1,
        y1,
        x2.saturating_sub(x1),
        y2.saturating_sub(y1),
    )
}

/// One link of a [`FrameChain`]: `frame` lives in the native pixel grid of
/// its parent view and produces the view `view_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLink {
    pub frame: FrameBox,
    pub view_id: String,
}

/// Pixel frames from the raw image down to one view.
///
/// Link 0 is the whole image (parent [`IMAGE_FRAME`]) and produces the global
/// view. Link `i` is expressed in the native pixel grid of the view produced
/// by link `i - 1`, with its origin at that view's top-left corner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameChain {
    links: Vec<FrameLink>,
}

impl FrameChain {
    pub fn global(width: u32, height: u32, view_id: impl Into<String>) -> Result<Self, GeometryError> {
        Ok(Self {
            links: vec![FrameLink {
                frame: FrameBox::image(width, height)?,
                view_id: view_id.into(),
            }],
        })
    }

    pub fn from_links(links: Vec<FrameLink>) -> Result<Self, GeometryError> {
        let chain = Self { links };
        chain.validate()?;
        Ok(chain)
    }

    pub fn links(&self) -> &[FrameLink] {
        &self.links
    }

    /// Number of zooms below the global view.
    pub fn depth(&self) -> usize {
        self.links.len().saturating_sub(1)
    }

    pub fn view_id(&self) -> &str {
        &self.links.last().expect("chain is nonempty").view_id
    }

    pub fn innermost(&self) -> &FrameBox {
        &self.links.last().expect("chain is nonempty").frame
    }

    pub fn global_frame(&self) -> &FrameBox {
        &self.links[0].frame
    }

    /// Extends the chain by a crop of the innermost view.
    pub fn push(&self, frame: FrameBox, view_id: impl Into<String>) -> Result<Self, GeometryError> {
        let mut links = self.links.clone();
        links.push(FrameLink {
            frame,
            view_id: view_id.into(),
        });
        Self::from_links(links)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let first = self.links.first().ok_or(GeometryError::EmptyChain)?;
        if first.frame.frame_id != IMAGE_FRAME {
            return Err(GeometryError::BrokenChain {
                index: 0,
                expected: IMAGE_FRAME.into(),
                found: first.frame.frame_id.clone(),
            });
        }
        for (i, pair) in self.links.windows(2).enumerate() {
            let (parent, child) = (&pair[0], &pair[1]);
            if child.frame.frame_id != parent.view_id {
                return Err(GeometryError::BrokenChain {
                    index: i + 1,
                    expected: parent.view_id.clone(),
                    found: child.frame.frame_id.clone(),
                });
            }
            if child.frame.x_max() > parent.frame.width || child.frame.y_max() > parent.frame.height {
                return Err(GeometryError::InvalidFrame {
                    frame: child.view_id.clone(),
                    reason: "extends past its parent view".into(),
                });
            }
        }
        Ok(())
    }

    /// Continuous image-frame pixel box of a box given relative to the
    /// innermost view.
    pub fn to_image_pixels(&self, n: &NormBox) -> PixelBox {
        let last = self.links.len() - 1;
        let mut b = box_to_pixels(n, &self.links[last].frame);
        for link in self.links[..last].iter().rev() {
            b = b.translate(link.frame.x_min as f64, link.frame.y_min as f64);
        }
        b
    }

    /// Image-frame pixel rectangle covered by the innermost view.
    pub fn image_region(&self) -> FrameBox {
        let (mut x, mut y) = (0u32, 0u32);
        for link in &self.links {
            x += link.frame.x_min;
            y += link.frame.y_min;
        }
        let inner = self.innermost();
        FrameBox {
            frame_id: IMAGE_FRAME.into(),
            x_min: x,
            y_min: y,
            width: inner.width,
            height: inner.height,
        }
    }

    /// Global relative region covered by the innermost view.
    pub fn global_region(&self) -> NormBox {
        compose_to_global(&NormBox::FULL, self).expect("validated chain")
    }
}

/// Maps a box relative to the innermost view of `chain` into the global
/// view's relative grid, rounding once.
pub fn compose_to_global(n: &NormBox, chain: &FrameChain) -> Result<NormBox, GeometryError> {
    chain.validate()?;
    let image = chain.global_frame();
    let b = chain.to_image_pixels(n);
    // Float drift at the image border must not push a corner out of frame.
    let cx = |v: f64| v.clamp(image.x_min as f64, image.x_max() as f64);
    let cy = |v: f64| v.clamp(image.y_min as f64, image.y_max() as f64);
    let b = PixelBox::new(cx(b.x1), cy(b.y1), cx(b.x2), cy(b.y2));
    box_to_relative(b, image)
}
