//! Axis-aligned box arithmetic and the sliding-window proposal grid.
//!
//! Boxes live in continuous pixel coordinates with a top-left origin. Nothing
//! here rounds; rasterization and serialization decide how to discretize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x, y, w, h)`, top-left origin, pixel units.
///
/// Serializes as a four-element JSON array `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self> {
        BBox::try_new(x, y, w, h)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    /// Builds a box without validation. Use [`BBox::try_new`] for untrusted input.
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn try_new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::contract(format!(
                "invalid box [{x}, {y}, {w}, {h}]: coordinates must be finite with w > 0 and h > 0"
            )))
        }
    }

    /// Builds the box whose center is `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when the box lies inside the closed square `[0, side] x [0, side]`.
    pub fn contained_in(&self, side: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= side && self.bottom() <= side
    }

    /// True when the point lies in the closed box region.
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Smallest box covering both inputs.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        let r = self.right().max(other.right());
        let b = self.bottom().max(other.bottom());
        BBox::new(x, y, r - x, b - y)
    }

    /// Sum of absolute differences over the four `(x, y, w, h)` coordinates.
    pub fn l1_distance(&self, other: &BBox) -> f64 {
        (self.x - other.x).abs()
            + (self.y - other.y).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }

    /// Divides every coordinate by `side`, mapping pixel boxes into `[0, 1]`.
    pub fn normalized(&self, side: f64) -> BBox {
        BBox::new(self.x / side, self.y / side, self.w / side, self.h / side)
    }
}

/// Intersection over union. Symmetric, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: IoU minus the empty fraction of the enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.enclosing(b).area();
    if union <= 0.0 || hull <= 0.0 {
        return 0.0;
    }
    let iou = inter / union;
    iou - (hull - union) / hull
}

/// Sliding-window proposal grid parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    /// Side `S` of the square image, in pixels.
    pub image_side: f64,
    /// Target proposal count `N`; the anchor grid side is `floor(sqrt(floor(N / 3)))`.
    pub target_count: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub num_scales: usize,
    /// `(r_w, r_h)` aspect ratio pairs, emitted in this order per scale.
    pub aspect_ratios: Vec<(f64, f64)>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            image_side: 512.0,
            target_count: 435,
            scale_min: 64.0,
            scale_max: 256.0,
            num_scales: 5,
            aspect_ratios: vec![(1.0, 1.0), (2.0, 1.0), (1.0, 2.0)],
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.image_side.is_finite() && self.image_side > 0.0) {
            return Err(Error::config("image_side must be a positive finite number"));
        }
        if self.target_count < 3 {
            return Err(Error::config("target_count must be at least 3"));
        }
        if !(self.scale_min.is_finite() && self.scale_max.is_finite() && self.scale_min > 0.0) {
            return Err(Error::config("scales must be positive and finite"));
        }
        if self.scale_min > self.scale_max {
            return Err(Error::config("scale_min must not exceed scale_max"));
        }
        if self.num_scales == 0 {
            return Err(Error::config("num_scales must be at least 1"));
        }
        if self.aspect_ratios.is_empty() {
            return Err(Error::config("at least one aspect ratio is required"));
        }
        if self
            .aspect_ratios
            .iter()
            .any(|&(rw, rh)| !(rw.is_finite() && rh.is_finite() && rw > 0.0 && rh > 0.0))
        {
            return Err(Error::config("aspect ratio terms must be positive and finite"));
        }
        Ok(())
    }

    /// Anchor grid side `G`.
    pub fn grid_size(&self) -> usize {
        (self.target_count / 3).isqrt()
    }

    pub fn anchor_count(&self) -> usize {
        self.grid_size().pow(2)
    }

    /// Number of candidates before boundary pruning.
    pub fn unconstrained_count(&self) -> usize {
        self.anchor_count() * self.num_scales * self.aspect_ratios.len()
    }

    /// Linearly spaced scales, inclusive of both endpoints.
    pub fn scales(&self) -> Vec<f64> {
        if self.num_scales == 1 {
            return vec![self.scale_min];
        }
        let span = self.scale_max - self.scale_min;
        let last = (self.num_scales - 1) as f64;
        (0..self.num_scales)
            .map(|k| self.scale_min + span * k as f64 / last)
            .collect()
    }

    /// Anchor coordinate for grid index `k` (same on both axes).
    pub fn anchor_coord(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.image_side / self.grid_size() as f64
    }
}

/// Every candidate centered on anchor `(row, col)`, before pruning, in
/// scale-then-ratio order.
pub fn anchor_candidates(cfg: &ProposalConfig, row: usize, col: usize) -> Vec<BBox> {
    let cx = cfg.anchor_coord(col);
    let cy = cfg.anchor_coord(row);
    let mut out = Vec::with_capacity(cfg.num_scales * cfg.aspect_ratios.len());
    for s in cfg.scales() {
        for &(rw, rh) in &cfg.aspect_ratios {
            let w = s * (rw / rh).sqrt();
            let h = s * (rh / rw).sqrt();
            out.push(BBox::from_center(cx, cy, w, h));
        }
    }
    out
}

/// Candidates at anchor `(row, col)` that survive boundary pruning.
pub fn anchor_proposals(cfg: &ProposalConfig, row: usize, col: usize) -> Vec<BBox> {
    anchor_candidates(cfg, row, col)
        .into_iter()
        .filter(|b| b.contained_in(cfg.image_side))
        .collect()
}

/// The canonical proposal list: anchors row-major, then scale ascending, then
/// ratio in configured order. Candidates leaving `[0, S] x [0, S]` are dropped.
pub fn generate_proposals(cfg: &ProposalConfig) -> Result<Vec<BBox>> {
    cfg.validate()?;
    let g = cfg.grid_size();
    let mut out = Vec::with_capacity(cfg.unconstrained_count());
    for row in 0..g {
        for col in 0..g {
            out.extend(anchor_proposals(cfg, row, col));
        }
    }
    Ok(out)
}
