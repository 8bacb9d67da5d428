//! Spatial prior assembly and heatmap rasterization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::verify::VerifiedPlacement;

/// One verified, ranked placement inside a prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    #[serde(rename = "proposal")]
    pub proposal_index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub reward: f64,
    pub confidence: f64,
}

/// Verified placements of one class in one scene, in canonical proposal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialPrior {
    pub scene_id: String,
    pub class: String,
    pub entries: Vec<PriorEntry>,
}

impl SpatialPrior {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keeps the present placements, paired index-wise with `rewards`.
///
/// Rewards at absent positions are ignored. No reward-sign filtering happens
/// here; that is a rasterization concern.
pub fn assemble_prior(
    placements: &[VerifiedPlacement],
    rewards: &[f64],
    scene_id: impl Into<String>,
    class: impl Into<String>,
) -> Result<SpatialPrior> {
    if placements.len() != rewards.len() {
        return Err(Error::contract(format!(
            "{} placements but {} rewards",
            placements.len(),
            rewards.len()
        )));
    }
    let mut entries: Vec<PriorEntry> = placements
        .iter()
        .zip(rewards)
        .filter_map(|(p, &reward)| {
            p.verified.map(|v| PriorEntry {
                proposal_index: p.proposal_index,
                bbox: v.bbox,
                reward,
                confidence: v.confidence,
            })
        })
        .collect();
    entries.sort_by_key(|e| e.proposal_index);
    if entries.windows(2).any(|w| w[0].proposal_index == w[1].proposal_index) {
        return Err(Error::contract("duplicate proposal index in placements"));
    }
    Ok(SpatialPrior { scene_id: scene_id.into(), class: class.into(), entries })
}

/// Entry filtering and softmax settings for rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapParams {
    /// Entries need confidence strictly above this.
    pub conf_min: f64,
    /// Entries need reward strictly above this.
    pub reward_min: f64,
    pub temperature: f64,
}

impl Default for HeatmapParams {
    fn default() -> Self {
        HeatmapParams { conf_min: 0.4, reward_min: 0.0, temperature: 1.0 }
    }
}

/// Dense row-major grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Heatmap { width, height, values: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, px: usize, py: usize) -> f64 {
        self.values[py * self.width + px]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum over the pixels whose centers fall in `region` (half-open).
    pub fn mass_inside(&self, region: &BBox) -> f64 {
        let (xs, ys) = pixel_span(region, self.width, self.height);
        ys.flat_map(|py| xs.clone().map(move |px| (px, py)))
            .map(|(px, py)| self.get(px, py))
            .sum()
    }

    /// Adds `weight` to every pixel whose center falls in `b`. Returns the
    /// number of pixels touched.
    pub fn splat(&mut self, b: &BBox, weight: f64) -> usize {
        let (xs, ys) = pixel_span(b, self.width, self.height);
        let mut n = 0;
        for py in ys {
            let row = &mut self.values[py * self.width..(py + 1) * self.width];
            for v in &mut row[xs.clone()] {
                *v += weight;
                n += 1;
            }
        }
        n
    }

    /// Min-max normalization into `[0, 1]`; constant maps become all zeros.
    pub fn normalized(&self) -> Heatmap {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if self.values.is_empty() || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            vec![0.0; self.values.len()]
        } else {
            let span = hi - lo;
            self.values.iter().map(|v| (v - lo) / span).collect()
        };
        Heatmap { width: self.width, height: self.height, values }
    }

    /// Values in `[0, 1]` mapped linearly to 8-bit gray, row-major.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Binary PGM (P5), maxval 255.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_gray8())?;
        Ok(())
    }

    /// 8-bit grayscale PNG.
    pub fn write_png<W: Write>(&self, out: W) -> Result<()> {
        let mut enc = png::Encoder::new(out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.to_gray8())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}

/// Pixel index ranges whose centers `(p + 0.5)` fall in `[x, x + w) x [y, y + h)`.
fn pixel_span(
    b: &BBox,
    width: usize,
    height: usize,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    fn axis(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
        let start = (lo - 0.5).ceil().max(0.0);
        let end = (hi - 0.5).ceil().min(n as f64);
        if end <= start {
            0..0
        } else {
            start as usize..end as usize
        }
    }
    (axis(b.x, b.right(), width), axis(b.y, b.bottom(), height))
}

/// Entries passing the confidence and reward filters.
pub fn retained_entries<'a>(prior: &'a SpatialPrior, params: &HeatmapParams) -> Vec<&'a PriorEntry> {
    prior
        .entries
        .iter()
        .filter(|e| e.confidence > params.conf_min && e.reward > params.reward_min)
        .collect()
}

/// Softmax over `rewards / temperature`, max-shifted.
pub fn softmax(rewards: &[f64], temperature: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards.iter().map(|r| ((r - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Un-normalized density: each retained entry spreads its softmax weight
/// over the pixels of its verified box.
pub fn density_map(prior: &SpatialPrior, width: usize, height: usize, params: &HeatmapParams) -> Heatmap {
    let kept = retained_entries(prior, params);
    let rewards: Vec<f64> = kept.iter().map(|e| e.reward).collect();
    let weights = softmax(&rewards, params.temperature);
    let mut map = Heatmap::zeros(width, height);
    for (entry, w) in kept.iter().zip(weights) {
        map.splat(&entry.bbox, w);
    }
    map
}

pub fn rasterize_heatmap(
    prior: &SpatialPrior,
    width: usize,
    height: usize,
    params: &HeatmapParams,
) -> Result<Heatmap> {
    if width == 0 || height == 0 {
        return Err(Error::config("heatmap dimensions must be positive"));
    }
    Ok(density_map(prior, width, height, params).normalized())
}

/// Mean of the per-prior densities, normalized once at the end.
///
/// Priors whose class differs from `class` are skipped.
pub fn aggregate_class_prior(
    priors: &[SpatialPrior],
    class: &str,
    width: usize,
    height: usize,
    params: &HeatmapParams,
) -> Result<Heatmap> {
    if width == 0 || height == 0 {
        return Err(Error::config("heatmap dimensions must be positive"));
    }
    let mut acc = Heatmap::zeros(width, height);
    let mut count = 0usize;
    for prior in priors.iter().filter(|p| p.class == class) {
        let d = density_map(prior, width, height, params);
        for (a, v) in acc.values.iter_mut().zip(&d.values) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        acc.values.iter_mut().for_each(|v| *v /= n);
    }
    Ok(acc.normalized())
}
