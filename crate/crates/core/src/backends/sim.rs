//! Deterministic synthetic-scene backend.
//!
//! Each scene carries, per object class, a rectangular support region where
//! insertions succeed. The simulated inpainter accepts a box iff its center is
//! inside a support region and its area is within a factor of four of the
//! class's nominal area; the simulated detector reports the inserted box with
//! bounded jitter; the simulated ranker scores by distance to the region
//! center. Divergence traces come from two log-normal families whose means
//! match the observed success/failure gap.
//!
//! All randomness is drawn from a ChaCha stream keyed on
//! `(seed, scene_id, proposal index, op)`, so results do not depend on the
//! order or thread in which requests arrive.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocol::{Op, Status, WorkerRequest, WorkerResponse};
use super::Worker;
use crate::earlystop::{DivergenceTrace, Label};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::verify::Detection;

/// Index used for requests that do not belong to a proposal.
pub const NO_PROPOSAL: u64 = u64::MAX;

/// Accepted area band around the nominal area, as multiplicative factors.
pub const AREA_BAND: (f64, f64) = (0.25, 4.0);

/// RNG stream for one `(seed, scene, index, tag)` key.
pub fn key_rng(seed: u64, scene_id: &str, index: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((scene_id.len() as u64).to_le_bytes());
    h.update(scene_id.as_bytes());
    h.update(index.to_le_bytes());
    h.update(tag.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRegion {
    pub class: String,
    pub region: BBox,
    pub peak_reward: f64,
    pub nominal_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub side: f64,
    pub supports: Vec<SupportRegion>,
    /// Objects already present in the background.
    #[serde(default)]
    pub background_objects: Vec<Detection>,
    /// Maximum per-coordinate detector jitter, in pixels.
    pub detector_noise: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimOutcome {
    Ok,
    Refused,
}

/// Chebyshev distance of `b`'s center from the region center, scaled so the
/// region border sits at 1.
pub fn normalized_center_distance(region: &BBox, b: &BBox) -> f64 {
    let (cx, cy) = b.center();
    let (rx, ry) = region.center();
    let dx = (cx - rx).abs() / (region.w / 2.0);
    let dy = (cy - ry).abs() / (region.h / 2.0);
    dx.max(dy)
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        for s in &self.supports {
            if !s.region.is_valid() || !s.region.contained_in(self.side) {
                return Err(Error::config(format!(
                    "support region for {:?} in scene {:?} is not inside the image",
                    s.class, self.scene_id
                )));
            }
            if s.nominal_area.is_nan() || s.nominal_area <= 0.0 {
                return Err(Error::config("nominal area must be positive"));
            }
        }
        Ok(())
    }

    /// First support region of `class` that accepts `b`.
    pub fn accepting_region(&self, b: &BBox, class: &str) -> Option<&SupportRegion> {
        let (cx, cy) = b.center();
        self.supports.iter().find(|s| {
            s.class == class
                && s.region.contains_point(cx, cy)
                && b.area() >= AREA_BAND.0 * s.nominal_area
                && b.area() <= AREA_BAND.1 * s.nominal_area
        })
    }

    pub fn support_regions<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a SupportRegion> + 'a {
        self.supports.iter().filter(move |s| s.class == class)
    }

    fn rng(&self, index: u64, tag: &str) -> ChaCha8Rng {
        key_rng(self.rng_seed, &self.scene_id, index, tag)
    }
}

pub fn sim_inpaint(scene: &SyntheticScene, b: &BBox, class: &str) -> SimOutcome {
    if scene.accepting_region(b, class).is_some() {
        SimOutcome::Ok
    } else {
        SimOutcome::Refused
    }
}

/// Detections on the untouched background: every planted object, any class.
pub fn sim_detect_background(scene: &SyntheticScene) -> Vec<Detection> {
    scene.background_objects.clone()
}

/// Detections on the image produced by inpainting `inserted` at `proposal`.
///
/// Refused insertions yield nothing. Accepted ones yield the jittered inserted
/// box followed by any planted objects of the same class.
pub fn sim_detect(scene: &SyntheticScene, proposal: u64, inserted: &BBox, class: &str) -> Vec<Detection> {
    let Some(support) = scene.accepting_region(inserted, class) else {
        return Vec::new();
    };
    let mut rng = scene.rng(proposal, "detect");
    let noise = scene.detector_noise.max(0.0);
    let mut jitter = || if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
    let (dx, dy, dw, dh) = (jitter(), jitter(), jitter(), jitter());
    let w = (inserted.w + dw).clamp(1.0, scene.side);
    let h = (inserted.h + dh).clamp(1.0, scene.side);
    let x = (inserted.x + dx).clamp(0.0, scene.side - w);
    let y = (inserted.y + dy).clamp(0.0, scene.side - h);
    let d = normalized_center_distance(&support.region, inserted).min(1.0);
    let confidence = 0.5 + 0.45 * (1.0 - d);

    let mut out = vec![Detection::new(BBox::new(x, y, w, h), confidence, class)];
    out.extend(scene.background_objects.iter().filter(|o| o.class_label == class).cloned());
    out
}

/// Reward peaks at the region center and falls linearly to zero at its border.
pub fn sim_rank(scene: &SyntheticScene, inserted: &BBox, class: &str) -> f64 {
    match scene.accepting_region(inserted, class) {
        Some(s) => s.peak_reward * (1.0 - normalized_center_distance(&s.region, inserted).min(1.0)),
        None => 0.0,
    }
}

/// Per-step log-normal divergence families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceModel {
    pub success_mean: f64,
    pub failure_mean: f64,
    /// Log-space spread per denoising step; the last value repeats.
    pub log_sigmas: Vec<f64>,
}

impl Default for DivergenceModel {
    fn default() -> Self {
        DivergenceModel {
            success_mean: 1.47,
            failure_mean: 0.38,
            log_sigmas: vec![1.1, 0.75, 0.65, 0.58, 0.5],
        }
    }
}

impl DivergenceModel {
    fn sigma(&self, step: usize) -> f64 {
        let last = self.log_sigmas.len().saturating_sub(1);
        self.log_sigmas.get(step.min(last)).copied().unwrap_or(0.5)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, success: bool, steps: usize) -> Vec<f64> {
        let mean = if success { self.success_mean } else { self.failure_mean };
        (0..steps)
            .map(|t| {
                let sigma = self.sigma(t);
                let mu = mean.ln() - sigma * sigma / 2.0;
                LogNormal::new(mu, sigma).expect("finite parameters").sample(rng)
            })
            .collect()
    }
}

pub fn sim_divergence(
    scene: &SyntheticScene,
    model: &DivergenceModel,
    proposal: u64,
    b: &BBox,
    class: &str,
    steps: usize,
) -> Vec<f64> {
    let success = sim_inpaint(scene, b, class) == SimOutcome::Ok;
    model.sample(&mut scene.rng(proposal, "divergence"), success, steps)
}

/// Labeled traces with a fixed success fraction, for calibration studies.
pub fn synthetic_traces(
    model: &DivergenceModel,
    count: usize,
    success_fraction: f64,
    steps: usize,
    seed: u64,
) -> Vec<DivergenceTrace> {
    (0..count)
        .map(|i| {
            let mut rng = key_rng(seed, "traces", i as u64, "divergence");
            let success = rng.random_bool(success_fraction.clamp(0.0, 1.0));
            DivergenceTrace {
                proposal_index: i,
                deltas: model.sample(&mut rng, success, steps),
                label: if success { Label::Success } else { Label::Failure },
            }
        })
        .collect()
}

/// Knobs for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenParams {
    /// Chance that a class gets no support region at all.
    pub empty_support_prob: f64,
    /// Chance that a same-class object is planted inside the support region.
    pub planted_prob: f64,
    /// Region side range as a fraction of the image side.
    pub region_frac: (f64, f64),
    pub peak_reward: (f64, f64),
    /// Nominal object side as a fraction of the shorter region side.
    pub nominal_frac: f64,
    pub detector_noise: f64,
}

impl Default for SceneGenParams {
    fn default() -> Self {
        SceneGenParams {
            empty_support_prob: 0.1,
            planted_prob: 0.3,
            region_frac: (0.4, 0.65),
            peak_reward: (3.0, 6.0),
            nominal_frac: 0.3,
            detector_noise: 3.0,
        }
    }
}

/// Builds a scene with one (possibly absent) support region per class.
pub fn generate_scene(
    scene_id: &str,
    side: f64,
    classes: &[String],
    seed: u64,
    params: &SceneGenParams,
) -> SyntheticScene {
    let mut supports = Vec::new();
    let mut planted = Vec::new();
    let mut sorted: Vec<&String> = classes.iter().collect();
    sorted.sort();
    sorted.dedup();
    for class in sorted {
        let mut rng = key_rng(seed, scene_id, NO_PROPOSAL, &format!("scene/{class}"));
        if rng.random_bool(params.empty_support_prob.clamp(0.0, 1.0)) {
            continue;
        }
        let (lo, hi) = params.region_frac;
        let w = side * rng.random_range(lo..=hi);
        let h = side * rng.random_range(lo..=hi);
        let x = rng.random_range(0.0..=side - w);
        let y = rng.random_range(0.0..=side - h);
        let region = BBox::new(x, y, w, h);
        let nominal_side = params.nominal_frac * w.min(h);
        supports.push(SupportRegion {
            class: class.clone(),
            region,
            peak_reward: rng.random_range(params.peak_reward.0..=params.peak_reward.1),
            nominal_area: nominal_side * nominal_side,
        });
        if rng.random_bool(params.planted_prob.clamp(0.0, 1.0)) {
            let cx = rng.random_range(region.x..=region.right());
            let cy = rng.random_range(region.y..=region.bottom());
            let s = nominal_side.min(side);
            let px = (cx - s / 2.0).clamp(0.0, side - s);
            let py = (cy - s / 2.0).clamp(0.0, side - s);
            planted.push(Detection::new(BBox::new(px, py, s, s), 0.9, class.as_str()));
        }
    }
    SyntheticScene {
        scene_id: scene_id.to_owned(),
        side,
        supports,
        background_objects: planted,
        detector_noise: params.detector_noise,
        rng_seed: seed,
    }
}

/// Reference to the image produced by a simulated insertion.
pub fn inpaint_image_ref(proposal: u64, b: &BBox) -> String {
    format!("sim-inpaint/{proposal}/{}/{}/{}/{}", b.x, b.y, b.w, b.h)
}

/// Inverse of [`inpaint_image_ref`].
pub fn parse_image_ref(image_ref: &str) -> Option<(u64, BBox)> {
    let rest = image_ref.strip_prefix("sim-inpaint/")?;
    let parts: Vec<&str> = rest.split('/').collect();
    if parts.len() != 5 {
        return None;
    }
    let proposal = parts[0].parse().ok()?;
    let v: Vec<f64> = parts[1..].iter().map(|p| p.parse().ok()).collect::<Option<_>>()?;
    Some((proposal, BBox::try_new(v[0], v[1], v[2], v[3]).ok()?))
}

/// A set of synthetic scenes addressed by `scene_ref`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub scenes: BTreeMap<String, SyntheticScene>,
    #[serde(default)]
    pub divergence: DivergenceModel,
}

impl SimWorld {
    pub fn new(scenes: impl IntoIterator<Item = SyntheticScene>) -> Self {
        SimWorld {
            scenes: scenes.into_iter().map(|s| (s.scene_id.clone(), s)).collect(),
            divergence: DivergenceModel::default(),
        }
    }

    /// Answers one protocol request. Never fails; problems become `ERROR`.
    pub fn handle(&self, req: &WorkerRequest) -> WorkerResponse {
        let id = req.id;
        let Some(scene) = self.scenes.get(&req.scene_ref) else {
            return WorkerResponse::error(id, format!("unknown scene {:?}", req.scene_ref));
        };
        let proposal = req.proposal.map_or(NO_PROPOSAL, |p| p as u64);
        match req.op {
            Op::Inpaint => {
                let Some(b) = req.bbox else {
                    return WorkerResponse::error(id, "inpaint without box");
                };
                match sim_inpaint(scene, &b, &req.class) {
                    SimOutcome::Ok => WorkerResponse {
                        image_ref: Some(inpaint_image_ref(proposal, &b)),
                        ..WorkerResponse::new(id, Status::Ok)
                    },
                    SimOutcome::Refused => WorkerResponse::new(id, Status::Refused),
                }
            }
            Op::Detect => {
                let image_ref = req.image_ref.as_deref().unwrap_or_default();
                let detections = if image_ref == req.scene_ref {
                    sim_detect_background(scene)
                } else {
                    match parse_image_ref(image_ref) {
                        Some((p, b)) => sim_detect(scene, p, &b, &req.class),
                        None => return WorkerResponse::error(id, format!("unknown image {image_ref:?}")),
                    }
                };
                WorkerResponse { detections: Some(detections), ..WorkerResponse::new(id, Status::Ok) }
            }
            Op::Rank => match req.image_ref.as_deref().and_then(parse_image_ref) {
                Some((_, b)) => WorkerResponse {
                    reward: Some(sim_rank(scene, &b, &req.class)),
                    ..WorkerResponse::new(id, Status::Ok)
                },
                None => WorkerResponse::error(id, "rank needs a simulated image_ref"),
            },
            Op::Divergence => {
                let (Some(b), Some(steps)) = (req.bbox, req.steps) else {
                    return WorkerResponse::error(id, "divergence needs box and steps");
                };
                WorkerResponse {
                    deltas: Some(sim_divergence(scene, &self.divergence, proposal, &b, &req.class, steps)),
                    ..WorkerResponse::new(id, Status::Ok)
                }
            }
        }
    }
}

/// In-process worker backed by a shared [`SimWorld`].
#[derive(Debug, Clone)]
pub struct Simulator {
    world: Arc<SimWorld>,
}

impl Simulator {
    pub fn new(world: Arc<SimWorld>) -> Self {
        Simulator { world }
    }
}

impl Worker for Simulator {
    fn call(&mut self, request: &WorkerRequest) -> Result<WorkerResponse> {
        Ok(self.world.handle(request))
    }
}
