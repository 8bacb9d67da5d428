//! End-to-end prior extraction: proposals, optional early rejection, then
//! inpaint, verify, suppress and rank per box, and finally dataset assembly.

pub mod dataset;
pub mod export;
pub mod sampling;
pub mod taxonomy;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use dataset::{assign_splits, read_records, write_records, DatasetEntry, DatasetRecord, Split};
pub use sampling::{sample_pairs, valid_pairs, Background};
pub use taxonomy::Taxonomy;

use crate::backends::sim::{generate_scene, DivergenceModel, SceneGenParams, SimWorld, SyntheticScene};
use crate::backends::{Status, Worker, WorkerRequest, WorkerResponse, WorkerSettings};
use crate::error::{Error, Result};
use crate::geometry::{generate_proposals, BBox, ProposalConfig};
use crate::prior::HeatmapParams;
use crate::verify::{self, Detection};

/// Default seed for every seeded step when none is given.
pub const DEFAULT_SEED: u64 = 7;

/// Divergence filter applied before inpainting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    /// Boxes with divergence below this at `step` are dropped. Accepts the
    /// string `"inf"` for a filter that drops everything.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    /// 1-based denoising step whose divergence is tested.
    pub step: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig { enabled: false, threshold: 0.7148, step: 2 }
    }
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) if matches!(t.as_str(), "inf" | "+inf" | "infinity") => Ok(f64::INFINITY),
        Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid threshold {t:?}"))),
    }
}

/// Simulator scenes: explicit ones win, the rest are generated per background.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub scenes: Vec<SyntheticScene>,
    pub generate: SceneGenParams,
    pub divergence: DivergenceModel,
}

/// Everything `run` needs, loaded from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub proposals: ProposalConfig,
    /// Detector confidence threshold.
    pub tau: f64,
    pub heatmap: HeatmapParams,
    pub early_stop: EarlyStopConfig,
    /// Inline taxonomy; takes precedence over `taxonomy_file`.
    pub taxonomy: Option<Taxonomy>,
    pub taxonomy_file: Option<PathBuf>,
    pub backgrounds: Vec<Background>,
    /// Pairs to sample; defaults to every valid pair once.
    pub pairs: Option<usize>,
    pub splits: [f64; 3],
    pub worker: WorkerSettings,
    pub sim: SimSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            proposals: ProposalConfig::default(),
            tau: verify::DEFAULT_TAU,
            heatmap: HeatmapParams::default(),
            early_stop: EarlyStopConfig::default(),
            taxonomy: None,
            taxonomy_file: None,
            backgrounds: Vec::new(),
            pairs: None,
            splits: [0.85, 0.10, 0.05],
            worker: WorkerSettings::default(),
            sim: SimSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; a relative `taxonomy_file` resolves against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let (Some(tf), Some(dir)) = (cfg.taxonomy_file.as_mut(), path.parent()) {
            if tf.is_relative() {
                *tf = dir.join(&*tf);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.proposals.validate()?;
        verify::check_unit("tau", self.tau)?;
        if self.early_stop.enabled && self.early_stop.step == 0 {
            return Err(Error::config("early_stop.step is 1-based and must be at least 1"));
        }
        if self.early_stop.threshold.is_nan() {
            return Err(Error::config("early_stop.threshold must be a number"));
        }
        dataset::split_counts(0, self.splits)?;
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        let t = match (&self.taxonomy, &self.taxonomy_file) {
            (Some(t), _) => t.clone(),
            (None, Some(path)) => Taxonomy::load(path)?,
            (None, None) => Taxonomy::builtin(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Simulator world covering every configured background.
    pub fn sim_world(&self, taxonomy: &Taxonomy) -> Result<SimWorld> {
        let mut world = SimWorld::new(self.sim.scenes.iter().cloned());
        world.divergence = self.sim.divergence.clone();
        for bg in &self.backgrounds {
            if world.scenes.contains_key(&bg.scene_ref) {
                continue;
            }
            let classes: Vec<String> =
                taxonomy.objects_for(&bg.background_class).into_iter().map(str::to_owned).collect();
            let scene = generate_scene(&bg.scene_ref, self.proposals.image_side, &classes, self.seed, &self.sim.generate);
            world.scenes.insert(bg.scene_ref.clone(), scene);
        }
        for scene in world.scenes.values() {
            scene.validate()?;
        }
        Ok(world)
    }
}

fn checked(resp: WorkerResponse, what: &str) -> Result<WorkerResponse> {
    match resp.status {
        Status::Error => Err(Error::Worker(format!(
            "{what}: {}",
            resp.message.as_deref().unwrap_or("worker reported ERROR")
        ))),
        _ => Ok(resp),
    }
}

fn missing(field: &str, resp: &WorkerResponse) -> Error {
    Error::Protocol {
        message: format!("OK response without {field}"),
        raw: serde_json::to_string(resp).unwrap_or_default(),
    }
}

/// Runs `job` for indices `0..n`, one thread per pool lane, and returns the
/// results in index order. The lowest-index error wins.
fn fan_out<T, F>(pool: &mut [Box<dyn Worker>], n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut dyn Worker, usize) -> Result<T> + Sync,
{
    if pool.is_empty() {
        return Err(Error::config("worker pool is empty"));
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let mut parts: Vec<(usize, Result<T>)> = thread::scope(|s| {
        let handles: Vec<_> = pool
            .iter_mut()
            .map(|worker| {
                let (next, failed, job) = (&next, &failed, &job);
                s.spawn(move || {
                    let mut local = Vec::new();
                    while !failed.load(Ordering::Relaxed) {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        let r = job(worker.as_mut(), i);
                        if r.is_err() {
                            failed.store(true, Ordering::Relaxed);
                        }
                        local.push((i, r));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("pipeline lane panicked"))
            .collect()
    });
    parts.sort_by_key(|(i, _)| *i);
    parts.into_iter().map(|(_, r)| r).collect()
}

/// Per-scene inputs shared by every proposal job.
struct SceneJob<'a> {
    scene_ref: &'a str,
    object_class: &'a str,
    cfg: &'a RunConfig,
    proposals: &'a [BBox],
    background_same_class: &'a [Detection],
}

impl SceneJob<'_> {
    fn run_one(&self, worker: &mut dyn Worker, i: usize) -> Result<DatasetEntry> {
        let proposal = self.proposals[i];
        let negative = DatasetEntry::negative(proposal);
        let (scene, class) = (self.scene_ref, self.object_class);

        let es = &self.cfg.early_stop;
        if es.enabled {
            let req = WorkerRequest::divergence(scene, class, i, proposal, es.step);
            let resp = checked(worker.call(&req)?, "divergence")?;
            let deltas = resp.deltas.as_ref().ok_or_else(|| missing("deltas", &resp))?;
            let delta = *deltas.get(es.step - 1).ok_or_else(|| missing("enough deltas", &resp))?;
            if delta < es.threshold {
                return Ok(negative);
            }
        }

        let resp = checked(worker.call(&WorkerRequest::inpaint(scene, class, i, proposal))?, "inpaint")?;
        if resp.status == Status::Refused {
            return Ok(negative);
        }
        let image_ref = resp.image_ref.clone().ok_or_else(|| missing("image_ref", &resp))?;

        let resp = checked(worker.call(&WorkerRequest::detect(scene, class, &image_ref, Some(i)))?, "detect")?;
        let detections: Vec<Detection> = resp
            .detections
            .unwrap_or_default()
            .into_iter()
            .filter(|d| d.class_label == class)
            .collect();
        let placement = verify::select_verified(i, &detections, &proposal, self.cfg.tau)?;
        let placement = verify::suppress_preexisting(placement, self.background_same_class);
        let Some(v) = placement.verified else {
            return Ok(negative);
        };

        let resp = checked(worker.call(&WorkerRequest::rank(scene, class, &image_ref, i))?, "rank")?;
        let reward = resp.reward.ok_or_else(|| missing("reward", &resp))?;
        Ok(DatasetEntry { proposal, verified: Some(v.bbox), confidence: Some(v.confidence), reward: Some(reward) })
    }
}

/// Extracts one record for `(background, object_class)`.
///
/// The split is provisional (`train`) until [`assign_splits`] runs.
pub fn run_scene(
    pool: &mut [Box<dyn Worker>],
    background: &Background,
    object_class: &str,
    cfg: &RunConfig,
    taxonomy: &Taxonomy,
) -> Result<DatasetRecord> {
    if !taxonomy.allows(object_class, &background.background_class) {
        return Err(Error::contract(format!(
            "{object_class:?} is not permitted in {:?} backgrounds",
            background.background_class
        )));
    }
    let proposals = generate_proposals(&cfg.proposals)?;
    let scene = background.scene_ref.as_str();

    let first = pool.first_mut().ok_or_else(|| Error::config("worker pool is empty"))?;
    let resp = checked(first.call(&WorkerRequest::detect(scene, object_class, scene, None))?, "background detect")?;
    let background_same_class: Vec<Detection> = resp
        .detections
        .unwrap_or_default()
        .into_iter()
        .filter(|d| d.class_label == object_class)
        .collect();

    let job = SceneJob {
        scene_ref: scene,
        object_class,
        cfg,
        proposals: &proposals,
        background_same_class: &background_same_class,
    };
    let entries = fan_out(pool, proposals.len(), |w, i| job.run_one(w, i))?;
    Ok(DatasetRecord {
        scene_id: background.scene_ref.clone(),
        background_class: background.background_class.clone(),
        object_class: object_class.to_owned(),
        image_side: cfg.proposals.image_side,
        entries,
        split: Split::Train,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedScene {
    pub scene_ref: String,
    pub background_class: String,
    pub object_class: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRun {
    pub records: Vec<DatasetRecord>,
    pub failed: Vec<FailedScene>,
}

impl DatasetRun {
    /// Records with at least one positive placement.
    pub fn positive_records(&self) -> usize {
        self.records.iter().filter(|r| r.positive_count() > 0).count()
    }
}

/// Samples pairs, extracts a record per pair, and assigns splits.
/// Scenes whose workers fail are reported in `failed` and left out.
pub fn run_dataset(cfg: &RunConfig, taxonomy: &Taxonomy, pool: &mut [Box<dyn Worker>]) -> Result<DatasetRun> {
    cfg.validate()?;
    let count = cfg
        .pairs
        .unwrap_or_else(|| valid_pairs(taxonomy, &cfg.backgrounds).len());
    let pairs = sample_pairs(taxonomy, &cfg.backgrounds, count, cfg.seed);
    let mut records = Vec::with_capacity(pairs.len());
    let mut failed = Vec::new();
    for (n, (bg, obj)) in pairs.iter().enumerate() {
        match run_scene(pool, bg, obj, cfg, taxonomy) {
            Ok(r) => {
                log::info!("scene {}/{} {} {obj}: {} positives", n + 1, pairs.len(), bg.scene_ref, r.positive_count());
                records.push(r);
            }
            Err(e @ (Error::Worker(_) | Error::Protocol { .. })) => {
                log::error!("scene {} {obj} failed: {e}", bg.scene_ref);
                failed.push(FailedScene {
                    scene_ref: bg.scene_ref.clone(),
                    background_class: bg.background_class.clone(),
                    object_class: obj.clone(),
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    assign_splits(&mut records, cfg.splits, cfg.seed)?;
    Ok(DatasetRun { records, failed })
}

/// Convenience: run the whole dataset against the in-process simulator.
pub fn run_dataset_sim(cfg: &RunConfig, lanes: usize) -> Result<(DatasetRun, Arc<SimWorld>)> {
    let taxonomy = cfg.taxonomy()?;
    let world = Arc::new(cfg.sim_world(&taxonomy)?);
    let mut pool = crate::backends::sim_pool(world.clone(), lanes);
    Ok((run_dataset(cfg, &taxonomy, &mut pool)?, world))
}
