//! Dense-prior evaluation (IoU@k, hit rate, multi-threshold mAP) and the
//! dataset bias statistics: object-center histogram and relative-area density.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::pipeline::dataset::DatasetRecord;

/// Hit threshold for `iou50_at_k`.
pub const HIT_IOU: f64 = 0.5;

/// Lowest and highest relative area covered by [`area_density`].
pub const AREA_RANGE: (f64, f64) = (1e-4, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub predictions: Vec<ScoredBox>,
    pub ground_truth: Vec<BBox>,
}

impl EvalInstance {
    pub fn validate(&self) -> Result<()> {
        if self.predictions.iter().any(|p| !p.score.is_finite()) {
            return Err(Error::contract("prediction scores must be finite"));
        }
        Ok(())
    }

    /// Predictions by descending score; equal scores keep input order.
    pub fn ranked(&self) -> Vec<BBox> {
        let mut order: Vec<&ScoredBox> = self.predictions.iter().collect();
        order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
        order.into_iter().map(|p| p.bbox).collect()
    }
}

fn best_iou(pred: &BBox, gts: &[BBox]) -> f64 {
    gts.iter().map(|g| iou(pred, g)).fold(0.0, f64::max)
}

/// Best IoU against the ground truth among the top-`k` predictions.
pub fn iou_at_k(inst: &EvalInstance, k: usize) -> f64 {
    inst.ranked()
        .iter()
        .take(k)
        .map(|p| best_iou(p, &inst.ground_truth))
        .fold(0.0, f64::max)
}

/// Mean of [`iou_at_k`] over instances, in `[0, 1]`.
pub fn mean_iou_at_k(instances: &[EvalInstance], k: usize) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    instances.iter().map(|i| iou_at_k(i, k)).sum::<f64>() / instances.len() as f64
}

/// Percentage of instances whose [`iou_at_k`] is at least 0.5.
pub fn iou50_at_k(instances: &[EvalInstance], k: usize) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    let hits = instances.iter().filter(|i| iou_at_k(i, k) >= HIT_IOU).count();
    100.0 * hits as f64 / instances.len() as f64
}

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn ap_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Average precision of one ranked instance at one IoU threshold, in `[0, 1]`.
///
/// Each prediction, in rank order, claims the unclaimed ground-truth box it
/// overlaps most, provided that overlap reaches `threshold`. AP is the exact
/// area under the precision-recall curve after replacing each precision with
/// the maximum precision at any equal or higher recall.
pub fn average_precision(inst: &EvalInstance, threshold: f64) -> f64 {
    let n_gt = inst.ground_truth.len();
    let ranked = inst.ranked();
    if n_gt == 0 || ranked.is_empty() {
        return 0.0;
    }
    let mut claimed = vec![false; n_gt];
    let mut tp = 0usize;
    // (precision, is_tp) at each rank
    let mut curve = Vec::with_capacity(ranked.len());
    for (rank, p) in ranked.iter().enumerate() {
        let best = inst
            .ground_truth
            .iter()
            .enumerate()
            .filter(|(g, _)| !claimed[*g])
            .map(|(g, gt)| (g, iou(p, gt)))
            .filter(|(_, v)| *v >= threshold)
            .reduce(|a, b| if b.1 > a.1 { b } else { a });
        let hit = best.is_some();
        if let Some((g, _)) = best {
            claimed[g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / (rank + 1) as f64, hit));
    }
    let mut envelope = 0.0f64;
    let mut area = 0.0;
    for &(precision, hit) in curve.iter().rev() {
        envelope = envelope.max(precision);
        if hit {
            area += envelope;
        }
    }
    area / n_gt as f64
}

/// AP averaged over [`ap_thresholds`].
pub fn instance_ap(inst: &EvalInstance) -> f64 {
    let t = ap_thresholds();
    t.iter().map(|&thr| average_precision(inst, thr)).sum::<f64>() / t.len() as f64
}

/// Mean over instances of the threshold-averaged AP, as a percentage.
pub fn mean_ap(instances: &[EvalInstance]) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    100.0 * instances.iter().map(instance_ap).sum::<f64>() / instances.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterHistogram {
    pub bins: usize,
    /// `counts[row][col]`; row indexes the normalized center y.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl CenterHistogram {
    /// Counts divided by `total * cell_area`, so the grid integrates to 1 over
    /// the unit square. All zeros when empty.
    pub fn density(&self) -> Vec<Vec<f64>> {
        let scale = if self.total == 0 {
            0.0
        } else {
            (self.bins * self.bins) as f64 / self.total as f64
        };
        self.counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 * scale).collect())
            .collect()
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// 2-D histogram of box centers given in normalized coordinates.
pub fn center_histogram_of<'a>(boxes: impl IntoIterator<Item = &'a BBox>, bins: usize) -> CenterHistogram {
    let bins = bins.max(1);
    let mut counts = vec![vec![0u64; bins]; bins];
    let mut total = 0;
    for b in boxes {
        let (cx, cy) = b.center();
        counts[bin_of(cy, bins)][bin_of(cx, bins)] += 1;
        total += 1;
    }
    CenterHistogram { bins, counts, total }
}

/// Verified boxes of every record, normalized by the record's image side.
pub fn positive_boxes(records: &[DatasetRecord]) -> Vec<BBox> {
    records
        .iter()
        .flat_map(|r| r.entries.iter().filter_map(move |e| e.verified.map(|b| b.normalized(r.image_side))))
        .collect()
}

pub fn center_histogram(records: &[DatasetRecord], bins: usize) -> CenterHistogram {
    center_histogram_of(&positive_boxes(records), bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaDensity {
    /// `bins + 1` log-spaced edges from 1e-4 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Per unit of log10(relative area); integrates to 1 unless empty.
    pub density: Vec<f64>,
}

/// Density of relative areas (normalized `w * h`) over log-spaced bins.
/// Values outside the range clamp to the end bins.
pub fn area_density_of(relative_areas: impl IntoIterator<Item = f64>, log_bins: usize) -> AreaDensity {
    let bins = log_bins.max(1);
    let (lo, hi) = (AREA_RANGE.0.log10(), AREA_RANGE.1.log10());
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| 10f64.powf(lo + width * i as f64)).collect();
    let mut counts = vec![0u64; bins];
    for a in relative_areas {
        let pos = (a.max(f64::MIN_POSITIVE).log10() - lo) / width;
        counts[(pos.floor().max(0.0) as usize).min(bins - 1)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let density = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
        .collect();
    AreaDensity { edges, counts, density }
}

pub fn area_density(records: &[DatasetRecord], log_bins: usize) -> AreaDensity {
    area_density_of(positive_boxes(records).iter().map(BBox::area), log_bins)
}

/// One line of a predictions file: ranked boxes in normalized coordinates for
/// one scene and object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub object_class: String,
    pub predictions: Vec<ScoredBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    /// Prediction records whose ground truth has no positives.
    pub skipped: usize,
    pub iou_at_1: f64,
    pub iou_at_5: f64,
    pub iou50_at_1: f64,
    pub iou50_at_5: f64,
    pub mean_ap: f64,
    pub center_histogram: CenterHistogram,
    pub area_density: AreaDensity,
}

pub const REPORT_CENTER_BINS: usize = 16;
pub const REPORT_AREA_BINS: usize = 16;

/// Pairs predictions with dataset records by `(scene_id, object_class)` and
/// scores them. Ground-truth statistics cover every record in `gt`.
pub fn evaluate(preds: &[PredictionRecord], gt: &[DatasetRecord]) -> Result<EvalReport> {
    let by_key: HashMap<(&str, &str), &DatasetRecord> =
        gt.iter().map(|r| ((r.scene_id.as_str(), r.object_class.as_str()), r)).collect();
    let mut instances = Vec::new();
    let mut skipped = 0;
    for p in preds {
        let rec = by_key
            .get(&(p.scene_id.as_str(), p.object_class.as_str()))
            .ok_or_else(|| Error::contract(format!("no ground truth for {} / {}", p.scene_id, p.object_class)))?;
        let ground_truth = positive_boxes(std::slice::from_ref(rec));
        if ground_truth.is_empty() {
            skipped += 1;
            continue;
        }
        let inst = EvalInstance { predictions: p.predictions.clone(), ground_truth };
        inst.validate()?;
        instances.push(inst);
    }
    Ok(EvalReport {
        instances: instances.len(),
        skipped,
        iou_at_1: mean_iou_at_k(&instances, 1),
        iou_at_5: mean_iou_at_k(&instances, 5),
        iou50_at_1: iou50_at_k(&instances, 1),
        iou50_at_5: iou50_at_k(&instances, 5),
        mean_ap: mean_ap(&instances),
        center_histogram: center_histogram(gt, REPORT_CENTER_BINS),
        area_density: area_density(gt, REPORT_AREA_BINS),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    fn inst(preds: &[(BBox, f64)], gt: &[BBox]) -> EvalInstance {
        EvalInstance {
            predictions: preds.iter().map(|&(bbox, score)| ScoredBox { bbox, score }).collect(),
            ground_truth: gt.to_vec(),
        }
    }

    #[test]
    fn iou_at_k_examples() {
        let gt = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou_at_k(&inst(&[(gt, 0.9)], &[gt]), 1), 1.0);
        let far = b(5.0, 5.0, 1.0, 1.0);
        let half = b(0.0, 0.0, 1.0, 0.5);
        let i = inst(&[(far, 0.9), (far, 0.8), (half, 0.7)], &[gt]);
        assert_eq!(iou_at_k(&i, 1), 0.0);
        assert_eq!(iou_at_k(&i, 5), 0.5);
        assert_eq!(iou_at_k(&i, 100), 0.5);
        assert_eq!(iou_at_k(&inst(&[], &[gt]), 3), 0.0);
    }

    #[test]
    fn hit_rate_boundary_is_inclusive() {
        let gt = b(0.0, 0.0, 1.0, 1.0);
        let at_half = inst(&[(b(0.0, 0.0, 1.0, 0.5), 1.0)], &[gt]);
        let miss = inst(&[(b(3.0, 3.0, 1.0, 1.0), 1.0)], &[gt]);
        assert_eq!(iou50_at_k(&[at_half.clone(), miss.clone()], 1), 50.0);
        assert_eq!(iou50_at_k(&[at_half.clone(), at_half], 1), 100.0);
        assert_eq!(iou50_at_k(&[miss], 1), 0.0);
    }

    #[test]
    fn ap_single_exact_match() {
        let g = b(1.0, 1.0, 2.0, 2.0);
        assert_eq!(mean_ap(&[inst(&[(g, 0.3)], &[g])]), 100.0);
        assert_eq!(mean_ap(&[inst(&[], &[g])]), 0.0);
    }

    #[test]
    fn ap_three_predictions_two_gt() {
        // ranks: hit, miss, hit -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
        // envelope: 1 at recall 1/2, 2/3 at recall 1 -> AP = (1 + 2/3) / 2
        let g1 = b(0.0, 0.0, 1.0, 1.0);
        let g2 = b(4.0, 0.0, 1.0, 1.0);
        let i = inst(&[(g1, 0.9), (b(9.0, 9.0, 1.0, 1.0), 0.8), (g2, 0.7)], &[g1, g2]);
        for t in ap_thresholds() {
            assert_eq!(average_precision(&i, t), (1.0 + 2.0 / 3.0) / 2.0);
        }
        // duplicate of g1 cannot claim it twice
        let dup = inst(&[(g1, 0.9), (g1, 0.8)], &[g1, g2]);
        assert_eq!(average_precision(&dup, 0.5), 0.5);
    }

    #[test]
    fn ap_threshold_sweep() {
        // IoU 0.72 counts at thresholds 0.50..0.70 (5 of 10)
        let g = b(0.0, 0.0, 1.0, 1.0);
        let p = b(0.0, 0.0, 1.0, 0.72);
        assert!((iou(&p, &g) - 0.72).abs() < 1e-15);
        let i = inst(&[(p, 1.0)], &[g]);
        assert_eq!(instance_ap(&i), 0.5);
    }

    #[test]
    fn best_first_beats_worst_first() {
        let g = [b(0.0, 0.0, 1.0, 1.0), b(2.0, 0.0, 1.0, 1.0)];
        let miss = b(7.0, 7.0, 1.0, 1.0);
        let best = inst(&[(g[0], 3.0), (g[1], 2.0), (miss, 1.0)], &g);
        let worst = inst(&[(g[0], 1.0), (g[1], 2.0), (miss, 3.0)], &g);
        assert!(mean_ap(&[best]) >= mean_ap(&[worst]));
    }

    #[test]
    fn centered_boxes_fill_one_bin() {
        let boxes = vec![b(0.45, 0.45, 0.1, 0.1); 7];
        let h = center_histogram_of(&boxes, 4);
        assert_eq!(h.counts[2][2], 7);
        assert_eq!(h.total, 7);
        let empty = center_histogram_of(&[], 4);
        assert!(empty.counts.iter().flatten().all(|&c| c == 0));
        assert!(empty.density().iter().flatten().all(|&d| d == 0.0));
        let d = h.density();
        let integral: f64 = d.iter().flatten().sum::<f64>() / 16.0;
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_centers_are_flat() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let boxes: Vec<_> = (0..16000)
            .map(|_| {
                let (cx, cy): (f64, f64) = (rng.random(), rng.random());
                BBox::from_center(cx, cy, 0.0, 0.0)
            })
            .collect();
        let h = center_histogram_of(&boxes, 4);
        let expected = 1000.0;
        let chi2: f64 = h.counts.iter().flatten().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 15 degrees of freedom; 99.9th percentile is about 37.7
        assert!(chi2 < 37.7, "chi2 {chi2}");
    }

    #[test]
    fn area_density_examples() {
        let d = area_density_of(vec![0.1; 5], 8);
        assert_eq!(d.counts[6], 5);
        assert!((d.edges[6] - 0.1).abs() < 1e-12);
        let integral: f64 = d.density.iter().sum::<f64>() * 0.5;
        assert!((integral - 1.0).abs() < 1e-12);
        let empty = area_density_of(Vec::new(), 8);
        assert!(empty.density.iter().all(|&v| v == 0.0));
        // smallest proposal is 64 px on a 512 px side
        let smallest = (64.0f64 / 512.0).powi(2);
        let d = area_density_of([smallest], 8);
        assert_eq!(d.counts[..2].iter().sum::<u64>(), 0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..0.9f64, 0.0..0.9f64, 0.01..0.5f64, 0.01..0.5f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    fn arb_instance() -> impl Strategy<Value = EvalInstance> {
        (
            prop::collection::vec((arb_box(), -5.0..5.0f64), 0..12),
            prop::collection::vec(arb_box(), 1..6),
        )
            .prop_map(|(p, g)| inst(&p, &g))
    }

    proptest! {
        #[test]
        fn monotone_in_k(insts in prop::collection::vec(arb_instance(), 1..8), k in 1usize..10) {
            for i in &insts {
                prop_assert!(iou_at_k(i, k) <= iou_at_k(i, k + 1));
            }
            prop_assert!(iou50_at_k(&insts, k) <= iou50_at_k(&insts, k + 1));
        }

        #[test]
        fn ap_depends_only_on_rank(i in arb_instance()) {
            let mut squashed = i.clone();
            for p in &mut squashed.predictions {
                p.score = p.score.exp() * 3.0 + 1.0;
            }
            prop_assert_eq!(mean_ap(std::slice::from_ref(&i)), mean_ap(&[squashed]));
            let ap = mean_ap(&[i]);
            prop_assert!((0.0..=100.0).contains(&ap));
        }
    }
}
