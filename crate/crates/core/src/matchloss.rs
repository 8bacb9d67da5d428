//! Set-prediction training targets for the placement model: bipartite
//! matching of predicted to supervision boxes, the reward-weighted box loss,
//! and the plausibility regression objective.
//!
//! All boxes here are `(x, y, w, h)` normalized by the image side.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou, iou, BBox};
use crate::prior::SpatialPrior;

/// Supervision boxes kept per instance.
pub const DEFAULT_TOP_K: usize = 20;

/// Queries per image in the reference model.
pub const DEFAULT_QUERIES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    /// Weight of the plausibility term in the total objective.
    pub plausibility: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { l1: 5.0, giou: 2.0, plausibility: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub boxes: Vec<BBox>,
    pub plausibility_logits: Vec<f64>,
}

impl PredictionSet {
    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != self.plausibility_logits.len() {
            return Err(Error::contract(format!(
                "{} predicted boxes but {} plausibility logits",
                self.boxes.len(),
                self.plausibility_logits.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionSet {
    pub boxes: Vec<BBox>,
    /// Min-max normalized rewards in `[0, 1]`.
    pub rewards: Vec<f64>,
    /// Canonical proposal indices the boxes came from, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_indices: Vec<usize>,
}

impl SupervisionSet {
    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != self.rewards.len() {
            return Err(Error::contract(format!(
                "{} supervision boxes but {} rewards",
                self.boxes.len(),
                self.rewards.len()
            )));
        }
        if self.rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::contract("supervision rewards must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Box-loss weight for a normalized reward: 0.5 at R = 0, 1.0 at R = 1.
#[inline]
pub fn reward_weight(r: f64) -> f64 {
    0.5 + 0.5 * r
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Min-max maps values into `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(Ordering::Greater) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Top-`k` entries by reward (ties to the lower proposal index), boxes scaled
/// by `image_side`, rewards min-max normalized over the selected set.
pub fn select_supervision(prior: &SpatialPrior, k: usize, image_side: f64) -> SupervisionSet {
    let mut ranked: Vec<_> = prior.entries.iter().collect();
    ranked.sort_by(|a, b| {
        b.reward
            .partial_cmp(&a.reward)
            .unwrap_or(Ordering::Equal)
            .then(a.proposal_index.cmp(&b.proposal_index))
    });
    ranked.truncate(k);
    let raw: Vec<f64> = ranked.iter().map(|e| e.reward).collect();
    SupervisionSet {
        boxes: ranked.iter().map(|e| e.bbox.normalized(image_side)).collect(),
        rewards: min_max_normalize(&raw),
        source_indices: ranked.iter().map(|e| e.proposal_index).collect(),
    }
}

/// `l1 * |pred - gt|_1 + giou * (1 - GIoU(pred, gt))`.
pub fn match_cost(pred: &BBox, gt: &BBox, weights: &LossWeights) -> f64 {
    weights.l1 * pred.l1_distance(gt) + weights.giou * (1.0 - giou(pred, gt))
}

/// Minimum-cost assignment on a rectangular matrix.
///
/// Returns `(row, col)` pairs sorted by row; `min(rows, cols)` of them.
pub fn linear_sum_assignment(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::contract("cost matrix rows differ in length"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::contract("cost matrix has non-finite entries"));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = solve_wide(&transposed).into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(solve_wide(cost))
}

/// Shortest augmenting path with dual potentials; requires rows <= cols.
fn solve_wide(a: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = a.len();
    let m = a[0].len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

/// Sum of the selected entries, accumulated in row order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(i, j)| cost[i][j]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchAssignment {
    /// `(prediction_index, supervision_index)`, sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

pub fn cost_matrix(preds: &PredictionSet, sup: &SupervisionSet, weights: &LossWeights) -> Vec<Vec<f64>> {
    preds
        .boxes
        .iter()
        .map(|p| sup.boxes.iter().map(|g| match_cost(p, g, weights)).collect())
        .collect()
}

/// Optimal one-to-one matching of predictions to supervision boxes on the
/// geometric cost. Empty supervision gives an empty assignment.
pub fn hungarian_match(preds: &PredictionSet, sup: &SupervisionSet, weights: &LossWeights) -> Result<MatchAssignment> {
    preds.validate()?;
    sup.validate()?;
    if sup.boxes.is_empty() || preds.boxes.is_empty() {
        return Ok(MatchAssignment { pairs: Vec::new(), total_cost: 0.0 });
    }
    let cost = cost_matrix(preds, sup, weights);
    let pairs = linear_sum_assignment(&cost)?;
    let total_cost = assignment_cost(&cost, &pairs);
    Ok(MatchAssignment { pairs, total_cost })
}

/// Mean over matched pairs of `omega * cost`, `omega` from the matched
/// supervision reward.
pub fn bbox_loss(
    assignment: &MatchAssignment,
    preds: &PredictionSet,
    sup: &SupervisionSet,
    weights: &LossWeights,
) -> f64 {
    if assignment.pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = assignment
        .pairs
        .iter()
        .map(|&(q, g)| reward_weight(sup.rewards[g]) * match_cost(&preds.boxes[q], &sup.boxes[g], weights))
        .sum();
    sum / assignment.pairs.len() as f64
}

/// Per-query regression target: best IoU against any supervision box.
pub fn plausibility_targets(preds: &PredictionSet, sup: &SupervisionSet) -> Vec<f64> {
    preds
        .boxes
        .iter()
        .map(|p| sup.boxes.iter().map(|g| iou(p, g)).fold(0.0, f64::max))
        .collect()
}

/// Mean squared error between `sigmoid(logit)` and the targets, over all queries.
pub fn plausibility_loss(preds: &PredictionSet, targets: &[f64]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let sum: f64 = preds
        .plausibility_logits
        .iter()
        .zip(targets)
        .map(|(&logit, &t)| (sigmoid(logit) - t).powi(2))
        .sum();
    sum / targets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bbox_loss: f64,
    pub plausibility_loss: f64,
    pub total_loss: f64,
    pub assignment: MatchAssignment,
    pub plausibility_targets: Vec<f64>,
}

/// `bbox_loss + plausibility_weight * plausibility_loss`.
pub fn total_loss(preds: &PredictionSet, sup: &SupervisionSet, weights: &LossWeights) -> Result<LossBreakdown> {
    let assignment = hungarian_match(preds, sup, weights)?;
    let bbox = bbox_loss(&assignment, preds, sup, weights);
    let targets = plausibility_targets(preds, sup);
    let plaus = plausibility_loss(preds, &targets);
    Ok(LossBreakdown {
        bbox_loss: bbox,
        plausibility_loss: plaus,
        total_loss: bbox + weights.plausibility * plaus,
        assignment,
        plausibility_targets: targets,
    })
}

/// Input of the `loss-ref` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCase {
    pub predictions: PredictionSet,
    pub supervision: SupervisionSet,
    #[serde(default)]
    pub weights: LossWeights,
}

/// Expected values a trainer must reproduce for a [`LossCase`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReference {
    pub weights: LossWeights,
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
    pub reward_weights: Vec<f64>,
}

pub fn loss_reference(case: &LossCase) -> Result<LossReference> {
    let breakdown = total_loss(&case.predictions, &case.supervision, &case.weights)?;
    Ok(LossReference {
        weights: case.weights,
        reward_weights: case.supervision.rewards.iter().map(|&r| reward_weight(r)).collect(),
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorEntry;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Minimum over injective maps from the smaller side into the larger.
    fn brute_min(cost: &[Vec<f64>]) -> f64 {
        let (r, c) = (cost.len(), cost[0].len());
        let (small, big) = (r.min(c), r.max(c));
        let at = |i: usize, j: usize| if r <= c { cost[i][j] } else { cost[j][i] };
        let mut best = f64::INFINITY;
        for perm in permutations(big) {
            let mut pairs: Vec<(usize, usize)> =
                (0..small).map(|i| if r <= c { (i, perm[i]) } else { (perm[i], i) }).collect();
            pairs.sort_unstable();
            let total: f64 = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
            let _ = at;
            best = best.min(total);
        }
        best
    }

    fn unit(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    #[test]
    fn weight_endpoints() {
        assert_eq!(reward_weight(0.0), 0.5);
        assert_eq!(reward_weight(1.0), 1.0);
    }

    #[test]
    fn match_cost_examples() {
        let w = LossWeights::default();
        let a = unit(0.1, 0.1, 0.2, 0.2);
        assert_eq!(match_cost(&a, &a, &w), 0.0);
        // shifted by 0.5 in x: L1 = 0.5; hull 0.7x0.2 = 0.14, union 0.08,
        // GIoU = -(0.06 / 0.14)
        let b = unit(0.6, 0.1, 0.2, 0.2);
        let expected = 5.0 * 0.5 + 2.0 * (1.0 + 0.06 / 0.14);
        assert!((match_cost(&a, &b, &w) - expected).abs() < 1e-12);
        let giou_only = LossWeights { l1: 0.0, ..w };
        assert!((match_cost(&a, &b, &giou_only) - 2.0 * (1.0 + 0.06 / 0.14)).abs() < 1e-12);
    }

    #[test]
    fn small_assignment() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let pairs = linear_sum_assignment(&cost).unwrap();
        assert_eq!(assignment_cost(&cost, &pairs), 5.0);
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(linear_sum_assignment(&[vec![7.0]]).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn rectangular_both_orientations() {
        let wide = vec![vec![5.0, 1.0, 9.0, 2.0], vec![1.0, 8.0, 3.0, 7.0]];
        let pairs = linear_sum_assignment(&wide).unwrap();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        let tall: Vec<Vec<f64>> = (0..4).map(|j| (0..2).map(|i| wide[i][j]).collect()).collect();
        assert_eq!(linear_sum_assignment(&tall).unwrap(), vec![(0, 1), (1, 0)]);
        assert!(linear_sum_assignment(&[vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn fifty_queries_twenty_targets() {
        let preds = PredictionSet {
            boxes: (0..50).map(|i| unit(0.01 * i as f64, 0.3, 0.1, 0.1)).collect(),
            plausibility_logits: vec![0.0; 50],
        };
        let sup = SupervisionSet {
            boxes: (0..20).map(|i| unit(0.02 * i as f64, 0.32, 0.12, 0.1)).collect(),
            rewards: (0..20).map(|i| i as f64 / 19.0).collect(),
            source_indices: vec![],
        };
        let m = hungarian_match(&preds, &sup, &LossWeights::default()).unwrap();
        assert_eq!(m.pairs.len(), 20);
        let mut qs: Vec<_> = m.pairs.iter().map(|p| p.0).collect();
        let mut gs: Vec<_> = m.pairs.iter().map(|p| p.1).collect();
        qs.dedup();
        gs.sort_unstable();
        gs.dedup();
        assert_eq!((qs.len(), gs.len()), (20, 20));
    }

    #[test]
    fn single_pair_hand_computed() {
        let w = LossWeights::default();
        let pred = unit(0.1, 0.1, 0.4, 0.4);
        let gt = unit(0.2, 0.1, 0.4, 0.4);
        let preds = PredictionSet { boxes: vec![pred], plausibility_logits: vec![0.0] };
        let sup = SupervisionSet { boxes: vec![gt], rewards: vec![0.5], source_indices: vec![] };
        // L1 = 0.1; inter 0.3*0.4 = 0.12, union 0.2, hull 0.5*0.4 = 0.2
        let iou = 0.12 / 0.2;
        let giou = iou;
        let cost = 5.0 * 0.1 + 2.0 * (1.0 - giou);
        let bbox = 0.75 * cost;
        let plaus = (0.5f64 - iou).powi(2);
        let out = total_loss(&preds, &sup, &w).unwrap();
        assert!((out.bbox_loss - bbox).abs() < 1e-12);
        assert!((out.plausibility_loss - plaus).abs() < 1e-12);
        assert!((out.total_loss - (bbox + 0.5 * plaus)).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_have_zero_box_loss() {
        let boxes = vec![unit(0.1, 0.1, 0.2, 0.2), unit(0.5, 0.5, 0.3, 0.2)];
        let preds = PredictionSet { boxes: boxes.clone(), plausibility_logits: vec![50.0, 50.0] };
        for r in [0.0, 1.0] {
            let sup = SupervisionSet { boxes: boxes.clone(), rewards: vec![r, r], source_indices: vec![] };
            let out = total_loss(&preds, &sup, &LossWeights::default()).unwrap();
            assert_eq!(out.bbox_loss, 0.0);
            assert!(out.total_loss < 1e-20);
        }
    }

    #[test]
    fn plausibility_target_examples() {
        let gt1 = unit(0.0, 0.0, 0.4, 0.4);
        let gt2 = unit(0.5, 0.5, 0.4, 0.4);
        let sup = SupervisionSet { boxes: vec![gt1, gt2], rewards: vec![0.0, 1.0], source_indices: vec![] };
        let preds = PredictionSet {
            boxes: vec![gt2, unit(0.0, 0.92, 0.05, 0.05)],
            plausibility_logits: vec![0.0, 0.0],
        };
        assert_eq!(plausibility_targets(&preds, &sup), vec![1.0, 0.0]);

        // IoU 0.3 with one box and 0.6 with another: 1x1 prediction against a
        // 0.3-wide strip and a 0.6-wide strip, both full height
        let p = unit(0.0, 0.0, 1.0, 1.0);
        let sup = SupervisionSet {
            boxes: vec![unit(0.0, 0.0, 0.3, 1.0), unit(0.4, 0.0, 0.6, 1.0)],
            rewards: vec![0.0, 0.0],
            source_indices: vec![],
        };
        let preds = PredictionSet { boxes: vec![p], plausibility_logits: vec![0.0] };
        let t = plausibility_targets(&preds, &sup);
        assert!((t[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_plausibility_term_when_logits_hit_targets() {
        let preds = PredictionSet { boxes: vec![unit(0.1, 0.1, 0.4, 0.4)], plausibility_logits: vec![0.0] };
        // sigmoid(0) = 0.5 = IoU of a box covering half the prediction
        let sup = SupervisionSet { boxes: vec![unit(0.1, 0.1, 0.2, 0.4)], rewards: vec![1.0], source_indices: vec![] };
        let out = total_loss(&preds, &sup, &LossWeights::default()).unwrap();
        assert_eq!(out.plausibility_loss, 0.0);
        assert_eq!(out.total_loss, out.bbox_loss);
    }

    #[test]
    fn supervision_selection() {
        let e = |i: usize, r: f64| PriorEntry {
            proposal_index: i,
            bbox: BBox::new(i as f64, 0.0, 64.0, 64.0),
            reward: r,
            confidence: 0.9,
        };
        let small = SpatialPrior { scene_id: "s".into(), class: "c".into(), entries: vec![e(0, 1.0), e(1, 3.0), e(2, 2.0)] };
        let sup = select_supervision(&small, 20, 512.0);
        assert_eq!(sup.source_indices, vec![1, 2, 0]);
        assert_eq!(sup.rewards, vec![1.0, 0.5, 0.0]);
        assert_eq!(sup.boxes[0], BBox::new(1.0 / 512.0, 0.0, 0.125, 0.125));

        let rewards: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
        let big = SpatialPrior {
            scene_id: "s".into(),
            class: "c".into(),
            entries: rewards.iter().enumerate().map(|(i, &r)| e(i, r)).collect(),
        };
        let sup = select_supervision(&big, 20, 512.0);
        let mut oracle: Vec<usize> = (0..30).collect();
        oracle.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap().then(a.cmp(&b)));
        oracle.truncate(20);
        assert_eq!(sup.source_indices, oracle);

        let flat = SpatialPrior { scene_id: "s".into(), class: "c".into(), entries: (0..5).map(|i| e(i, 2.0)).collect() };
        let sup = select_supervision(&flat, 20, 512.0);
        assert!(sup.rewards.iter().all(|&r| r == 0.0));
        assert!(sup.rewards.iter().all(|&r| reward_weight(r) == 0.5));
    }

    #[test]
    fn empty_supervision_gives_empty_assignment() {
        let preds = PredictionSet { boxes: vec![unit(0.1, 0.1, 0.2, 0.2)], plausibility_logits: vec![1.0] };
        let sup = SupervisionSet { boxes: vec![], rewards: vec![], source_indices: vec![] };
        let m = hungarian_match(&preds, &sup, &LossWeights::default()).unwrap();
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn mismatched_inputs_are_contract_errors() {
        let preds = PredictionSet { boxes: vec![unit(0.1, 0.1, 0.2, 0.2)], plausibility_logits: vec![] };
        let sup = SupervisionSet { boxes: vec![unit(0.1, 0.1, 0.2, 0.2)], rewards: vec![0.5], source_indices: vec![] };
        assert!(matches!(hungarian_match(&preds, &sup, &LossWeights::default()), Err(Error::Contract(_))));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..0.8f64, 0.0..0.8f64, 0.02..0.4f64, 0.02..0.4f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(
            r in 1usize..=6,
            c in 1usize..=6,
            seed in prop::collection::vec(0.0..10.0f64, 36),
        ) {
            let cost: Vec<Vec<f64>> = (0..r).map(|i| (0..c).map(|j| seed[i * 6 + j]).collect()).collect();
            let pairs = linear_sum_assignment(&cost).unwrap();
            prop_assert_eq!(pairs.len(), r.min(c));
            let total = assignment_cost(&cost, &pairs);
            prop_assert!((total - brute_min(&cost)).abs() < 1e-9);
        }

        #[test]
        fn loss_is_nonnegative_and_permutation_invariant(
            preds in prop::collection::vec((arb_box(), -4.0..4.0f64), 1..6),
            gts in prop::collection::vec((arb_box(), 0.0..=1.0f64), 1..6),
        ) {
            let p = PredictionSet {
                boxes: preds.iter().map(|x| x.0).collect(),
                plausibility_logits: preds.iter().map(|x| x.1).collect(),
            };
            let s = SupervisionSet {
                boxes: gts.iter().map(|x| x.0).collect(),
                rewards: gts.iter().map(|x| x.1).collect(),
                source_indices: vec![],
            };
            let mut rev = s.clone();
            rev.boxes.reverse();
            rev.rewards.reverse();
            let w = LossWeights::default();
            let a = total_loss(&p, &s, &w).unwrap().total_loss;
            let b = total_loss(&p, &rev, &w).unwrap().total_loss;
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn reward_shift_keeps_selection(
            rewards in prop::collection::vec(-5.0..5.0f64, 1..40),
            shift in -100i32..100,
        ) {
            let entries: Vec<PriorEntry> = rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| PriorEntry {
                    proposal_index: i,
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                    // quarter steps keep the shifted values exact
                    reward: (r * 4.0).round() / 4.0,
                    confidence: 0.9,
                })
                .collect();
            let a = SpatialPrior { scene_id: "s".into(), class: "c".into(), entries };
            let mut b = a.clone();
            b.entries.iter_mut().for_each(|e| e.reward += shift as f64);
            let (sa, sb) = (select_supervision(&a, 20, 512.0), select_supervision(&b, 20, 512.0));
            prop_assert_eq!(&sa.source_indices, &sb.source_indices);
            for (x, y) in sa.rewards.iter().zip(&sb.rewards) {
                prop_assert!((reward_weight(*x) - reward_weight(*y)).abs() < 1e-12);
            }
        }
    }
}
