//! Downstream single-box placement: the best-rewarded box that stays clear of
//! the dominant object already in the scene.

use std::cmp::Ordering;

use crate::geometry::{iou, BBox};
use crate::prior::{PriorEntry, SpatialPrior};
use crate::verify::{Detection, PREEXISTING_IOU};

/// Largest-area detection of any class. Ties go to the earlier detection.
pub fn largest_object(background_objects: &[Detection]) -> Option<&Detection> {
    background_objects
        .iter()
        .reduce(|best, d| if d.bbox.area() > best.bbox.area() { d } else { best })
}

/// Highest-reward entry whose IoU with the largest background object is below
/// 0.5. Reward ties resolve to the lower proposal index.
pub fn select_top1_entry<'a>(prior: &'a SpatialPrior, background_objects: &[Detection]) -> Option<&'a PriorEntry> {
    let obstacle = largest_object(background_objects).map(|d| d.bbox);
    let mut ranked: Vec<&PriorEntry> = prior.entries.iter().collect();
    ranked.sort_by(|a, b| {
        b.reward
            .partial_cmp(&a.reward)
            .unwrap_or(Ordering::Equal)
            .then(a.proposal_index.cmp(&b.proposal_index))
    });
    ranked
        .into_iter()
        .find(|e| obstacle.is_none_or(|o| iou(&e.bbox, &o) < PREEXISTING_IOU))
}

pub fn select_top1(prior: &SpatialPrior, background_objects: &[Detection]) -> Option<BBox> {
    select_top1_entry(prior, background_objects).map(|e| e.bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(i: usize, bbox: BBox, reward: f64) -> PriorEntry {
        PriorEntry { proposal_index: i, bbox, reward, confidence: 0.9 }
    }

    fn prior(entries: Vec<PriorEntry>) -> SpatialPrior {
        SpatialPrior { scene_id: "s".into(), class: "cup".into(), entries }
    }

    fn det(bbox: BBox, class: &str) -> Detection {
        Detection { bbox, confidence: 0.9, class_label: class.into() }
    }

    #[test]
    fn empty_background_takes_top_reward() {
        let p = prior(vec![
            entry(0, BBox::new(0.0, 0.0, 10.0, 10.0), 1.0),
            entry(1, BBox::new(50.0, 0.0, 10.0, 10.0), 2.0),
        ]);
        assert_eq!(select_top1(&p, &[]), Some(BBox::new(50.0, 0.0, 10.0, 10.0)));
        assert_eq!(select_top1(&prior(vec![]), &[]), None);
    }

    #[test]
    fn colliding_top_box_falls_through() {
        // top: 100x100 at origin; obstacle 100x60 inside it, IoU 0.6
        let top = BBox::new(0.0, 0.0, 100.0, 100.0);
        let second = BBox::new(200.0, 200.0, 50.0, 50.0);
        let obstacle = BBox::new(0.0, 0.0, 100.0, 60.0);
        assert!((iou(&top, &obstacle) - 0.6).abs() < 1e-12);
        let p = prior(vec![entry(0, top, 5.0), entry(1, second, 3.0)]);
        let small = det(BBox::new(0.0, 0.0, 5.0, 5.0), "table");
        assert_eq!(select_top1(&p, &[small.clone(), det(obstacle, "person")]), Some(second));
        // only the largest object matters
        assert_eq!(select_top1(&p, &[small]), Some(top));
    }

    #[test]
    fn everything_collides() {
        let b = BBox::new(10.0, 10.0, 40.0, 40.0);
        let p = prior(vec![entry(0, b, 1.0), entry(1, b, 0.5)]);
        assert_eq!(select_top1(&p, &[det(b, "dog")]), None);
    }

    #[test]
    fn iou_exactly_half_collides() {
        let b = BBox::new(0.0, 0.0, 100.0, 100.0);
        let o = BBox::new(0.0, 0.0, 100.0, 50.0);
        assert_eq!(iou(&b, &o), 0.5);
        assert_eq!(select_top1(&prior(vec![entry(0, b, 1.0)]), &[det(o, "dog")]), None);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..400.0f64, 0.0..400.0f64, 8.0..200.0f64, 8.0..200.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn choice_is_clear_and_maximal(
            boxes in prop::collection::vec((arb_box(), -3.0..3.0f64), 0..25),
            objs in prop::collection::vec(arb_box(), 0..4),
        ) {
            let p = prior(boxes.iter().enumerate().map(|(i, (b, r))| entry(i, *b, *r)).collect());
            let dets: Vec<_> = objs.iter().map(|b| det(*b, "x")).collect();
            let obstacle = largest_object(&dets).map(|d| d.bbox);
            let clear = |e: &PriorEntry| obstacle.is_none_or(|o| iou(&e.bbox, &o) < 0.5);
            match select_top1_entry(&p, &dets) {
                Some(chosen) => {
                    prop_assert!(clear(chosen));
                    for e in p.entries.iter().filter(|e| clear(e)) {
                        prop_assert!(e.reward <= chosen.reward);
                    }
                }
                None => prop_assert!(p.entries.iter().all(|e| !clear(e))),
            }
        }
    }
}
