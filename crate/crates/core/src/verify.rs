//! Verifier-side selection: confidence gating, best-IoU pick, and
//! suppression of placements that coincide with objects already in the scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Default detector confidence threshold.
pub const DEFAULT_TAU: f64 = 0.4;

/// IoU at or above which a placement is considered a pre-existing object.
pub const PREEXISTING_IOU: f64 = 0.5;

/// One detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(rename = "class")]
    pub class_label: String,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64, class_label: impl Into<String>) -> Self {
        Detection { bbox, confidence, class_label: class_label.into() }
    }
}

/// Outcome of verifying the insertion at one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifiedPlacement {
    pub proposal_index: usize,
    /// `None` means the insertion was not confirmed.
    pub verified: Option<Verified>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verified {
    pub bbox: BBox,
    pub confidence: f64,
}

impl VerifiedPlacement {
    pub fn absent(proposal_index: usize) -> Self {
        VerifiedPlacement { proposal_index, verified: None }
    }

    pub fn present(proposal_index: usize, bbox: BBox, confidence: f64) -> Self {
        VerifiedPlacement { proposal_index, verified: Some(Verified { bbox, confidence }) }
    }

    pub fn is_present(&self) -> bool {
        self.verified.is_some()
    }
}

/// Keeps only detections of `class`, in their original order.
pub fn filter_class<'a>(detections: &'a [Detection], class: &str) -> Vec<&'a Detection> {
    detections.iter().filter(|d| d.class_label == class).collect()
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Picks the verified box for one proposal.
///
/// Detections below `tau` are discarded; among the rest the one with the
/// highest IoU against `proposal` wins. Ties go to the higher confidence,
/// then to the earlier list position.
pub fn select_verified(
    proposal_index: usize,
    detections: &[Detection],
    proposal: &BBox,
    tau: f64,
) -> Result<VerifiedPlacement> {
    check_unit("tau", tau)?;
    let mut best: Option<(f64, &Detection)> = None;
    for det in detections.iter().filter(|d| d.confidence >= tau) {
        let overlap = iou(&det.bbox, proposal);
        let better = match best {
            None => true,
            Some((best_iou, best_det)) => {
                overlap > best_iou
                    || (overlap == best_iou && det.confidence > best_det.confidence)
            }
        };
        if better {
            best = Some((overlap, det));
        }
    }
    Ok(match best {
        Some((_, d)) => VerifiedPlacement::present(proposal_index, d.bbox, d.confidence),
        None => VerifiedPlacement::absent(proposal_index),
    })
}

/// Drops a placement whose box overlaps any background object at IoU >= 0.5.
///
/// `background_objects` are expected to be same-class detections on the
/// original (un-inpainted) scene.
pub fn suppress_preexisting(
    candidate: VerifiedPlacement,
    background_objects: &[Detection],
) -> VerifiedPlacement {
    match candidate.verified {
        Some(v)
            if background_objects
                .iter()
                .any(|obj| iou(&v.bbox, &obj.bbox) >= PREEXISTING_IOU) =>
        {
            VerifiedPlacement::absent(candidate.proposal_index)
        }
        _ => candidate,
    }
}
