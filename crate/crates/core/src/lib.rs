//! Spatial prior extraction for object placement.
//!
//! The engine walks a fixed grid of candidate boxes over a background scene,
//! asks external workers to inpaint, detect and rank an object in each box,
//! and keeps the verified placements as a class-conditioned prior. Around that
//! loop sit the supporting pieces: divergence-based early rejection, heatmap
//! rasterization, dense-prior metrics, and the matching/loss math used to
//! distill priors into a placement model.

pub mod backends;
pub mod cli;
pub mod earlystop;
pub mod error;
pub mod geometry;
pub mod matchloss;
pub mod metrics;
pub mod pipeline;
pub mod placement;
pub mod prior;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{generate_proposals, giou, iou, BBox, ProposalConfig};
pub use verify::{Detection, VerifiedPlacement};
