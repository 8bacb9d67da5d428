//! Newline-delimited JSON messages exchanged with worker processes.
//!
//! Each request is one UTF-8 JSON object on one LF-terminated line. The
//! worker answers with exactly one line carrying the same `id`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::verify::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Inpaint,
    Detect,
    Rank,
    Divergence,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Inpaint => "inpaint",
            Op::Detect => "detect",
            Op::Rank => "rank",
            Op::Divergence => "divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub id: u64,
    pub op: Op,
    pub scene_ref: String,
    pub class: String,
    /// Target box for `inpaint` and `divergence`.
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    /// Image to inspect for `detect` and `rank`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Number of denoising steps to report for `divergence`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Canonical proposal index this request belongs to, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<usize>,
}

impl WorkerRequest {
    fn base(op: Op, scene_ref: &str, class: &str) -> Self {
        WorkerRequest {
            id: 0,
            op,
            scene_ref: scene_ref.to_owned(),
            class: class.to_owned(),
            bbox: None,
            image_ref: None,
            steps: None,
            proposal: None,
        }
    }

    pub fn inpaint(scene_ref: &str, class: &str, proposal: usize, bbox: BBox) -> Self {
        WorkerRequest { bbox: Some(bbox), proposal: Some(proposal), ..Self::base(Op::Inpaint, scene_ref, class) }
    }

    pub fn detect(scene_ref: &str, class: &str, image_ref: &str, proposal: Option<usize>) -> Self {
        WorkerRequest {
            image_ref: Some(image_ref.to_owned()),
            proposal,
            ..Self::base(Op::Detect, scene_ref, class)
        }
    }

    pub fn rank(scene_ref: &str, class: &str, image_ref: &str, proposal: usize) -> Self {
        WorkerRequest {
            image_ref: Some(image_ref.to_owned()),
            proposal: Some(proposal),
            ..Self::base(Op::Rank, scene_ref, class)
        }
    }

    pub fn divergence(scene_ref: &str, class: &str, proposal: usize, bbox: BBox, steps: usize) -> Self {
        WorkerRequest {
            bbox: Some(bbox),
            steps: Some(steps),
            proposal: Some(proposal),
            ..Self::base(Op::Divergence, scene_ref, class)
        }
    }

    pub fn to_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Ok,
    /// The inpainter declined the insertion.
    Refused,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub id: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl WorkerResponse {
    pub fn new(id: u64, status: Status) -> Self {
        WorkerResponse { id, status, image_ref: None, detections: None, reward: None, deltas: None, message: None }
    }

    pub fn error(id: u64, message: impl Into<String>) -> Self {
        WorkerResponse { message: Some(message.into()), ..Self::new(id, Status::Error) }
    }

    /// Parses one response line and checks the payload invariants.
    pub fn parse_line(line: &str) -> Result<Self> {
        let protocol = |message: String| Error::Protocol { message, raw: line.to_owned() };
        let resp: WorkerResponse =
            serde_json::from_str(line.trim_end()).map_err(|e| protocol(e.to_string()))?;
        if let Some(dets) = &resp.detections {
            if dets.iter().any(|d| !(0.0..=1.0).contains(&d.confidence)) {
                return Err(protocol("detection confidence outside [0, 1]".into()));
            }
        }
        Ok(resp)
    }

    pub fn to_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}
