//! Trainer-facing export: one line per positively annotated record carrying
//! its top-k supervision set in normalized coordinates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetRecord, Split};
use crate::error::Result;
use crate::matchloss::{select_supervision, SupervisionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub scene_id: String,
    pub background_class: String,
    pub object_class: String,
    pub split: Split,
    pub image_side: f64,
    pub supervision: SupervisionSet,
}

/// Records without positives are skipped; there is nothing to supervise.
pub fn train_records(records: &[DatasetRecord], k: usize, split: Option<Split>) -> Vec<TrainRecord> {
    records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .filter(|r| r.positive_count() > 0)
        .map(|r| TrainRecord {
            scene_id: r.scene_id.clone(),
            background_class: r.background_class.clone(),
            object_class: r.object_class.clone(),
            split: r.split,
            image_side: r.image_side,
            supervision: select_supervision(&r.to_prior(), k, r.image_side),
        })
        .collect()
}

pub fn write_train_records<W: Write>(mut out: W, records: &[TrainRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
