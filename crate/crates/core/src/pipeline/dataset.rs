//! Dataset records, JSON-lines persistence, and scene-grouped splits.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backends::sim::key_rng;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::prior::{PriorEntry, SpatialPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Outcome at one canonical proposal. Negatives keep `verified: null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub proposal: BBox,
    pub verified: Option<BBox>,
    pub confidence: Option<f64>,
    pub reward: Option<f64>,
}

impl DatasetEntry {
    pub fn negative(proposal: BBox) -> Self {
        DatasetEntry { proposal, verified: None, confidence: None, reward: None }
    }

    pub fn is_positive(&self) -> bool {
        self.verified.is_some()
    }
}

/// One scene/object-class annotation unit: one JSON line in the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub scene_id: String,
    pub background_class: String,
    pub object_class: String,
    pub image_side: f64,
    /// One entry per canonical proposal, in proposal order.
    pub entries: Vec<DatasetEntry>,
    pub split: Split,
}

impl DatasetRecord {
    pub fn positive_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_positive()).count()
    }

    /// The record's positives as a spatial prior.
    pub fn to_prior(&self) -> SpatialPrior {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                Some(PriorEntry {
                    proposal_index: i,
                    bbox: e.verified?,
                    reward: e.reward.unwrap_or(0.0),
                    confidence: e.confidence.unwrap_or(0.0),
                })
            })
            .collect();
        SpatialPrior { scene_id: self.scene_id.clone(), class: self.object_class.clone(), entries }
    }
}

pub fn write_records<W: Write>(mut out: W, records: &[DatasetRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Record counts per split: floor each share, then hand the remainder out by
/// largest fractional part (earlier split on ties).
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    // absorb representation error such as 0.85 * 20 = 16.999...
    let raw: Vec<f64> = ratios.iter().map(|r| r * n as f64 + 1e-9).collect();
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as usize;
    }
    while counts.iter().sum::<usize>() > n {
        let i = counts.iter().rposition(|&c| c > 0).expect("positive count");
        counts[i] -= 1;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

/// Tags every record with a split. Scenes are shuffled as units and laid out
/// contiguously; a scene lands in the split where its first record falls.
pub fn assign_splits(records: &mut [DatasetRecord], ratios: [f64; 3], seed: u64) -> Result<()> {
    let counts = split_counts(records.len(), ratios)?;

    let mut groups: Vec<&str> = Vec::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for r in records.iter() {
        let n = sizes.entry(r.scene_id.as_str()).or_insert(0);
        if *n == 0 {
            groups.push(r.scene_id.as_str());
        }
        *n += 1;
    }
    groups.shuffle(&mut key_rng(seed, "splits", 0, "shuffle"));

    let mut assigned: HashMap<String, Split> = HashMap::new();
    let mut position = 0usize;
    for g in groups {
        let split = if position < counts[0] {
            Split::Train
        } else if position < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
        position += sizes[g];
        assigned.insert(g.to_owned(), split);
    }
    for r in records.iter_mut() {
        r.split = assigned[&r.scene_id];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scene: &str) -> DatasetRecord {
        DatasetRecord {
            scene_id: scene.into(),
            background_class: "kitchen".into(),
            object_class: "cup".into(),
            image_side: 512.0,
            entries: vec![],
            split: Split::Train,
        }
    }

    fn tally(records: &[DatasetRecord]) -> [usize; 3] {
        let mut c = [0; 3];
        for r in records {
            c[r.split as usize] += 1;
        }
        c
    }

    #[test]
    fn rounding_rule() {
        let r = [0.85, 0.10, 0.05];
        assert_eq!(split_counts(100, r).unwrap(), [85, 10, 5]);
        assert_eq!(split_counts(20, r).unwrap(), [17, 2, 1]);
        assert_eq!(split_counts(1, r).unwrap(), [1, 0, 0]);
        assert_eq!(split_counts(0, r).unwrap(), [0, 0, 0]);
        assert_eq!(split_counts(7, r).unwrap().iter().sum::<usize>(), 7);
        assert!(split_counts(10, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn single_scene_records_split_exactly() {
        let mut recs: Vec<_> = (0..100).map(|i| record(&format!("s{i}"))).collect();
        assign_splits(&mut recs, [0.85, 0.10, 0.05], 1).unwrap();
        assert_eq!(tally(&recs), [85, 10, 5]);

        let mut one = vec![record("only")];
        assign_splits(&mut one, [0.85, 0.10, 0.05], 1).unwrap();
        assert_eq!(one[0].split, Split::Train);
    }

    #[test]
    fn scenes_never_straddle_splits() {
        let mut recs: Vec<_> = (0..90).map(|i| record(&format!("s{}", i % 31))).collect();
        assign_splits(&mut recs, [0.85, 0.10, 0.05], 4).unwrap();
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for r in &recs {
            assert_eq!(*seen.entry(&r.scene_id).or_insert(r.split), r.split);
        }
    }

    #[test]
    fn seeded_assignment_is_reproducible() {
        let mut a: Vec<_> = (0..40).map(|i| record(&format!("s{i}"))).collect();
        let mut b = a.clone();
        assign_splits(&mut a, [0.85, 0.10, 0.05], 9).unwrap();
        assign_splits(&mut b, [0.85, 0.10, 0.05], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coordinates_survive_persistence_bit_for_bit() {
        let mut r = record("s0");
        r.entries = crate::geometry::generate_proposals(&Default::default())
            .unwrap()
            .into_iter()
            .map(|p| DatasetEntry {
                proposal: p,
                verified: Some(BBox::new(p.x + 0.1, p.y / 3.0, p.w * 0.7, p.h + 1e-7)),
                confidence: Some(1.0 / 3.0),
                reward: Some(std::f64::consts::PI),
            })
            .collect();
        let mut buf = Vec::new();
        write_records(&mut buf, std::slice::from_ref(&r)).unwrap();
        assert_eq!(read_records(&buf[..]).unwrap(), vec![r]);
    }

    #[test]
    fn records_round_trip_with_null_negatives() {
        let mut r = record("s0");
        r.entries = vec![
            DatasetEntry::negative(BBox::new(0.0, 0.0, 64.0, 64.0)),
            DatasetEntry {
                proposal: BBox::new(10.0, 10.0, 64.0, 64.0),
                verified: Some(BBox::new(11.0, 9.0, 63.0, 65.0)),
                confidence: Some(0.8),
                reward: Some(1.5),
            },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, std::slice::from_ref(&r)).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.contains("\"verified\":null"));
        assert_eq!(read_records(&buf[..]).unwrap(), vec![r.clone()]);
        let prior = r.to_prior();
        assert_eq!(prior.entries.len(), 1);
        assert_eq!(prior.entries[0].proposal_index, 1);
    }
}
