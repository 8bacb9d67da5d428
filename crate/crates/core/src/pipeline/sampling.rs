use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::taxonomy::Taxonomy;
use crate::backends::sim::key_rng;

/// A background scene and its scene class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Background {
    pub scene_ref: String,
    #[serde(rename = "class")]
    pub background_class: String,
}

impl Background {
    pub fn new(scene_ref: impl Into<String>, background_class: impl Into<String>) -> Self {
        Background { scene_ref: scene_ref.into(), background_class: background_class.into() }
    }
}

/// Every permitted (background, object class) pair, backgrounds in input
/// order and object classes sorted.
pub fn valid_pairs(taxonomy: &Taxonomy, backgrounds: &[Background]) -> Vec<(Background, String)> {
    backgrounds
        .iter()
        .flat_map(|bg| {
            taxonomy
                .objects_for(&bg.background_class)
                .into_iter()
                .map(move |obj| (bg.clone(), obj.to_owned()))
        })
        .collect()
}

/// Draws `count` pairs uniformly from the valid set.
///
/// Pairs are dealt from a seeded shuffle; once the deck is exhausted it is
/// reshuffled and dealing continues, so every pair repeats the same number of
/// times give or take one.
pub fn sample_pairs(
    taxonomy: &Taxonomy,
    backgrounds: &[Background],
    count: usize,
    seed: u64,
) -> Vec<(Background, String)> {
    let pairs = valid_pairs(taxonomy, backgrounds);
    if pairs.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0u64;
    while out.len() < count {
        let mut deck: Vec<usize> = (0..pairs.len()).collect();
        deck.shuffle(&mut key_rng(seed, "pairs", round, "shuffle"));
        out.extend(deck.into_iter().take(count - out.len()).map(|i| pairs[i].clone()));
        round += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn taxonomy(json: &str) -> Taxonomy {
        Taxonomy::from_json(json).unwrap()
    }

    #[test]
    fn single_pair_repeats() {
        let t = taxonomy(r#"{"cup": ["kitchen"]}"#);
        let bgs = [Background::new("k1", "kitchen"), Background::new("b1", "bar")];
        let s = sample_pairs(&t, &bgs, 3, 0);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|(bg, obj)| bg.scene_ref == "k1" && obj == "cup"));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let t = Taxonomy::builtin();
        let bgs: Vec<_> = ["kitchen", "restaurant", "street", "office"]
            .iter()
            .enumerate()
            .map(|(i, c)| Background::new(format!("bg{i}"), *c))
            .collect();
        assert_eq!(sample_pairs(&t, &bgs, 50, 7), sample_pairs(&t, &bgs, 50, 7));
        assert_ne!(sample_pairs(&t, &bgs, 50, 7), sample_pairs(&t, &bgs, 50, 8));
    }

    #[test]
    fn two_pairs_balance() {
        let t = taxonomy(r#"{"cup": ["kitchen"], "fork": ["kitchen"]}"#);
        let bgs = [Background::new("k1", "kitchen")];
        let s = sample_pairs(&t, &bgs, 1000, 3);
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for (_, obj) in &s {
            *freq.entry(obj).or_default() += 1;
        }
        for n in freq.values() {
            assert!((*n as f64 - 500.0).abs() <= 25.0);
        }
    }

    #[test]
    fn no_replacement_before_exhaustion() {
        let t = Taxonomy::builtin();
        let bgs = [Background::new("r", "restaurant"), Background::new("k", "kitchen")];
        let all = valid_pairs(&t, &bgs);
        let s = sample_pairs(&t, &bgs, all.len(), 1);
        let mut sorted = s.clone();
        sorted.sort_by(|a, b| (&a.0.scene_ref, &a.1).cmp(&(&b.0.scene_ref, &b.1)));
        sorted.dedup();
        assert_eq!(sorted.len(), all.len());
    }
}
