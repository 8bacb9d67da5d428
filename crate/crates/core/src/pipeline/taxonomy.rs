use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../../data/taxonomy.json");

/// Which background scene classes each object class may be placed into.
///
/// Serialized as a JSON object mapping object class to a list of background
/// classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy {
    pub pairs: BTreeMap<String, BTreeSet<String>>,
}

impl Taxonomy {
    /// The 50-class COCO to Places365 assignment shipped with the crate.
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN).expect("bundled taxonomy is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Taxonomy = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((class, _)) = self.pairs.iter().find(|(_, bgs)| bgs.is_empty()) {
            return Err(Error::config(format!("object class {class:?} has no background classes")));
        }
        Ok(())
    }

    pub fn allows(&self, object_class: &str, background_class: &str) -> bool {
        self.pairs
            .get(object_class)
            .is_some_and(|bgs| bgs.contains(background_class))
    }

    /// Object classes permitted in `background_class`, sorted.
    pub fn objects_for(&self, background_class: &str) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|(_, bgs)| bgs.contains(background_class))
            .map(|(obj, _)| obj.as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_table_is_complete() {
        let t = Taxonomy::builtin();
        t.validate().unwrap();
        assert_eq!(t.pairs.len(), 50);
        assert!(t.allows("pizza", "pizzeria"));
        assert!(t.allows("toothbrush", "bathroom"));
        assert!(!t.allows("pizza", "bathroom"));
        assert_eq!(t.pairs["toothbrush"].len(), 1);
    }

    #[test]
    fn empty_background_set_is_rejected() {
        assert!(matches!(Taxonomy::from_json(r#"{"cup": []}"#), Err(Error::Config(_))));
        let t = Taxonomy::from_json(r#"{"cup": ["kitchen"], "fork": ["kitchen", "bar"]}"#).unwrap();
        assert_eq!(t.objects_for("kitchen"), vec!["cup", "fork"]);
        assert_eq!(t.objects_for("bar"), vec!["fork"]);
    }
}
