//! Concept vocabulary with optional synonym/fine-grained merge groups.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// The set of concepts a model predicts, plus optional named groups of
/// concept indices that are collapsed at evaluation time (score of a group
/// is the max over its members).
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
    merge_groups: BTreeMap<String, Vec<usize>>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("vocabulary must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Config("concept names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate concept name '{name}'")));
            }
        }
        Ok(Vocabulary {
            names,
            merge_groups: BTreeMap::new(),
        })
    }

    /// Generic names `c00, c01, ...` for synthetic corpora.
    pub fn generic(count: usize) -> Result<Self> {
        Vocabulary::new((0..count).map(|i| format!("c{i:02}")).collect())
    }

    /// Attach merge groups. Every index must be in range and appear in at
    /// most one group; groups must be non-empty.
    pub fn with_merge_groups(mut self, groups: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        let mut used = vec![false; self.names.len()];
        for (group, members) in &groups {
            if members.is_empty() {
                return Err(Error::Config(format!("merge group '{group}' is empty")));
            }
            for &idx in members {
                if idx >= self.names.len() {
                    return Err(Error::Config(format!(
                        "merge group '{group}' references concept {idx}, vocabulary has {}",
                        self.names.len()
                    )));
                }
                if used[idx] {
                    return Err(Error::Config(format!(
                        "concept {idx} appears in more than one merge group"
                    )));
                }
                used[idx] = true;
            }
        }
        self.merge_groups = groups;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn merge_groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.merge_groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(Vocabulary::new(vec![]).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(vec!["".into()]).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "b".into()]).is_ok());
    }

    #[test]
    fn merge_group_validation() {
        let vocab = Vocabulary::generic(4).unwrap();
        let ok: BTreeMap<String, Vec<usize>> =
            [("g".to_string(), vec![0, 1])].into_iter().collect();
        assert!(vocab.clone().with_merge_groups(ok).is_ok());

        let overlapping: BTreeMap<String, Vec<usize>> = [
            ("g1".to_string(), vec![0, 1]),
            ("g2".to_string(), vec![1, 2]),
        ]
        .into_iter()
        .collect();
        assert!(vocab.clone().with_merge_groups(overlapping).is_err());

        let out_of_range: BTreeMap<String, Vec<usize>> =
            [("g".to_string(), vec![7])].into_iter().collect();
        assert!(vocab.clone().with_merge_groups(out_of_range).is_err());

        let empty: BTreeMap<String, Vec<usize>> = [("g".to_string(), vec![])].into_iter().collect();
        assert!(vocab.with_merge_groups(empty).is_err());
    }
}
