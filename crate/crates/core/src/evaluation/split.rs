use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint base (training) and new (held-out) class lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub base_classes: Vec<String>,
    pub new_classes: Vec<String>,
}

impl SplitManifest {
    pub fn validate(&self, class_names: &[String]) -> Result<()> {
        for name in self.base_classes.iter().chain(&self.new_classes) {
            if !class_names.contains(name) {
                return Err(Error::ClassCoverage(format!("split class {name:?} is not in the dataset")));
            }
        }
        if let Some(dup) = self.base_classes.iter().find(|c| self.new_classes.contains(c)) {
            return Err(Error::ClassCoverage(format!("{dup:?} is both base and new")));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct FixedSplit {
    total_classes: usize,
    new_class_indices: Vec<usize>,
}

const CUB_SPLIT: &str = include_str!("../../data/cub_split.json");

/// Fixed 150/50 CUB split; indices are 1-based positions in canonical class order.
fn cub_split(class_names: &[String]) -> Result<SplitManifest> {
    let fixed: FixedSplit = serde_json::from_str(CUB_SPLIT)?;
    if class_names.len() != fixed.total_classes {
        return Err(Error::ClassCoverage(format!(
            "the bundled CUB split needs {} classes, got {}",
            fixed.total_classes,
            class_names.len()
        )));
    }
    let mut base = Vec::new();
    let mut new = Vec::new();
    for (i, name) in class_names.iter().enumerate() {
        if fixed.new_class_indices.contains(&(i + 1)) {
            new.push(name.clone());
        } else {
            base.push(name.clone());
        }
    }
    Ok(SplitManifest {
        base_classes: base,
        new_classes: new,
    })
}

/// Splits classes into base and new halves (`ceil(K/2)` base).
///
/// `dataset_id` `"cub"` uses the bundled fixed split; every other dataset gets
/// a seeded random partition. Both lists keep the input class order.
pub fn split_base_new(class_names: &[String], dataset_id: &str, seed: u64) -> Result<SplitManifest> {
    if class_names.len() < 2 {
        return Err(Error::TooFewClasses(class_names.len()));
    }
    if dataset_id.eq_ignore_ascii_case("cub") {
        return cub_split(class_names);
    }
    let mut order: Vec<usize> = (0..class_names.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_base = class_names.len().div_ceil(2);
    let mut is_base = vec![false; class_names.len()];
    for &i in &order[..n_base] {
        is_base[i] = true;
    }
    let (base, new): (Vec<_>, Vec<_>) = class_names
        .iter()
        .cloned()
        .zip(is_base)
        .partition(|(_, b)| *b);
    Ok(SplitManifest {
        base_classes: base.into_iter().map(|(c, _)| c).collect(),
        new_classes: new.into_iter().map(|(c, _)| c).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class_{i:03}")).collect()
    }

    #[test]
    fn generic_split_is_equal_and_disjoint() {
        let s = split_base_new(&names(10), "dtd", 1).unwrap();
        assert_eq!(s.base_classes.len(), 5);
        assert_eq!(s.new_classes.len(), 5);
        assert!(s.base_classes.iter().all(|c| !s.new_classes.contains(c)));
        s.validate(&names(10)).unwrap();
    }

    #[test]
    fn odd_count_puts_extra_class_in_base() {
        let s = split_base_new(&names(7), "x", 0).unwrap();
        assert_eq!((s.base_classes.len(), s.new_classes.len()), (4, 3));
    }

    #[test]
    fn seeded() {
        let a = split_base_new(&names(20), "x", 4).unwrap();
        assert_eq!(a, split_base_new(&names(20), "x", 4).unwrap());
        assert_ne!(a, split_base_new(&names(20), "x", 5).unwrap());
    }

    #[test]
    fn cub_is_fixed_150_50() {
        let a = split_base_new(&names(200), "CUB", 1).unwrap();
        let b = split_base_new(&names(200), "cub", 99).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.base_classes.len(), a.new_classes.len()), (150, 50));
        assert!(split_base_new(&names(199), "cub", 0).is_err());
    }

    #[test]
    fn too_few_classes() {
        assert!(matches!(split_base_new(&names(1), "x", 0), Err(Error::TooFewClasses(1))));
    }
}
