use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::LabeledFeatures;
use crate::error::{Error, Result};

/// Draws `min(shots, available)` rows per class without replacement.
///
/// Output rows are grouped by class; within a class they keep their
/// original relative order. The draw depends only on `seed`.
pub fn sample_few_shot(data: &LabeledFeatures, shots: usize, seed: u64) -> Result<LabeledFeatures> {
    if shots == 0 {
        return Err(Error::InvalidInput("shots must be >= 1".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &label) in data.labels().iter().enumerate() {
        per_class[label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, members) in per_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass(k));
        }
        let take = shots.min(members.len());
        let mut picked: Vec<usize> = sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|j| members[j])
            .collect();
        picked.sort_unstable();
        labels.extend(std::iter::repeat_n(k, picked.len()));
        rows.extend(picked);
    }
    LabeledFeatures::new(
        data.features().select_rows(&rows)?,
        labels,
        data.class_names().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingMatrix;

    fn data(counts: &[usize]) -> LabeledFeatures {
        let mut labels = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(k, n));
        }
        let values = (0..labels.len()).map(|i| i as f32).collect();
        let names = (0..counts.len()).map(|k| format!("c{k}")).collect();
        LabeledFeatures::new(EmbeddingMatrix::new(labels.len(), 1, values).unwrap(), labels, names)
            .unwrap()
    }

    #[test]
    fn clamps_to_available() {
        let d = data(&[10, 30]);
        let s = sample_few_shot(&d, 16, 0).unwrap();
        assert_eq!(s.labels().iter().filter(|&&l| l == 0).count(), 10);
        assert_eq!(s.labels().iter().filter(|&&l| l == 1).count(), 16);
    }

    #[test]
    fn deterministic_per_seed() {
        let d = data(&[40, 40, 40]);
        let a = sample_few_shot(&d, 5, 11).unwrap();
        let b = sample_few_shot(&d, 5, 11).unwrap();
        let c = sample_few_shot(&d, 5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_shot_per_class() {
        let d = data(&[3, 4, 5, 6, 7]);
        let s = sample_few_shot(&d, 1, 3).unwrap();
        assert_eq!(s.labels(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let d = data(&[3, 0, 2]);
        assert!(matches!(sample_few_shot(&d, 2, 0), Err(Error::EmptyClass(1))));
    }
}
