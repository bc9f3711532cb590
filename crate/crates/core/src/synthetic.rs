//! Seeded synthetic tasks with a known structure, for tests and benchmarks.
//!
//! Each class has a unit mean `mu_c` inside a signal subspace. Its sentence
//! bank holds `informative` sentences near `mu_c` and `noise` sentences made of
//! a distractor direction plus one marker coordinate shared by every class.
//! Distractors sit outside the signal subspace by default; they can instead be
//! drawn inside it, and can be shared across classes per noise attribute.
//! Images are `mu_c` plus isotropic Gaussian noise. Averaging sentences mixes
//! the distractors into every prototype, while attention that keys on the
//! marker can drop them for seen and unseen classes alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{unit_vector, EmbeddingMatrix, LabeledFeatures};
use crate::ensemble::{ClassBlock, SentenceBank};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    /// Leading coordinates that carry class means; the last coordinate is the marker.
    pub signal_dim: usize,
    pub informative: usize,
    pub noise: usize,
    /// Training images per class.
    pub shots: usize,
    pub test_per_class: usize,
    /// Gaussian scale added to informative sentences before normalizing.
    pub sentence_noise: f64,
    /// Weight of the random distractor direction in a noise sentence.
    pub distractor_weight: f64,
    /// Draw distractor directions inside the signal subspace instead of its complement.
    pub distractors_in_signal: bool,
    /// Reuse one distractor direction per noise attribute across all classes,
    /// jittered by `sentence_noise`, instead of drawing one per class.
    pub shared_distractors: bool,
    /// Weight of the shared marker in a noise sentence.
    pub marker_weight: f64,
    /// Per-coordinate Gaussian scale added to images.
    pub image_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            signal_dim: 8,
            informative: 3,
            noise: 5,
            shots: 16,
            test_per_class: 50,
            sentence_noise: 0.2,
            distractor_weight: 2.0,
            distractors_in_signal: false,
            shared_distractors: false,
            marker_weight: 0.5,
            image_noise: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.informative == 0 || self.shots == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidInput(
                "classes, informative, shots and test_per_class must be positive".into(),
            ));
        }
        if self.signal_dim == 0 || self.signal_dim >= self.dim {
            return Err(Error::InvalidInput(format!(
                "signal_dim {} must be in 1..dim ({})",
                self.signal_dim, self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub bank: SentenceBank,
    pub train: LabeledFeatures,
    pub test: LabeledFeatures,
    /// Unit class means.
    pub means: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random unit vector supported on coordinates `range`.
fn unit_in(rng: &mut ChaCha8Rng, dim: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; dim];
        let g = gaussian(rng, range.len(), 1.0);
        v[range.clone()].copy_from_slice(&g);
        if let Some(u) = unit_vector(&v) {
            return u;
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn images(
    rng: &mut ChaCha8Rng,
    cfg: &SyntheticConfig,
    means: &[Vec<f64>],
    per_class: usize,
    names: &[String],
) -> Result<LabeledFeatures> {
    let mut values = Vec::with_capacity(means.len() * per_class * cfg.dim);
    let mut labels = Vec::with_capacity(means.len() * per_class);
    for (c, mu) in means.iter().enumerate() {
        for _ in 0..per_class {
            let noise = gaussian(rng, cfg.dim, cfg.image_noise);
            let x: Vec<f64> = mu.iter().zip(&noise).map(|(m, n)| m + n).collect();
            values.extend(to_f32(&x));
            labels.push(c);
        }
    }
    LabeledFeatures::new(
        EmbeddingMatrix::new(labels.len(), cfg.dim, values)?,
        labels,
        names.to_vec(),
    )
}

/// Builds the task for `cfg`; identical configs give identical tasks.
pub fn synthetic_task(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names: Vec<String> = (0..cfg.classes).map(|c| format!("class_{c:02}")).collect();
    let means: Vec<Vec<f64>> = (0..cfg.classes).map(|_| unit_in(&mut rng, cfg.dim, 0..cfg.signal_dim)).collect();
    let mut marker = vec![0.0; cfg.dim];
    marker[cfg.dim - 1] = 1.0;
    let attributes: Vec<String> = (0..cfg.informative)
        .map(|i| format!("informative_{i}"))
        .chain((0..cfg.noise).map(|i| format!("noise_{i}")))
        .collect();

    let distractor_range = if cfg.distractors_in_signal {
        0..cfg.signal_dim
    } else {
        cfg.signal_dim..cfg.dim - 1
    };
    let shared: Vec<Vec<f64>> = (0..cfg.noise)
        .map(|_| unit_in(&mut rng, cfg.dim, distractor_range.clone()))
        .collect();

    let mut blocks = Vec::with_capacity(cfg.classes);
    for (c, mu) in means.iter().enumerate() {
        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(attributes.len());
        for _ in 0..cfg.informative {
            let mut e = gaussian(&mut rng, cfg.signal_dim, cfg.sentence_noise);
            e.resize(cfg.dim, 0.0);
            let s: Vec<f64> = mu.iter().zip(&e).map(|(m, n)| m + n).collect();
            rows.push(to_f32(&s));
        }
        for base in &shared {
            let r = if cfg.shared_distractors {
                let mut e = vec![0.0; cfg.dim];
                let g = gaussian(&mut rng, distractor_range.len(), cfg.sentence_noise);
                e[distractor_range.clone()].copy_from_slice(&g);
                base.iter().zip(&e).map(|(b, n)| b + n).collect()
            } else {
                unit_in(&mut rng, cfg.dim, distractor_range.clone())
            };
            let s: Vec<f64> = r
                .iter()
                .zip(&marker)
                .map(|(r, m)| cfg.distractor_weight * r + cfg.marker_weight * m)
                .collect();
            rows.push(to_f32(&s));
        }
        let texts = attributes.iter().map(|a| format!("{} {a}", names[c])).collect();
        blocks.push(ClassBlock::new(texts, EmbeddingMatrix::from_rows(&rows)?, Some(attributes.clone()))?);
    }
    let bank = SentenceBank::new(names.clone(), blocks)?;
    let train = images(&mut rng, cfg, &means, cfg.shots, &names)?;
    let test = images(&mut rng, cfg, &means, cfg.test_per_class, &names)?;
    Ok(SyntheticTask {
        bank,
        train,
        test,
        means,
    })
}
