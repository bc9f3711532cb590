//! Few-shot training of the adapters with frozen encoders.

pub mod adam;
pub mod loss;
pub mod sampling;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{
    AdapterConfig, AttentionAdapter, MlpAdapter, MlpAdapterParams, Parameters, SelfAttentionParams,
};
use crate::embedding::{ClassifierWeights, LabeledFeatures, DEFAULT_TAU};
use crate::ensemble::SentenceBank;
use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use loss::{classifier_loss, cross_entropy, cross_entropy_probs, ClassifierLoss};
pub use sampling::sample_few_shot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub shots: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Rows per step; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub beta_grid: Vec<f64>,
    /// Residual ratio used by a single `train_adapter` run.
    pub beta: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub tau: f64,
    pub heads: usize,
    pub init_scale: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shots: 16,
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: None,
            beta_grid: (1..=10).map(|i| i as f64 / 10.0).collect(),
            beta: 0.5,
            seed: 0,
            weight_decay: 0.0,
            tau: DEFAULT_TAU,
            heads: 1,
            init_scale: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.shots == 0 {
            return bad("shots must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(b) = self.beta_grid.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return bad(format!("beta grid value {b} is outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} is outside [0, 1]", self.beta));
        }
        if !(self.tau > 0.0) {
            return Err(Error::NonPositiveTau(self.tau));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn adapter_config(&self) -> AdapterConfig {
        AdapterConfig {
            beta: self.beta,
            heads: self.heads,
            seed: self.seed,
            init_scale: self.init_scale,
            ..Default::default()
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured before that epoch's updates.
    pub loss_history: Vec<f64>,
    pub final_beta: f64,
    /// Accuracy on the training rows with the final parameters.
    pub train_accuracy: f64,
    #[serde(with = "duration_secs")]
    pub wall_clock: Duration,
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

fn batches(n: usize, batch: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batch {
        Some(b) if b < n => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![(0..n).collect()],
    }
}

fn gather(values: &[f64], dim: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .flat_map(|&r| values[r * dim..(r + 1) * dim].iter().copied())
        .collect()
}

fn norms_summary<P: Parameters>(p: &P) -> String {
    p.tensors()
        .iter()
        .map(|(name, t)| format!("{name}={:.4e}", t.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Trains the attention adapter on `few_shot` with the residual ratio `cfg.beta`.
///
/// Only the attention parameters change; sentence embeddings and image
/// features are read-only.
pub fn train_adapter(
    cfg: &TrainConfig,
    few_shot: &LabeledFeatures,
    bank: &SentenceBank,
) -> Result<(SelfAttentionParams, TrainReport)> {
    let init = SelfAttentionParams::init(bank.dim(), &cfg.adapter_config())?;
    train_adapter_from(cfg, few_shot, bank, init)
}

/// Like [`train_adapter`], starting from the given parameters.
pub fn train_adapter_from(
    cfg: &TrainConfig,
    few_shot: &LabeledFeatures,
    bank: &SentenceBank,
    init: SelfAttentionParams,
) -> Result<(SelfAttentionParams, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let bank = bank.subset(few_shot.class_names())?;
    let dim = bank.dim();
    if few_shot.features().dim() != dim {
        return Err(Error::DimMismatch {
            context: "image dim vs sentence dim",
            expected: dim,
            found: few_shot.features().dim(),
        });
    }
    if few_shot.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    let features = few_shot.features().normalized_f64()?;
    let labels = few_shot.labels();
    let mut adapter = AttentionAdapter::new(init)?;
    let mut adam = Adam::new(cfg.adam_config());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for (step, rows) in batches(labels.len(), cfg.batch_size, &mut rng).iter().enumerate() {
            let batch_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let protos = adapter.forward(&bank, cfg.beta)?;
            let out = classifier_loss(&gather(&features, dim, rows), &protos, dim, &batch_labels, cfg.tau)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    diagnostic: format!(
                        "loss={} previous={:?} params: {}",
                        out.loss,
                        loss_history.last(),
                        norms_summary(adapter.params())
                    ),
                });
            }
            epoch_loss += out.loss * rows.len() as f64;
            let grads = adapter.backward(&out.d_prototypes)?;
            adam.step(adapter.params_mut(), &grads.params);
        }
        loss_history.push(epoch_loss / labels.len() as f64);
    }

    let protos = adapter.forward(&bank, cfg.beta)?;
    let fin = classifier_loss(&features, &protos, dim, labels, cfg.tau)?;
    let report = TrainReport {
        loss_history,
        final_beta: cfg.beta,
        train_accuracy: fin.correct as f64 / labels.len() as f64,
        wall_clock: started.elapsed(),
    };
    Ok((adapter.into_params(), report))
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaCandidate {
    pub beta: f64,
    pub train_accuracy: f64,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BetaSearch {
    pub best_beta: f64,
    pub candidates: Vec<BetaCandidate>,
    pub params: SelfAttentionParams,
    pub report: TrainReport,
}

/// Trains once per grid value and keeps the one with the best few-shot training
/// accuracy. Ties go to the smaller `beta`, then to the earlier grid entry.
pub fn tune_beta(cfg: &TrainConfig, few_shot: &LabeledFeatures, bank: &SentenceBank) -> Result<BetaSearch> {
    if cfg.beta_grid.is_empty() {
        return Err(Error::InvalidInput("beta grid is empty".into()));
    }
    let mut best: Option<(f64, f64, SelfAttentionParams, TrainReport)> = None;
    let mut candidates = Vec::with_capacity(cfg.beta_grid.len());
    for &beta in &cfg.beta_grid {
        let run = TrainConfig {
            beta,
            ..cfg.clone()
        };
        let (params, report) = train_adapter(&run, few_shot, bank)?;
        let acc = report.train_accuracy;
        log::debug!("beta {beta}: train accuracy {acc:.4}");
        candidates.push(BetaCandidate {
            beta,
            train_accuracy: acc,
            final_loss: report.loss_history.last().copied(),
        });
        let better = match &best {
            None => true,
            Some((b, a, _, _)) => acc > *a || (acc == *a && beta < *b),
        };
        if better {
            best = Some((beta, acc, params, report));
        }
    }
    let (best_beta, _, params, report) = best.expect("grid is non-empty");
    Ok(BetaSearch {
        best_beta,
        candidates,
        params,
        report,
    })
}

/// Trains the visual MLP adapter against fixed prototypes `w` with ratio `alpha`.
pub fn train_mlp_adapter(
    cfg: &TrainConfig,
    few_shot: &LabeledFeatures,
    w: &ClassifierWeights,
    alpha: f64,
) -> Result<(MlpAdapterParams, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let w = w.normalize()?;
    let dim = w.dim();
    let protos: Vec<f64> = w.values().iter().map(|&v| v as f64).collect();
    if w.classes() != few_shot.num_classes() {
        return Err(Error::DimMismatch {
            context: "classifier classes vs dataset classes",
            expected: few_shot.num_classes(),
            found: w.classes(),
        });
    }
    let adapter_cfg = AdapterConfig {
        alpha,
        seed: cfg.seed,
        init_scale: cfg.init_scale,
        ..Default::default()
    };
    let mut adapter = MlpAdapter::new(MlpAdapterParams::init(dim, &adapter_cfg)?);
    let mut adam = Adam::new(cfg.adam_config());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let labels = few_shot.labels();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for (step, rows) in batches(labels.len(), cfg.batch_size, &mut rng).iter().enumerate() {
            let batch = few_shot.features().select_rows(rows)?;
            let batch_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let adapted = adapter.forward(&batch, alpha)?;
            let out = classifier_loss(&adapted, &protos, dim, &batch_labels, cfg.tau)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    diagnostic: format!("loss={} params: {}", out.loss, norms_summary(adapter.params())),
                });
            }
            epoch_loss += out.loss * rows.len() as f64;
            let grads = adapter.backward(&out.d_features)?;
            adam.step(adapter.params_mut(), &grads.params);
        }
        loss_history.push(epoch_loss / labels.len() as f64);
    }
    let adapted = adapter.forward(few_shot.features(), alpha)?;
    let fin = classifier_loss(&adapted, &protos, dim, labels, cfg.tau)?;
    Ok((
        adapter.into_params(),
        TrainReport {
            loss_history,
            final_beta: alpha,
            train_accuracy: fin.correct as f64 / labels.len() as f64,
            wall_clock: started.elapsed(),
        },
    ))
}
