use crate::embedding::{log_softmax, softmax, ScoreMatrix};
use crate::error::{Error, Result};

fn check_labels(rows: usize, cols: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::DimMismatch {
            context: "labels vs score rows",
            expected: rows,
            found: labels.len(),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= cols) {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            classes: cols,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood, computed from logits through a stable log-softmax.
pub fn cross_entropy(logits: &ScoreMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits.rows(), logits.cols(), labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -log_softmax(row)[y])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean `-ln p[label]` over an already-normalized probability matrix.
pub fn cross_entropy_probs(probs: &ScoreMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs.rows(), probs.cols(), labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -row[y].ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Loss of a cosine classifier and its gradients.
#[derive(Debug, Clone)]
pub struct ClassifierLoss {
    pub loss: f64,
    pub correct: usize,
    /// `dL/dprototypes`, `K x D`.
    pub d_prototypes: Vec<f64>,
    /// `dL/dfeatures`, `N x D`.
    pub d_features: Vec<f64>,
}

/// Cross-entropy of `softmax(F W^T / tau)` for unit feature rows `F` (`N x D`)
/// and prototype rows `W` (`K x D`), averaged over the rows.
pub fn classifier_loss(
    features: &[f64],
    prototypes: &[f64],
    dim: usize,
    labels: &[usize],
    tau: f64,
) -> Result<ClassifierLoss> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    let n = labels.len();
    let k = prototypes.len() / dim;
    check_labels(features.len() / dim, k, labels)?;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut d_prototypes = vec![0.0; k * dim];
    let mut d_features = vec![0.0; n * dim];
    for (i, &y) in labels.iter().enumerate() {
        let f = &features[i * dim..(i + 1) * dim];
        let z: Vec<f64> = prototypes
            .chunks_exact(dim)
            .map(|w| w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        loss -= log_softmax(&z)[y];
        if crate::embedding::argmax(&z) == Some(y) {
            correct += 1;
        }
        let p = softmax(&z);
        for (c, w) in prototypes.chunks_exact(dim).enumerate() {
            let dz = (p[c] - if c == y { 1.0 } else { 0.0 }) / (n as f64 * tau);
            if dz == 0.0 {
                continue;
            }
            for j in 0..dim {
                d_prototypes[c * dim + j] += dz * f[j];
                d_features[i * dim + j] += dz * w[j];
            }
        }
    }
    Ok(ClassifierLoss {
        loss: if n == 0 { 0.0 } else { loss / n as f64 },
        correct,
        d_prototypes,
        d_features,
    })
}
