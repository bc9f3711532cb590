//! Dense embedding matrices and the cosine-classifier primitives built on them.
//!
//! Storage is `f32`; every reduction (dot products, norms, means) accumulates
//! in `f64`. Scores and probabilities are returned as `f64` matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default softmax temperature (logit scale 100).
pub const DEFAULT_TAU: f64 = 0.01;

/// Rows below this norm cannot be normalized.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance used when validating the `normalized` flag of [`ClassifierWeights`].
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Row-major `rows x dim` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptyMatrix);
        }
        if values.len() != rows * dim {
            return Err(Error::DimMismatch {
                context: "embedding payload length",
                expected: rows * dim,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    context: "row length",
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, values)
    }

    /// Builds from `f64` rows, rounding to `f32` storage.
    pub fn from_f64(rows: usize, dim: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, dim, values.iter().map(|&v| v as f32).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Copies the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidInput(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, values)
    }

    /// Unit rows in `f64`, without rounding back to storage precision.
    pub fn normalized_f64(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.values.len());
        for (index, row) in self.iter_rows().enumerate() {
            let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            out.extend(unit_vector(&row).ok_or(Error::ZeroRow { index })?);
        }
        Ok(out)
    }
}

/// `K x dim` classification prototypes, one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    classes: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl ClassifierWeights {
    pub fn new(classes: usize, dim: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        let m = EmbeddingMatrix::new(classes, dim, values)?;
        if normalized {
            for (index, row) in m.iter_rows().enumerate() {
                let norm = norm_f64(row);
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::NotNormalized { index, norm });
                }
            }
        }
        Ok(Self {
            classes,
            dim,
            values: m.into_values(),
            normalized,
        })
    }

    /// Rounds unit `f64` rows to storage and sets the normalized flag.
    pub(crate) fn from_unit_rows(classes: usize, dim: usize, rows: &[f64]) -> Result<Self> {
        Self::new(
            classes,
            dim,
            rows.iter().map(|&v| v as f32).collect(),
            true,
        )
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: self.classes,
            dim: self.dim,
            values: self.values.clone(),
        }
    }

    /// Returns a copy with every row scaled to unit length.
    pub fn normalize(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        let unit = l2_normalize(&self.as_matrix())?;
        Ok(Self {
            classes: self.classes,
            dim: self.dim,
            values: unit.into_values(),
            normalized: true,
        })
    }
}

/// Image features with integer labels into `class_names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    features: EmbeddingMatrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledFeatures {
    pub fn new(
        features: EmbeddingMatrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimMismatch {
                context: "label count vs feature rows",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        let classes = class_names.len();
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
        Ok(Self {
            features,
            labels,
            class_names,
        })
    }

    pub fn features(&self) -> &EmbeddingMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps only rows whose class is in `keep` and relabels them into the order of `keep`.
    pub fn restrict_to_classes(&self, keep: &[String]) -> Result<Self> {
        let mut remap = vec![None; self.class_names.len()];
        for (new_idx, name) in keep.iter().enumerate() {
            let old = self
                .class_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::ClassCoverage(format!("class {name:?} not in features")))?;
            remap[old] = Some(new_idx);
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, &label) in self.labels.iter().enumerate() {
            if let Some(new_label) = remap[label] {
                rows.push(i);
                labels.push(new_label);
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput(
                "no rows left after restricting classes".into(),
            ));
        }
        Self::new(self.features.select_rows(&rows)?, labels, keep.to_vec())
    }
}

/// Row-major `rows x cols` matrix of `f64` scores or probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "score matrix length",
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimMismatch {
                context: "score row length",
                expected: cols,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0
        self.values.chunks(self.cols.max(1)).take(self.rows)
    }
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

/// Unit vector in the direction of `v`, or `None` when `v` is (near) zero.
pub(crate) fn unit_vector(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= ZERO_NORM) {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let unit = m.normalized_f64()?;
    EmbeddingMatrix::from_f64(m.rows(), m.dim(), &unit)
}

/// Cosine logits `(f_n . w_k) / tau`.
///
/// Neither input is normalized here; callers pass unit rows when they want
/// cosine similarities.
pub fn logits(f: &EmbeddingMatrix, w: &ClassifierWeights, tau: f64) -> Result<ScoreMatrix> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    if f.dim() != w.dim() {
        return Err(Error::DimMismatch {
            context: "feature dim vs classifier dim",
            expected: w.dim(),
            found: f.dim(),
        });
    }
    let mut values = Vec::with_capacity(f.rows() * w.classes());
    for x in f.iter_rows() {
        values.extend(w.iter_rows().map(|proto| dot_f64(x, proto) / tau));
    }
    ScoreMatrix::new(f.rows(), w.classes(), values)
}

/// Normalizes features (and the classifier, if unflagged) before computing logits.
pub fn cosine_logits(f: &EmbeddingMatrix, w: &ClassifierWeights, tau: f64) -> Result<ScoreMatrix> {
    let f = l2_normalize(f)?;
    let w = w.normalize()?;
    logits(&f, &w, tau)
}

/// Max-subtracted softmax of one finite row.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Stable `log(softmax(scores))`.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

pub fn softmax_rows(scores: &ScoreMatrix) -> ScoreMatrix {
    let values = scores.iter_rows().flat_map(softmax).collect();
    ScoreMatrix {
        rows: scores.rows,
        cols: scores.cols,
        values,
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in row.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Per-row argmax over a logit or probability matrix.
pub fn predict(scores: &ScoreMatrix) -> Result<Vec<usize>> {
    if scores.cols() == 0 {
        return Err(Error::EmptyRow);
    }
    Ok(scores
        .iter_rows()
        .map(|row| argmax(row).expect("non-empty row"))
        .collect())
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(rows: &[&[f32]]) -> ClassifierWeights {
        let dim = rows[0].len();
        ClassifierWeights::new(rows.len(), dim, rows.concat(), false).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::from_rows(&[[3.0f32, 4.0]]).unwrap();
        let n = l2_normalize(&m).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_leaves_unit_rows() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(l2_normalize(&m).unwrap(), m);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize(&m), Err(Error::ZeroRow { index: 1 })));
    }

    #[test]
    fn matrix_rejects_non_finite_and_empty() {
        assert!(matches!(
            EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(
            EmbeddingMatrix::new(0, 2, vec![]),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn normalized_flag_is_checked() {
        assert!(ClassifierWeights::new(1, 2, vec![3.0, 4.0], true).is_err());
        assert!(ClassifierWeights::new(1, 2, vec![0.6, 0.8], true).is_ok());
    }

    #[test]
    fn logits_on_orthonormal_basis() {
        let f = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let w = weights(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(logits(&f, &w, 1.0).unwrap().values(), &[1.0, 0.0]);
        assert_eq!(logits(&f, &w, 0.5).unwrap().values(), &[2.0, 0.0]);
    }

    #[test]
    fn logits_errors() {
        let f = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0, 0.0]]).unwrap();
        let w = weights(&[&[1.0, 0.0]]);
        assert!(matches!(logits(&f, &w, 1.0), Err(Error::DimMismatch { .. })));
        let f = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert!(matches!(logits(&f, &w, 0.0), Err(Error::NonPositiveTau(_))));
        assert!(matches!(logits(&f, &w, -1.0), Err(Error::NonPositiveTau(_))));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        let big = softmax(&[1000.0, 999.0]);
        let small = softmax(&[1.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big[0] - small[0]).abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let s = ScoreMatrix::from_rows(&[vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        assert_eq!(predict(&s).unwrap(), vec![1, 0]);
        let empty = ScoreMatrix::new(2, 0, vec![]).unwrap();
        assert!(matches!(predict(&empty), Err(Error::EmptyRow)));
    }

    #[test]
    fn labeled_features_validate_labels() {
        let f = EmbeddingMatrix::from_rows(&[[1.0f32], [2.0]]).unwrap();
        let err = LabeledFeatures::new(f.clone(), vec![0, 2], vec!["a".into(), "b".into()]);
        assert!(matches!(err, Err(Error::LabelOutOfRange { row: 1, .. })));
        assert!(LabeledFeatures::new(f, vec![0], vec!["a".into()]).is_err());
    }
}
