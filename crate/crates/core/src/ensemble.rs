//! Zero-shot classifiers from per-class sentence ensembles.

use serde::{Deserialize, Serialize};

use crate::embedding::{
    accuracy, l2_normalize, logits, predict, softmax, unit_vector, ClassifierWeights,
    EmbeddingMatrix, LabeledFeatures, ScoreMatrix,
};
use crate::error::{Error, Result};

/// Sentences for one class with their embeddings and optional attribute names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBlock {
    texts: Vec<String>,
    embeddings: EmbeddingMatrix,
    attributes: Option<Vec<String>>,
}

impl ClassBlock {
    pub fn new(
        texts: Vec<String>,
        embeddings: EmbeddingMatrix,
        attributes: Option<Vec<String>>,
    ) -> Result<Self> {
        if texts.len() != embeddings.rows() {
            return Err(Error::DimMismatch {
                context: "sentence texts vs embedding rows",
                expected: embeddings.rows(),
                found: texts.len(),
            });
        }
        if let Some(attrs) = &attributes {
            if attrs.len() != texts.len() {
                return Err(Error::DimMismatch {
                    context: "attribute names vs sentences",
                    expected: texts.len(),
                    found: attrs.len(),
                });
            }
        }
        Ok(Self {
            texts,
            embeddings,
            attributes,
        })
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn attributes(&self) -> Option<&[String]> {
        self.attributes.as_deref()
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Reorders sentences (texts, embeddings and attributes together).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidInput(format!(
                "{order:?} is not a permutation of {} sentences",
                self.len()
            )));
        }
        Self::new(
            order.iter().map(|&i| self.texts[i].clone()).collect(),
            self.embeddings.select_rows(order)?,
            self.attributes
                .as_ref()
                .map(|a| order.iter().map(|&i| a[i].clone()).collect()),
        )
    }
}

/// Per-class sentence embeddings; the number of sentences may differ by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceBank {
    class_names: Vec<String>,
    blocks: Vec<ClassBlock>,
}

impl SentenceBank {
    pub fn new(class_names: Vec<String>, blocks: Vec<ClassBlock>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::InvalidInput("sentence bank has no classes".into()));
        }
        if class_names.len() != blocks.len() {
            return Err(Error::DimMismatch {
                context: "class names vs sentence blocks",
                expected: class_names.len(),
                found: blocks.len(),
            });
        }
        let dim = blocks[0].embeddings.dim();
        for block in &blocks {
            if block.embeddings.dim() != dim {
                return Err(Error::DimMismatch {
                    context: "sentence embedding dim across classes",
                    expected: dim,
                    found: block.embeddings.dim(),
                });
            }
        }
        Ok(Self {
            class_names,
            blocks,
        })
    }

    /// One sentence per class, as produced by a single prompt template.
    pub fn single_prompt(class_names: Vec<String>, prompts: Vec<String>, embeddings: &EmbeddingMatrix) -> Result<Self> {
        if prompts.len() != embeddings.rows() || class_names.len() != prompts.len() {
            return Err(Error::DimMismatch {
                context: "single-prompt bank",
                expected: class_names.len(),
                found: embeddings.rows(),
            });
        }
        let blocks = prompts
            .into_iter()
            .enumerate()
            .map(|(k, text)| ClassBlock::new(vec![text], embeddings.select_rows(&[k])?, None))
            .collect::<Result<Vec<_>>>()?;
        Self::new(class_names, blocks)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn blocks(&self) -> &[ClassBlock] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &ClassBlock {
        &self.blocks[k]
    }

    pub fn num_classes(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].embeddings.dim()
    }

    pub fn total_sentences(&self) -> usize {
        self.blocks.iter().map(ClassBlock::len).sum()
    }

    /// Blocks for `names`, in that order.
    pub fn subset(&self, names: &[String]) -> Result<Self> {
        let blocks = names
            .iter()
            .map(|name| {
                self.class_names
                    .iter()
                    .position(|c| c == name)
                    .map(|k| self.blocks[k].clone())
                    .ok_or_else(|| Error::ClassCoverage(format!("class {name:?} has no sentences")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(names.to_vec(), blocks)
    }

    /// Replaces one class block, keeping the rest.
    pub fn with_block(&self, k: usize, block: ClassBlock) -> Result<Self> {
        let mut blocks = self.blocks.clone();
        blocks[k] = block;
        Self::new(self.class_names.clone(), blocks)
    }
}

/// Mean of the unit-normalized rows of one class block, in `f64`.
pub(crate) fn normalized_mean(block: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let unit = block.normalized_f64()?;
    let dim = block.dim();
    let mut mean = vec![0.0f64; dim];
    for row in unit.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let count = block.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(mean)
}

pub(crate) fn renormalize(v: &[f64], class: usize) -> Result<Vec<f64>> {
    unit_vector(v).ok_or(Error::ZeroRow { index: class })
}

/// Prompt-ensemble prototypes: normalize each sentence, average per class,
/// then normalize the mean.
pub fn mean_prototype(bank: &SentenceBank) -> Result<ClassifierWeights> {
    let dim = bank.dim();
    let mut rows = Vec::with_capacity(bank.num_classes() * dim);
    for (k, block) in bank.blocks().iter().enumerate() {
        let mean = normalized_mean(block.embeddings())?;
        rows.extend(renormalize(&mean, k)?);
    }
    ClassifierWeights::from_unit_rows(bank.num_classes(), dim, &rows)
}

/// Class scores averaged over per-sentence cosine similarities, before softmax.
///
/// Returns per-image probabilities over the bank's classes.
pub fn score_ensemble_probs(
    features: &EmbeddingMatrix,
    bank: &SentenceBank,
    tau: f64,
) -> Result<ScoreMatrix> {
    let scores = score_ensemble_logits(features, bank, tau)?;
    let values = scores.iter_rows().flat_map(softmax).collect();
    ScoreMatrix::new(scores.rows(), scores.cols(), values)
}

/// The pre-softmax scores of [`score_ensemble_probs`], divided by `tau`.
pub fn score_ensemble_logits(
    features: &EmbeddingMatrix,
    bank: &SentenceBank,
    tau: f64,
) -> Result<ScoreMatrix> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    if features.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            context: "feature dim vs sentence dim",
            expected: bank.dim(),
            found: features.dim(),
        });
    }
    let f = l2_normalize(features)?;
    let sentences = bank
        .blocks()
        .iter()
        .map(|b| l2_normalize(b.embeddings()))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(f.rows() * bank.num_classes());
    for x in f.iter_rows() {
        for block in &sentences {
            let total: f64 = block
                .iter_rows()
                .map(|s| crate::embedding::dot_f64(x, s))
                .sum();
            values.push(total / block.rows() as f64 / tau);
        }
    }
    ScoreMatrix::new(f.rows(), bank.num_classes(), values)
}

fn check_class_count(data: &LabeledFeatures, classes: usize) -> Result<()> {
    if classes != data.num_classes() {
        return Err(Error::DimMismatch {
            context: "classifier classes vs dataset classes",
            expected: data.num_classes(),
            found: classes,
        });
    }
    if let Some((row, &label)) = data.labels().iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            classes,
        });
    }
    Ok(())
}

/// Top-1 accuracy of cosine classification against `w`.
pub fn zero_shot_eval(data: &LabeledFeatures, w: &ClassifierWeights, tau: f64) -> Result<f64> {
    check_class_count(data, w.classes())?;
    let f = l2_normalize(data.features())?;
    let w = w.normalize()?;
    let preds = predict(&logits(&f, &w, tau)?)?;
    Ok(accuracy(&preds, data.labels()))
}

/// Top-1 accuracy of the score-space ensemble.
pub fn score_ensemble_eval(data: &LabeledFeatures, bank: &SentenceBank, tau: f64) -> Result<f64> {
    check_class_count(data, bank.num_classes())?;
    let preds = predict(&score_ensemble_logits(data.features(), bank, tau)?)?;
    Ok(accuracy(&preds, data.labels()))
}
