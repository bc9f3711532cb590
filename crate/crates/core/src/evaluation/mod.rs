//! Base-to-new evaluation, harmonic mean, and attention attribute analysis.

mod report;
mod split;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapters::{adapted_classifier, SelfAttentionParams};
use crate::embedding::LabeledFeatures;
use crate::ensemble::{zero_shot_eval, SentenceBank};
use crate::error::{Error, Result};

pub use report::{attention_report, AttentionReport, AttributeScore, ATTENTION_AGGREGATION};
pub use split::{split_base_new, SplitManifest};

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::NegativeInput(a, b));
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseToNewResult {
    pub base_acc: f64,
    pub new_acc: f64,
    pub harmonic: f64,
}

impl BaseToNewResult {
    pub fn new(base_acc: f64, new_acc: f64) -> Result<Self> {
        Ok(Self {
            base_acc,
            new_acc,
            harmonic: harmonic_mean(base_acc, new_acc)?,
        })
    }
}

/// Accuracy of the adapted classifier for the classes of `test`.
pub fn adapted_accuracy(
    params: &SelfAttentionParams,
    beta: f64,
    bank: &SentenceBank,
    test: &LabeledFeatures,
    tau: f64,
) -> Result<f64> {
    let bank = bank.subset(test.class_names())?;
    let w = adapted_classifier(params, &bank, beta)?;
    zero_shot_eval(test, &w, tau)
}

/// Applies the same trained attention parameters to the base and the new
/// classes' sentences. The two halves are computed independently.
pub fn evaluate_base_to_new(
    params: &SelfAttentionParams,
    beta: f64,
    bank_base: &SentenceBank,
    bank_new: &SentenceBank,
    test_base: &LabeledFeatures,
    test_new: &LabeledFeatures,
    tau: f64,
) -> Result<BaseToNewResult> {
    if let Some(shared) = test_base
        .class_names()
        .iter()
        .find(|c| test_new.class_names().contains(c))
    {
        return Err(Error::ClassCoverage(format!("{shared:?} is in both base and new sets")));
    }
    let base_acc = adapted_accuracy(params, beta, bank_base, test_base, tau)?;
    let new_acc = adapted_accuracy(params, beta, bank_new, test_new, tau)?;
    BaseToNewResult::new(base_acc, new_acc)
}

/// Aligned Base / New / H table in percent.
pub fn format_base_to_new_table(rows: &[(String, BaseToNewResult)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", "method", "Base", "New", "H");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.2}  {:>6.2}  {:>6.2}",
            name,
            r.base_acc * 100.0,
            r.new_acc * 100.0,
            r.harmonic * 100.0
        );
    }
    out
}
