use serde::{Deserialize, Serialize};

use crate::adapters::{attention_forward, SelfAttentionParams};
use crate::embedding::l2_normalize;
use crate::ensemble::SentenceBank;
use crate::error::{Error, Result};

/// How per-sentence attention becomes a per-attribute score; recorded in every report.
pub const ATTENTION_AGGREGATION: &str =
    "mean attention received by each key position, averaged over queries, heads and classes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub attribute: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub aggregation: String,
    pub classes: usize,
    /// All attributes, highest score first.
    pub ranked: Vec<AttributeScore>,
    pub top: Vec<AttributeScore>,
    /// Lowest-scored attributes, lowest first.
    pub bottom: Vec<AttributeScore>,
}

impl AttentionReport {
    pub fn to_table(&self) -> String {
        let width = self.ranked.iter().map(|a| a.attribute.len()).max().unwrap_or(9).max(9);
        let mut out = format!("{:<width$}  {:>8}\n", "attribute", "score");
        for a in &self.ranked {
            let mark = if self.top.contains(a) {
                " +"
            } else if self.bottom.contains(a) {
                " -"
            } else {
                ""
            };
            out.push_str(&format!("{:<width$}  {:>8.5}{mark}\n", a.attribute, a.score));
        }
        out
    }
}

/// Ranks attributes by the attention their sentences receive.
///
/// Every class must carry the same attribute names in the same order.
pub fn attention_report(
    params: &SelfAttentionParams,
    bank: &SentenceBank,
    top_n: usize,
) -> Result<AttentionReport> {
    let schema = bank.block(0).attributes().ok_or_else(|| {
        Error::RaggedAttributeSchema(format!("class {:?} has no attribute names", bank.class_names()[0]))
    })?;
    for (name, block) in bank.class_names().iter().zip(bank.blocks()) {
        match block.attributes() {
            Some(a) if a == schema => {}
            Some(a) if a.len() != schema.len() => {
                return Err(Error::RaggedAttributeSchema(format!(
                    "class {name:?} has {} sentences, expected {}",
                    a.len(),
                    schema.len()
                )))
            }
            Some(_) => {
                return Err(Error::RaggedAttributeSchema(format!(
                    "attribute names of class {name:?} do not match the schema"
                )))
            }
            None => {
                return Err(Error::RaggedAttributeSchema(format!("class {name:?} has no attribute names")))
            }
        }
    }
    let m = schema.len();
    let mut received = vec![0.0f64; m];
    for block in bank.blocks() {
        let x = l2_normalize(block.embeddings())?;
        let (_, maps) = attention_forward(params, &x)?;
        let mean = maps.mean();
        for row in mean.chunks_exact(m) {
            for (r, a) in received.iter_mut().zip(row) {
                *r += a;
            }
        }
    }
    let denom = (bank.num_classes() * m) as f64;
    let mut ranked: Vec<AttributeScore> = schema
        .iter()
        .zip(&received)
        .map(|(a, &r)| AttributeScore {
            attribute: a.clone(),
            score: r / denom,
        })
        .collect();
    // stable: equal scores keep schema order
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let n = top_n.min(m);
    let top = ranked[..n].to_vec();
    let bottom = ranked.iter().rev().take(n).cloned().collect();
    Ok(AttentionReport {
        aggregation: ATTENTION_AGGREGATION.to_string(),
        classes: bank.num_classes(),
        ranked,
        top,
        bottom,
    })
}
