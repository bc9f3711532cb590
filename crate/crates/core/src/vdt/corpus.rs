use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

/// One raw LLM response that contributed to the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    /// `"attributes"` for the first prompt, otherwise the class name.
    pub request: String,
    /// Unix seconds when the response arrived.
    pub timestamp: u64,
    /// SHA-256 of the raw response text, lowercase hex.
    pub digest: String,
    /// HTTP attempts spent, including retries.
    pub attempts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    #[serde(default)]
    pub responses: Vec<ResponseRecord>,
}

impl Provenance {
    pub fn record(&mut self, record: ResponseRecord) {
        match self.responses.iter_mut().find(|r| r.request == record.request) {
            Some(slot) => *slot = record,
            None => self.responses.push(record),
        }
    }

    pub fn get(&self, request: &str) -> Option<&ResponseRecord> {
        self.responses.iter().find(|r| r.request == request)
    }
}

/// Class name -> sentences, plus the attribute list they describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdtCorpus {
    pub dataset_id: String,
    pub attribute_list: Vec<String>,
    pub classes: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl VdtCorpus {
    pub fn new(dataset_id: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            attribute_list: Vec::new(),
            classes: IndexMap::new(),
            provenance: Provenance {
                model: model.into(),
                responses: Vec::new(),
            },
        }
    }

    /// Every listed class (or every class present, when `expected` is `None`)
    /// has at least one sentence, and no sentence is empty or padded.
    pub fn validate(&self, expected: Option<&[String]>) -> Result<()> {
        if let Some(names) = expected {
            for name in names {
                if !self.classes.contains_key(name) {
                    return Err(Error::ClassCoverage(format!("corpus has no sentences for {name:?}")));
                }
            }
        }
        for (name, sentences) in &self.classes {
            if sentences.is_empty() {
                return Err(Error::ClassCoverage(format!("class {name:?} has no sentences")));
            }
            if let Some(i) = sentences.iter().position(|s| s.is_empty() || s.trim() != s) {
                return Err(Error::InvalidInput(format!(
                    "sentence {i} of class {name:?} is empty or untrimmed"
                )));
            }
        }
        Ok(())
    }

    pub fn total_sentences(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        let mut c = VdtCorpus::new("fgvc", "gpt-4");
        c.attribute_list = vec!["Manufacturer".into()];
        c.classes.insert("A340-200".into(), vec!["Made by Airbus.".into()]);
        c.provenance.record(ResponseRecord {
            request: "A340-200".into(),
            timestamp: 1,
            digest: "ab".into(),
            attempts: 1,
        });
        c.save(&path).unwrap();
        assert_eq!(VdtCorpus::load(&path).unwrap(), c);
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let keys: Vec<&String> = raw.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["dataset_id", "attribute_list", "classes", "provenance"]);
    }

    #[test]
    fn validation() {
        let mut c = VdtCorpus::new("d", "m");
        c.classes.insert("A".into(), vec!["x".into()]);
        c.validate(None).unwrap();
        assert!(c.validate(Some(&["A".into(), "B".into()])).is_err());
        c.classes.insert("B".into(), vec![]);
        assert!(c.validate(None).is_err());
        c.classes.insert("B".into(), vec![" y".into()]);
        assert!(c.validate(None).is_err());
    }

    #[test]
    fn record_replaces_same_request() {
        let mut p = Provenance::default();
        let r = |d: &str| ResponseRecord {
            request: "A".into(),
            timestamp: 0,
            digest: d.into(),
            attempts: 1,
        };
        p.record(r("1"));
        p.record(r("2"));
        assert_eq!(p.responses.len(), 1);
        assert_eq!(p.get("A").unwrap().digest, "2");
    }
}
