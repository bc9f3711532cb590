//! Dataset manifests tying `.emb` files, labels and sentence texts together.
//!
//! Relative paths resolve against the manifest's directory.
//!
//! ```json
//! {
//!   "dataset_id": "cub",
//!   "class_names": ["Green Heron", "..."],
//!   "image_features": "test_images.emb",
//!   "labels": "test_labels.json",
//!   "train_features": "train_images.emb",
//!   "train_labels": "train_labels.json",
//!   "sentences": [
//!     {"class_name": "Green Heron", "embeddings": "s000.emb",
//!      "texts": ["..."], "attributes": ["..."]}
//!   ],
//!   "attribute_schema": ["..."],
//!   "split": "split.json"
//! }
//! ```
//!
//! Label files are JSON arrays of class indices.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_emb, read_json, write_emb, write_json};
use crate::embedding::{EmbeddingMatrix, LabeledFeatures};
use crate::ensemble::{ClassBlock, SentenceBank};
use crate::error::{Error, Result};
use crate::evaluation::SplitManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEntry {
    pub class_name: String,
    pub embeddings: PathBuf,
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub class_names: Vec<String>,
    /// Evaluation images.
    pub image_features: PathBuf,
    pub labels: PathBuf,
    /// Few-shot pool; defaults to the evaluation images when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    pub sentences: Vec<SentenceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_schema: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
}

/// Which image set of a manifest to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSet {
    Train,
    Test,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl LoadedDataset {
    pub fn open(path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(path)?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { manifest, root })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn images(&self, set: ImageSet) -> Result<LabeledFeatures> {
        let m = &self.manifest;
        let (features, labels) = match (set, &m.train_features, &m.train_labels) {
            (ImageSet::Train, Some(f), Some(l)) => (f, l),
            (ImageSet::Train, Some(_), None) | (ImageSet::Train, None, Some(_)) => {
                return Err(Error::InvalidInput(
                    "train_features and train_labels must be given together".into(),
                ))
            }
            (ImageSet::Train, None, None) => {
                log::warn!("{}: no train images, sampling few-shot rows from the test set", m.dataset_id);
                (&m.image_features, &m.labels)
            }
            (ImageSet::Test, ..) => (&m.image_features, &m.labels),
        };
        let feats = read_emb(&self.resolve(features))?;
        let labels: Vec<usize> = read_json(&self.resolve(labels))?;
        LabeledFeatures::new(feats, labels, m.class_names.clone())
    }

    pub fn bank(&self) -> Result<SentenceBank> {
        load_bank(&self.manifest, &self.root)
    }

    pub fn split(&self) -> Result<Option<SplitManifest>> {
        self.manifest
            .split
            .as_ref()
            .map(|p| read_json(&self.resolve(p)))
            .transpose()
    }

    /// Loads every referenced file and checks that dimensions agree.
    pub fn validate(&self) -> Result<()> {
        let bank = self.bank()?;
        for set in [ImageSet::Test, ImageSet::Train] {
            let images = self.images(set)?;
            if images.features().dim() != bank.dim() {
                return Err(Error::DimMismatch {
                    context: "image dim vs sentence dim",
                    expected: bank.dim(),
                    found: images.features().dim(),
                });
            }
        }
        Ok(())
    }
}

/// Assembles the sentence bank in manifest class order.
pub fn load_bank(manifest: &DatasetManifest, root: &Path) -> Result<SentenceBank> {
    let mut blocks = Vec::with_capacity(manifest.class_names.len());
    for name in &manifest.class_names {
        let entry = manifest
            .sentences
            .iter()
            .find(|e| &e.class_name == name)
            .ok_or_else(|| Error::ClassCoverage(format!("no sentence entry for class {name:?}")))?;
        let path = if entry.embeddings.is_absolute() {
            entry.embeddings.clone()
        } else {
            root.join(&entry.embeddings)
        };
        let emb: EmbeddingMatrix = read_emb(&path)?;
        let attributes = entry.attributes.clone().or_else(|| {
            manifest
                .attribute_schema
                .clone()
                .filter(|s| s.len() == entry.texts.len())
        });
        blocks.push(ClassBlock::new(entry.texts.clone(), emb, attributes)?);
    }
    SentenceBank::new(manifest.class_names.clone(), blocks)
}

/// Writes a complete dataset under `dir`: one `.emb` per class, image
/// features and labels, an optional split, and `manifest.json`. Returns the
/// manifest path.
pub fn write_dataset(
    dir: &Path,
    dataset_id: &str,
    bank: &SentenceBank,
    test: &LabeledFeatures,
    train: Option<&LabeledFeatures>,
    split: Option<&SplitManifest>,
) -> Result<PathBuf> {
    if test.class_names() != bank.class_names() {
        return Err(Error::ClassCoverage("image classes differ from sentence classes".into()));
    }
    let mut sentences = Vec::with_capacity(bank.num_classes());
    for (k, (name, block)) in bank.class_names().iter().zip(bank.blocks()).enumerate() {
        let file = PathBuf::from(format!("sentences_{k:04}.emb"));
        write_emb(&dir.join(&file), block.embeddings())?;
        sentences.push(SentenceEntry {
            class_name: name.clone(),
            embeddings: file,
            texts: block.texts().to_vec(),
            attributes: block.attributes().map(<[String]>::to_vec),
        });
    }
    write_emb(&dir.join("test_images.emb"), test.features())?;
    write_json(&dir.join("test_labels.json"), test.labels())?;
    let (train_features, train_labels) = match train {
        Some(t) => {
            if t.class_names() != bank.class_names() {
                return Err(Error::ClassCoverage("train classes differ from sentence classes".into()));
            }
            write_emb(&dir.join("train_images.emb"), t.features())?;
            write_json(&dir.join("train_labels.json"), t.labels())?;
            (Some("train_images.emb".into()), Some("train_labels.json".into()))
        }
        None => (None, None),
    };
    let split = match split {
        Some(s) => {
            s.validate(bank.class_names())?;
            write_json(&dir.join("split.json"), s)?;
            Some("split.json".into())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        dataset_id: dataset_id.to_string(),
        class_names: bank.class_names().to_vec(),
        image_features: "test_images.emb".into(),
        labels: "test_labels.json".into(),
        train_features,
        train_labels,
        sentences,
        attribute_schema: None,
        split,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
