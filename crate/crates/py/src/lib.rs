//! Python module `vdt_adapter`: sentence banks, prompt-ensemble classifiers,
//! attention-adapter training and the VDT response parser.
//!
//! Matrices cross the boundary as lists of rows. Library errors become
//! `vdt_adapter.VdtError` with the error kind as a message prefix.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;
use vdt_core::adapters::checkpoint::Checkpoint;
use vdt_core::gradcheck::{run_gradcheck, GradCheckConfig};
use vdt_core::io::{write_dataset, ImageSet, LoadedDataset};
use vdt_core::synthetic::{synthetic_task, SyntheticConfig};
use vdt_core::{
    adapted_classifier, attention_forward, l2_normalize, split_base_new, AdapterConfig, ClassBlock,
    ClassifierWeights, EmbeddingMatrix, Error, LabeledFeatures, SelfAttentionParams, TrainConfig, DEFAULT_TAU,
};

create_exception!(vdt_adapter, VdtError, PyException, "Error raised by the vdt core library.");

fn err(e: Error) -> PyErr {
    VdtError::new_err(format!("{}: {e}", e.kind()))
}

type Rows = Vec<Vec<f32>>;

/// Matrix from equally long rows.
pub fn matrix_from_rows(rows: &[Vec<f32>]) -> Result<EmbeddingMatrix, Error> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("matrix has no rows".into()));
    }
    EmbeddingMatrix::from_rows(rows)
}

/// Applies `key=value` overrides (values as JSON) on top of a serializable default.
pub fn apply_overrides<T>(base: &T, overrides: &[(String, serde_json::Value)]) -> Result<T, Error>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    for (key, value) in overrides {
        match v.get_mut(key) {
            Some(slot) => *slot = value.clone(),
            None => return Err(Error::InvalidInput(format!("unknown option {key:?}"))),
        }
    }
    Ok(serde_json::from_value(v)?)
}

fn rows_of<'a>(rows: impl Iterator<Item = &'a [f32]>) -> Rows {
    rows.map(<[f32]>::to_vec).collect()
}

fn labeled(features: &[Vec<f32>], labels: Vec<usize>, names: &[String]) -> PyResult<LabeledFeatures> {
    LabeledFeatures::new(matrix_from_rows(features).map_err(err)?, labels, names.to_vec()).map_err(err)
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn kwargs_json(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, serde_json::Value)>> {
    let Some(kwargs) = kwargs else { return Ok(Vec::new()) };
    let dumps = py.import("json")?.getattr("dumps")?;
    kwargs
        .iter()
        .map(|(k, v)| {
            let text: String = dumps.call1((v,))?.extract()?;
            let value = serde_json::from_str(&text).map_err(|e| err(e.into()))?;
            Ok((k.extract()?, value))
        })
        .collect()
}

/// Per-class sentence embeddings, in insertion order.
#[pyclass(name = "SentenceBank", module = "vdt_adapter", from_py_object)]
#[derive(Clone)]
struct PySentenceBank {
    inner: vdt_core::SentenceBank,
}

impl PySentenceBank {
    fn index(&self, class_name: &str) -> PyResult<usize> {
        self.inner
            .class_names()
            .iter()
            .position(|c| c == class_name)
            .ok_or_else(|| VdtError::new_err(format!("unknown class {class_name:?}")))
    }
}

#[pymethods]
impl PySentenceBank {
    /// `classes` maps class name to embedding rows; `texts` optionally maps
    /// class name to the matching sentences.
    #[new]
    #[pyo3(signature = (classes, texts = None))]
    fn new(classes: &Bound<'_, PyDict>, texts: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut names = Vec::with_capacity(classes.len());
        let mut blocks = Vec::with_capacity(classes.len());
        for (name, rows) in classes.iter() {
            let name: String = name.extract()?;
            let rows: Rows = rows.extract()?;
            let t: Vec<String> = match texts.map(|t| t.get_item(&name)).transpose()?.flatten() {
                Some(t) => t.extract()?,
                None => (0..rows.len()).map(|i| format!("{name} {i}")).collect(),
            };
            let block = ClassBlock::new(t, matrix_from_rows(&rows).map_err(err)?, None).map_err(err)?;
            blocks.push(block);
            names.push(name);
        }
        let inner = vdt_core::SentenceBank::new(names, blocks).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.num_classes()
    }

    fn sentences(&self, class_name: &str) -> PyResult<Rows> {
        let k = self.index(class_name)?;
        Ok(rows_of(self.inner.block(k).embeddings().iter_rows()))
    }

    fn texts(&self, class_name: &str) -> PyResult<Vec<String>> {
        let k = self.index(class_name)?;
        Ok(self.inner.block(k).texts().to_vec())
    }

    fn subset(&self, names: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.subset(&names).map_err(err)?,
        })
    }
}

/// Residual self-attention adapter parameters with their residual ratio.
#[pyclass(name = "Adapter", module = "vdt_adapter", from_py_object)]
#[derive(Clone)]
struct PyAdapter {
    params: SelfAttentionParams,
    #[pyo3(get, set)]
    beta: f64,
}

#[pymethods]
impl PyAdapter {
    #[new]
    #[pyo3(signature = (dim, heads = 1, seed = 0, init_scale = 1.0, beta = 0.5))]
    fn new(dim: usize, heads: usize, seed: u64, init_scale: f64, beta: f64) -> PyResult<Self> {
        let cfg = AdapterConfig {
            heads,
            seed,
            init_scale,
            beta,
            ..Default::default()
        };
        cfg.validate().map_err(err)?;
        Ok(Self {
            params: SelfAttentionParams::init(dim, &cfg).map_err(err)?,
            beta,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, beta) = Checkpoint::load(&path)
            .and_then(Checkpoint::into_attention)
            .map_err(err)?;
        Ok(Self { params, beta })
    }

    #[pyo3(signature = (path, seed = 0))]
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        Checkpoint::attention(self.params.clone(), seed, self.beta)
            .save(&path)
            .map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.params.dim
    }

    #[getter]
    fn heads(&self) -> usize {
        self.params.heads
    }

    /// Unit prototypes for every class of `bank`; `beta` defaults to the adapter's.
    #[pyo3(signature = (bank, beta = None))]
    fn prototypes(&self, bank: &PySentenceBank, beta: Option<f64>) -> PyResult<Rows> {
        let w = adapted_classifier(&self.params, &bank.inner, beta.unwrap_or(self.beta)).map_err(err)?;
        Ok(rows_of(w.iter_rows()))
    }

    /// Head-averaged `M x M` attention map over one class's normalized sentences.
    fn attention(&self, bank: &PySentenceBank, class_name: &str) -> PyResult<Vec<Vec<f64>>> {
        let k = bank.index(class_name)?;
        let x = l2_normalize(bank.inner.block(k).embeddings()).map_err(err)?;
        let (_, maps) = attention_forward(&self.params, &x).map_err(err)?;
        Ok(maps.mean().chunks(maps.len).map(<[f64]>::to_vec).collect())
    }

    /// Base/new accuracies and their harmonic mean as a dict.
    #[pyo3(signature = (bank_base, bank_new, base_features, base_labels, new_features, new_labels, tau = DEFAULT_TAU))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate_base_to_new(
        &self,
        py: Python<'_>,
        bank_base: &PySentenceBank,
        bank_new: &PySentenceBank,
        base_features: Rows,
        base_labels: Vec<usize>,
        new_features: Rows,
        new_labels: Vec<usize>,
        tau: f64,
    ) -> PyResult<Py<PyAny>> {
        let tb = labeled(&base_features, base_labels, bank_base.inner.class_names())?;
        let tn = labeled(&new_features, new_labels, bank_new.inner.class_names())?;
        let r = vdt_core::evaluate_base_to_new(&self.params, self.beta, &bank_base.inner, &bank_new.inner, &tb, &tn, tau)
            .map_err(err)?;
        to_py(py, &r)
    }
}

#[pyfunction]
fn mean_prototype(bank: &PySentenceBank) -> PyResult<Rows> {
    Ok(rows_of(vdt_core::mean_prototype(&bank.inner).map_err(err)?.iter_rows()))
}

/// Top-1 accuracy of cosine classification against the given prototypes.
#[pyfunction]
#[pyo3(signature = (features, labels, prototypes, tau = DEFAULT_TAU))]
fn zero_shot_accuracy(features: Rows, labels: Vec<usize>, prototypes: Rows, tau: f64) -> PyResult<f64> {
    let protos = matrix_from_rows(&prototypes).map_err(err)?;
    let names: Vec<String> = (0..protos.rows()).map(|i| i.to_string()).collect();
    let data = labeled(&features, labels, &names)?;
    let w = ClassifierWeights::new(protos.rows(), protos.dim(), protos.into_values(), false).map_err(err)?;
    vdt_core::zero_shot_eval(&data, &w, tau).map_err(err)
}

/// Top-1 accuracy of the per-sentence score ensemble.
#[pyfunction]
#[pyo3(signature = (features, labels, bank, tau = DEFAULT_TAU))]
fn score_ensemble_accuracy(features: Rows, labels: Vec<usize>, bank: &PySentenceBank, tau: f64) -> PyResult<f64> {
    let data = labeled(&features, labels, bank.inner.class_names())?;
    vdt_core::score_ensemble_eval(&data, &bank.inner, tau).map_err(err)
}

/// Trains an adapter on labelled image features. Keyword arguments override
/// training options (`epochs`, `learning_rate`, `beta`, `seed`, `heads`, ...).
/// Returns the adapter and a report dict.
#[pyfunction]
#[pyo3(signature = (bank, features, labels, **options))]
fn train_adapter(
    py: Python<'_>,
    bank: &PySentenceBank,
    features: Rows,
    labels: Vec<usize>,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<(PyAdapter, Py<PyAny>)> {
    let cfg: TrainConfig = apply_overrides(&TrainConfig::default(), &kwargs_json(py, options)?).map_err(err)?;
    let data = labeled(&features, labels, bank.inner.class_names())?;
    let inner = &bank.inner;
    let (params, report) = py
        .detach(|| vdt_core::train_adapter(&cfg, &data, inner))
        .map_err(err)?;
    let beta = report.final_beta;
    Ok((PyAdapter { params, beta }, to_py(py, &report)?))
}

#[pyfunction]
fn harmonic_mean(base: f64, new: f64) -> PyResult<f64> {
    vdt_core::harmonic_mean(base, new).map_err(err)
}

/// Parses an LLM answer into `{class: [sentences]}`.
#[pyfunction]
fn parse_vdt_response(text: &str) -> PyResult<Vec<(String, Vec<String>)>> {
    let map = vdt_core::vdt::parse_vdt_response(text).map_err(|e| err(e.into()))?;
    Ok(map.into_iter().collect())
}

/// Checks the adapter gradients against central finite differences.
#[pyfunction]
#[pyo3(signature = (seed = 0, **options))]
fn gradcheck(py: Python<'_>, seed: u64, options: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let base = GradCheckConfig {
        seed,
        ..Default::default()
    };
    let cfg = apply_overrides(&base, &kwargs_json(py, options)?).map_err(err)?;
    let report = py.detach(|| run_gradcheck(&cfg)).map_err(err)?;
    to_py(py, &report)
}

/// Writes a synthetic dataset with a base/new split into `directory`;
/// returns the manifest path.
#[pyfunction]
#[pyo3(signature = (directory, seed = 0, **options))]
fn synthetic_dataset(
    py: Python<'_>,
    directory: PathBuf,
    seed: u64,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<PathBuf> {
    let base = SyntheticConfig {
        seed,
        ..Default::default()
    };
    let cfg = apply_overrides(&base, &kwargs_json(py, options)?).map_err(err)?;
    let task = synthetic_task(&cfg).map_err(err)?;
    let split = split_base_new(task.bank.class_names(), "synthetic", seed).map_err(err)?;
    write_dataset(&directory, "synthetic", &task.bank, &task.test, Some(&task.train), Some(&split)).map_err(err)
}

/// Loads a dataset manifest as a dict with `bank`, `train`, `test` and `split`.
/// Image sets are `(features, labels)` pairs.
#[pyfunction]
fn load_dataset(py: Python<'_>, manifest: PathBuf) -> PyResult<Py<PyDict>> {
    let ds = LoadedDataset::open(&manifest).map_err(err)?;
    ds.validate().map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("dataset_id", &ds.manifest.dataset_id)?;
    out.set_item(
        "bank",
        PySentenceBank {
            inner: ds.bank().map_err(err)?,
        },
    )?;
    for (key, set) in [("train", ImageSet::Train), ("test", ImageSet::Test)] {
        let data = ds.images(set).map_err(err)?;
        out.set_item(key, (rows_of(data.features().iter_rows()), data.labels().to_vec()))?;
    }
    match ds.split().map_err(err)? {
        Some(split) => out.set_item("split", to_py(py, &split)?)?,
        None => out.set_item("split", py.None())?,
    }
    Ok(out.unbind())
}

#[pymodule]
fn vdt_adapter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VdtError", m.py().get_type::<VdtError>())?;
    m.add("DEFAULT_TAU", DEFAULT_TAU)?;
    m.add_class::<PySentenceBank>()?;
    m.add_class::<PyAdapter>()?;
    m.add_function(wrap_pyfunction!(mean_prototype, m)?)?;
    m.add_function(wrap_pyfunction!(zero_shot_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(score_ensemble_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(train_adapter, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(parse_vdt_response, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    Ok(())
}
