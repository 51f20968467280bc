//! Python bindings: `import hmlstm_py`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use hmlstm::baselines::{LearnerKind, LearnerSpec};
use hmlstm::checkpoint;
use hmlstm::corpus::{self, Format, SyntheticSpec};
use hmlstm::embedding::{self, CbowParams};
use hmlstm::model::{check_gradients, ConsistencyMode, GradCheckSpec, HmlstmConfig};
use hmlstm::pipeline::{self, StrategySettings, TrainedModel};
use hmlstm::preprocess::{preprocess_text, PreprocessOptions};
use hmlstm::strategies::{FeatureKind, Strategy};

fn py_err(e: hmlstm::Error) -> PyErr {
    match e.class() {
        "io" => PyIOError::new_err(e.to_string()),
        "argument" | "config" | "data" | "format" => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn options(remove_stopwords: bool) -> PreprocessOptions {
    if remove_stopwords {
        PreprocessOptions::default()
    } else {
        PreprocessOptions::without_stopwords()
    }
}

fn consistency(mode: Option<&str>) -> PyResult<Option<ConsistencyMode>> {
    mode.map(|m| m.parse().map_err(py_err)).transpose()
}

#[pyclass(name = "Taxonomy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTaxonomy(corpus::Taxonomy);

#[pymethods]
impl PyTaxonomy {
    /// The three-category, nine-subcategory news taxonomy.
    #[staticmethod]
    fn undhtc() -> Self {
        PyTaxonomy(corpus::Taxonomy::undhtc())
    }

    fn levels(&self) -> usize {
        self.0.levels()
    }

    fn labels_at_level(&self, level: usize) -> Vec<String> {
        self.0.labels_at_level(level).into_iter().map(str::to_string).collect()
    }

    fn parent(&self, label: &str) -> Option<String> {
        self.0.parent(label).map(str::to_string)
    }

    fn leaf_paths(&self) -> Vec<Vec<String>> {
        self.0.leaf_paths()
    }

    fn is_consistent(&self, path: Vec<String>) -> bool {
        self.0.is_consistent(&path)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(corpus::Dataset);

#[pymethods]
impl PyDataset {
    /// Reads a TSV or JSON-lines file, chosen by extension.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let format = Format::from_path(&path);
        corpus::load_dataset(&path, format, None).map(PyDataset).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (branching = vec![3, 3], docs_per_leaf = 50, noise = 0.05, seed = 42))]
    fn synthetic(branching: Vec<usize>, docs_per_leaf: usize, noise: f64, seed: u64) -> PyResult<Self> {
        let spec = SyntheticSpec {
            branching,
            docs_per_leaf,
            noise_rate: noise,
            ..SyntheticSpec::default()
        };
        corpus::gen_synthetic(&spec, seed).map(PyDataset).map_err(py_err)
    }

    /// Returns `(train, test)`.
    #[pyo3(signature = (test_fraction = 0.2, seed = 42))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = corpus::split(&self.0, test_fraction, seed).map_err(py_err)?;
        Ok((PyDataset(a), PyDataset(b)))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        corpus::save_tsv(&self.0, &path).map_err(py_err)
    }

    fn texts(&self) -> Vec<String> {
        self.0.documents.iter().map(|d| d.text.clone()).collect()
    }

    fn labels(&self) -> Vec<Vec<String>> {
        self.0.documents.iter().map(|d| d.gold.clone()).collect()
    }

    #[getter]
    fn taxonomy(&self) -> PyTaxonomy {
        PyTaxonomy(self.0.taxonomy.clone())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Embeddings", frozen)]
struct PyEmbeddings(Arc<embedding::Embeddings>);

#[pymethods]
impl PyEmbeddings {
    /// CBOW vectors trained on `dataset`.
    #[staticmethod]
    #[pyo3(signature = (dataset, dim = 100, window = 5, min_count = 5, epochs = 5, seed = 42, remove_stopwords = true))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        dataset: &PyDataset,
        dim: usize,
        window: usize,
        min_count: u64,
        epochs: usize,
        seed: u64,
        remove_stopwords: bool,
    ) -> PyResult<Self> {
        let params = CbowParams {
            dim,
            window,
            min_count,
            epochs,
            seed,
            ..CbowParams::default()
        };
        let data = &dataset.0;
        let (emb, _) = py
            .detach(|| pipeline::train_embeddings(data, &options(remove_stopwords), &params))
            .map_err(py_err)?;
        Ok(PyEmbeddings(Arc::new(emb)))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        embedding::Embeddings::load(&path).map(|e| PyEmbeddings(Arc::new(e))).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    fn vector(&self, word: &str) -> Option<Vec<f64>> {
        self.0.vocab.get(word).map(|i| self.0.matrix.row(i).to_vec())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn __len__(&self) -> usize {
        self.0.vocab.len()
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    model: TrainedModel,
    options: PreprocessOptions,
}

#[pymethods]
impl PyModel {
    /// Trains the stacked per-level LSTM model. Returns `(model, history)`.
    #[staticmethod]
    #[pyo3(signature = (dataset, embeddings, epochs = 10, hidden = 128, dense_size = 64, seed = 42, remove_stopwords = true))]
    #[allow(clippy::too_many_arguments)]
    fn train_hmlstm<'py>(
        py: Python<'py>,
        dataset: &PyDataset,
        embeddings: &PyEmbeddings,
        epochs: usize,
        hidden: usize,
        dense_size: usize,
        seed: u64,
        remove_stopwords: bool,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let cfg = HmlstmConfig {
            embedding_dim: embeddings.0.dim(),
            hidden1: hidden,
            hidden2: hidden,
            dense_size,
            epochs,
            seed,
            ..HmlstmConfig::default()
        };
        let options = options(remove_stopwords);
        let (data, emb) = (&dataset.0, embeddings.0.clone());
        let (model, history) = py
            .detach(|| pipeline::train_hmlstm(data, emb, &options, &cfg))
            .map_err(py_err)?;
        let history = to_py(py, &history)?;
        Ok((
            PyModel {
                model: TrainedModel::Hmlstm(model),
                options,
            },
            history,
        ))
    }

    /// Trains a strategy classifier, e.g. `strategy="per-parent", learner="logreg"`.
    #[staticmethod]
    #[pyo3(signature = (dataset, embeddings, strategy = "flat", learner = "logreg", remove_stopwords = true))]
    fn train_strategy(
        py: Python<'_>,
        dataset: &PyDataset,
        embeddings: &PyEmbeddings,
        strategy: &str,
        learner: &str,
        remove_stopwords: bool,
    ) -> PyResult<Self> {
        let strategy: Strategy = strategy.parse().map_err(py_err)?;
        let kind: LearnerKind = learner.parse().map_err(py_err)?;
        let settings = StrategySettings {
            strategy,
            learner: LearnerSpec::new(kind),
            features: FeatureKind::DocVector,
            max_seq_len: 128,
            mask: false,
        };
        let options = options(remove_stopwords);
        let (data, emb) = (&dataset.0, embeddings.0.clone());
        let model = py
            .detach(|| pipeline::train_strategy(data, emb, &options, &settings))
            .map_err(py_err)?;
        Ok(PyModel {
            model: TrainedModel::Strategy(model),
            options,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, options) = checkpoint::load(&path).map_err(py_err)?;
        Ok(PyModel { model, options })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.model, &self.options).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.model.kind_name()
    }

    /// `{"labels": [...], "levels": [[(label, p), ...], ...], "consistent": bool}`.
    #[pyo3(signature = (text, consistency = None))]
    fn predict<'py>(&self, py: Python<'py>, text: &str, consistency: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let mode = self::consistency(consistency)?;
        let p = self.model.predict_text(text, &self.options, mode).map_err(py_err)?;
        to_py(py, &p)
    }

    #[pyo3(signature = (dataset, consistency = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        consistency: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mode = self::consistency(consistency)?;
        let report = py
            .detach(|| self.model.evaluate(&dataset.0, &self.options, mode))
            .map_err(py_err)?;
        to_py(py, &report)
    }
}

/// Tokens of `text` after cleaning and, optionally, stopword removal.
#[pyfunction]
#[pyo3(signature = (text, remove_stopwords = true))]
fn preprocess(text: &str, remove_stopwords: bool) -> Vec<String> {
    preprocess_text(text, &options(remove_stopwords)).into_inner()
}

/// Scores label paths against gold paths.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: Vec<Vec<String>>,
    gold: Vec<Vec<String>>,
    taxonomy: &PyTaxonomy,
) -> PyResult<Bound<'py, PyAny>> {
    let report = hmlstm::eval::evaluate(&predictions, &gold, &taxonomy.0).map_err(py_err)?;
    to_py(py, &report)
}

/// Largest relative error between analytic and numeric gradients.
#[pyfunction]
#[pyo3(signature = (docs = 3, tokens = 8, hidden = 8, seed = 0))]
fn grad_check(py: Python<'_>, docs: usize, tokens: usize, hidden: usize, seed: u64) -> PyResult<f64> {
    let spec = GradCheckSpec {
        docs,
        tokens,
        hidden,
        seed,
        ..GradCheckSpec::default()
    };
    py.detach(|| check_gradients(&spec))
        .map(|r| r.max_rel_error)
        .map_err(py_err)
}

#[pymodule]
fn hmlstm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaxonomy>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
