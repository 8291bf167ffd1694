//! Python bindings for the `derwent` crate.

use std::path::PathBuf;

use derwent::autodiff::{cosine_f64, scaled_sigmoid_f64};
use derwent::config::{parse_config, RunConfig};
use derwent::data::{Datasets, Domain};
use derwent::graph::{BatchGraph, GraphNode};
use derwent::losses::instance_weight as weight_of;
use derwent::trainer::{self, MetricsRow, TrainState};
use derwent::walker::{sample_batch_walks, Direction};
use derwent::{checkpoint, Error};
use ndarray::Array1;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) | Error::Invalid(_) | Error::Data(_) | Error::Dimension { .. } => PyValueError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        e if e.is_numeric() => PyArithmeticError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn direction(name: &str) -> PyResult<Direction> {
    match name {
        "s2t" | "source_to_target" => Ok(Direction::SourceToTarget),
        "t2s" | "target_to_source" => Ok(Direction::TargetToSource),
        other => Err(PyValueError::new_err(format!("unknown direction {other:?}"))),
    }
}

fn overrides(pairs: Option<Vec<(String, String)>>) -> Vec<(String, String)> {
    pairs.unwrap_or_default()
}

/// Run configuration parsed from `key=value` text plus overrides.
#[pyclass(name = "Config", module = "derwent")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = "", overrides = None))]
    fn new(text: &str, overrides: Option<Vec<(String, String)>>) -> PyResult<Self> {
        let pairs = self::overrides(overrides);
        Ok(Self { inner: parse_config(text, None, &pairs).map_err(to_py)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.train.seed
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[getter]
    fn theta(&self) -> usize {
        self.inner.train.theta
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.train.alpha
    }

    /// Generates or loads the configured data.
    fn datasets(&self) -> PyResult<PyDatasets> {
        Ok(PyDatasets { inner: self.inner.datasets().map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, epochs={}, theta={})", self.seed(), self.epochs(), self.theta())
    }
}

#[pyclass(name = "Datasets", module = "derwent", frozen)]
struct PyDatasets {
    inner: Datasets,
}

#[pymethods]
impl PyDatasets {
    #[getter]
    fn d_in(&self) -> usize {
        self.inner.d_in
    }

    /// Instance counts per pool.
    fn sizes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("source", self.inner.source.len())?;
        d.set_item("auxiliary", self.inner.auxiliary.len())?;
        d.set_item("target_train", self.inner.target_train.len())?;
        d.set_item("target_test", self.inner.target_test.len())?;
        Ok(d)
    }

    /// Features and labels of the target test pool.
    fn target_test(&self) -> (Vec<Vec<f64>>, Vec<u8>) {
        let t = &self.inner.target_test;
        (t.iter().map(|i| i.features.clone()).collect(), t.iter().map(|i| i.label.unwrap_or(0)).collect())
    }
}

fn metrics_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("step", r.step)?;
    d.set_item("l1", r.l1)?;
    d.set_item("l2", r.l2)?;
    d.set_item("l3", r.l3)?;
    d.set_item("objective", r.objective)?;
    d.set_item("walks_reached_s2t", r.walks_reached_s2t)?;
    d.set_item("walks_reached_t2s", r.walks_reached_t2s)?;
    d.set_item("target_test_acc", r.target_test_acc)?;
    Ok(d)
}

/// Trained parameters with optimizer state and training history.
#[pyclass(name = "Model", module = "derwent")]
struct PyModel {
    state: TrainState,
    history: Vec<MetricsRow>,
    paths: Vec<derwent::paths::PathRecord>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn epoch(&self) -> usize {
        self.state.epoch
    }

    fn evaluate(&self, data: &PyDatasets) -> PyResult<f64> {
        trainer::evaluate(&self.state.params, &data.inner.target_test).map_err(to_py)
    }

    fn predict_proba(&self, features: Vec<f64>) -> PyResult<f64> {
        self.state.params.predict_proba(&features).map_err(to_py)
    }

    fn embed(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.state.params.embed(&features).map_err(to_py)?.to_vec())
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.history.iter().map(|r| metrics_dict(py, r)).collect()
    }

    /// Walks of the last trained epoch.
    fn paths<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.paths
            .iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("direction", format!("{:?}", p.direction))?;
                d.set_item("instance_ids", p.instance_ids.clone())?;
                d.set_item("domains", p.domains.iter().map(|x| x.tag()).collect::<Vec<_>>())?;
                d.set_item("cosines", p.cosines.clone())?;
                d.set_item("reached", p.reached)?;
                d.set_item("meta", p.meta.clone())?;
                Ok(d)
            })
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.state, &path).map_err(to_py)
    }

    /// Loads parameters from a checkpoint; history and paths are empty.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { state: checkpoint::load(&path).map_err(to_py)?, history: Vec::new(), paths: Vec::new() })
    }
}

/// Trains on `data`; with `model`, continues from its state.
#[pyfunction]
#[pyo3(signature = (config, data, model = None))]
fn train(py: Python<'_>, config: &PyConfig, data: &PyDatasets, model: Option<&PyModel>) -> PyResult<PyModel> {
    let cfg = config.inner.train.clone();
    let start: Option<TrainState> = model.map(|m| m.state.clone());
    let out = py
        .detach(|| match start {
            Some(s) => trainer::train_from(&cfg, &data.inner, s),
            None => trainer::train(&cfg, &data.inner),
        })
        .map_err(to_py)?;
    Ok(PyModel { state: out.state, history: out.history, paths: out.paths })
}

/// Trains the target-only network and returns its report.
#[pyfunction]
fn baseline<'py>(py: Python<'py>, config: &PyConfig, data: &PyDatasets) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.train.clone();
    let report = py.detach(|| trainer::baseline_dnn(&cfg, &data.inner)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("target_test_accuracy", report.accuracy)?;
    d.set_item("target_train_accuracy", report.train_accuracy)?;
    d.set_item("source_used", report.source_used)?;
    d.set_item("auxiliary_used", report.auxiliary_used)?;
    d.set_item("target_used", report.target_used)?;
    Ok(d)
}

/// Similarity graph over one batch of embeddings.
#[pyclass(name = "Graph", module = "derwent", frozen)]
struct PyGraph {
    inner: BatchGraph,
}

#[pymethods]
impl PyGraph {
    /// `domains` holds "source", "auxiliary" or "target" (or S, A, T).
    #[new]
    fn new(domains: Vec<String>, embeddings: Vec<Vec<f64>>, eta1: f64, eta2: f64) -> PyResult<Self> {
        let nodes = domains
            .iter()
            .enumerate()
            .map(|(i, d)| Ok(GraphNode { instance_id: i as u64, domain: d.parse::<Domain>().map_err(to_py)? }))
            .collect::<PyResult<Vec<_>>>()?;
        let emb: Vec<Array1<f64>> = embeddings.into_iter().map(Array1::from).collect();
        Ok(Self { inner: BatchGraph::build(&nodes, &emb, eta1, eta2).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn transition_distribution(&self, node: usize) -> PyResult<Vec<f64>> {
        if node >= self.inner.len() {
            return Err(PyValueError::new_err(format!("node {node} out of range")));
        }
        self.inner.transition_distribution(node).map_err(to_py)
    }

    /// One walk per origin node: `(nodes, reached)` pairs.
    fn sample_walks(&self, direction: &str, theta: usize, seed: u64) -> PyResult<Vec<(Vec<usize>, bool)>> {
        let walks = sample_batch_walks(&self.inner, self::direction(direction)?, theta, seed).map_err(to_py)?;
        Ok(walks.into_iter().map(|w| (w.nodes, w.reached)).collect())
    }
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    cosine_f64(&a, &b).map_err(to_py)
}

#[pyfunction]
fn scaled_sigmoid(x: f64, alpha: f64) -> f64 {
    scaled_sigmoid_f64(x, alpha)
}

/// Classification weight of an instance given its path anchor.
#[pyfunction]
fn instance_weight(x: Vec<f64>, anchor: Vec<f64>, domain: &str, alpha: f64) -> PyResult<f64> {
    weight_of(&x, &anchor, domain.parse().map_err(to_py)?, alpha).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "derwent")]
fn derwent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDatasets>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(instance_weight, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_parse() {
        assert_eq!(direction("s2t").unwrap(), Direction::SourceToTarget);
        assert_eq!(direction("target_to_source").unwrap(), Direction::TargetToSource);
    }

    #[test]
    fn overrides_default_to_empty() {
        assert!(overrides(None).is_empty());
    }
}
