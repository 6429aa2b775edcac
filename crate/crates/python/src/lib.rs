//! Python bindings. Vectors cross the boundary as lists of floats; matrices
//! as lists of columns.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use etfcil_core::data_io::{generate_synthetic, load_manifest, read_any, write_any, SynthSpec};
use etfcil_core::engine::{self, run_stream, AblationFlags, EngineConfig};
use etfcil_core::etf;
use etfcil_core::linalg::{Matrix, Vector, DEFAULT_PINV_TOL};
use etfcil_core::losses;
use etfcil_core::ncmetrics::{nc_report, FeatureSnapshot};
use etfcil_core::{ClassId, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e if e.is_config() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn records(
    labels: Vec<ClassId>,
    features: Vec<Vec<f64>>,
) -> PyResult<(usize, Vec<(ClassId, Vector)>)> {
    if labels.len() != features.len() {
        return Err(PyValueError::new_err(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    let rows = labels
        .into_iter()
        .zip(features)
        .map(|(l, x)| (l, Vector::from(x)))
        .collect();
    Ok((dim, rows))
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    m.columns().into_iter().map(Vector::into_inner).collect()
}

/// Simplex ETF classifier that grows with the class count.
#[pyclass(name = "EtfClassifier", module = "etfcil", skip_from_py_object)]
#[derive(Clone)]
struct PyEtfClassifier {
    inner: etf::EtfClassifier,
}

#[pymethods]
impl PyEtfClassifier {
    #[new]
    #[pyo3(signature = (dim, num_classes, seed = 0))]
    fn new(dim: usize, num_classes: usize, seed: u64) -> PyResult<Self> {
        let inner = etf::EtfClassifier::new(dim, num_classes, seed).map_err(to_py)?;
        Ok(PyEtfClassifier { inner })
    }

    /// Grows to `num_classes` anchors, keeping the current basis columns.
    fn expand(&self, num_classes: usize) -> PyResult<Self> {
        let inner = self.inner.expand(num_classes).map_err(to_py)?;
        Ok(PyEtfClassifier { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    /// Anchors as a list of `num_classes` unit vectors.
    fn anchors(&self) -> Vec<Vec<f64>> {
        columns(self.inner.anchors())
    }

    fn basis(&self) -> Vec<Vec<f64>> {
        columns(self.inner.basis())
    }

    /// Index of the anchor with the highest cosine to `feature`, and all cosines.
    fn predict(&self, feature: Vec<f64>) -> PyResult<(usize, Vec<f64>)> {
        let labels: Vec<ClassId> = (0..self.inner.num_classes() as ClassId).collect();
        let p = engine::predict(&feature, &self.inner, None, &labels).map_err(to_py)?;
        Ok((p.index, p.scores.into_inner()))
    }

    fn __repr__(&self) -> String {
        format!(
            "EtfClassifier(dim={}, num_classes={}, seed={})",
            self.inner.dim(),
            self.inner.num_classes(),
            self.inner.seed()
        )
    }
}

/// NC1, NC2 and optionally NC3 of labeled features, as a dict.
/// `classifier` holds one column per class in ascending class-id order.
#[pyfunction]
#[pyo3(signature = (features, labels, classifier = None, pinv_tol = DEFAULT_PINV_TOL))]
fn nc_metrics<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<ClassId>,
    classifier: Option<Vec<Vec<f64>>>,
    pinv_tol: f64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let (dim, rows) = records(labels, features)?;
    let snap = FeatureSnapshot::new(dim, rows).map_err(to_py)?;
    let w = classifier
        .map(|c| Matrix::from_columns(dim, &c))
        .transpose()
        .map_err(to_py)?;
    let r = nc_report(&snap, w.as_ref(), pinv_tol).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("nc1", r.nc1)?;
    d.set_item("nc2", r.nc2)?;
    d.set_item("nc3", r.nc3)?;
    d.set_item("trace_sigma_w", r.trace_sigma_w)?;
    d.set_item("trace_sigma_b", r.trace_sigma_b)?;
    d.set_item("num_classes", r.num_classes)?;
    Ok(d)
}

#[pyfunction]
fn pap_loss(c: Vec<f64>, index: usize, classifier: &PyEtfClassifier) -> PyResult<f64> {
    losses::pap_loss(&c, index, &classifier.inner).map_err(to_py)
}

#[pyfunction]
fn pap_grad(c: Vec<f64>, index: usize, classifier: &PyEtfClassifier) -> PyResult<Vec<f64>> {
    losses::pap_grad(&c, index, &classifier.inner)
        .map(Vector::into_inner)
        .map_err(to_py)
}

/// Cosine cross-entropy and its gradient with respect to the feature.
#[pyfunction]
#[pyo3(signature = (feature, index, classifier, temperature = 16.0))]
fn ce_loss(
    feature: Vec<f64>,
    index: usize,
    classifier: &PyEtfClassifier,
    temperature: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let r = losses::ce_loss(&feature, index, &classifier.inner, temperature).map_err(to_py)?;
    Ok((r.loss, r.grad.into_inner()))
}

/// Writes a synthetic drift stream into `out_dir` and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, dim = 32, classes = 12, tasks = 4, samples_per_class = 300, sigma = 0.08, theta = 0.1, delta = 0.02, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    out_dir: PathBuf,
    dim: usize,
    classes: usize,
    tasks: usize,
    samples_per_class: usize,
    sigma: f64,
    theta: f64,
    delta: f64,
    seed: u64,
) -> PyResult<PathBuf> {
    let spec = SynthSpec {
        dim,
        classes,
        tasks,
        samples_per_class,
        sigma,
        theta,
        delta,
        seed,
    };
    generate_synthetic(&spec, &out_dir).map_err(to_py)?;
    Ok(out_dir.join("manifest.toml"))
}

/// Runs the stream described by a manifest and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (manifest, seed = 0, epochs = None, dynamic_etf = true, init_align = true, pap = true))]
fn run_manifest(
    manifest: PathBuf,
    seed: u64,
    epochs: Option<usize>,
    dynamic_etf: bool,
    init_align: bool,
    pap: bool,
) -> PyResult<String> {
    let m = load_manifest(&manifest).map_err(to_py)?;
    let mut cfg = EngineConfig::default();
    let mut flags = AblationFlags::default();
    m.config.apply(&mut cfg, &mut flags);
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    flags.dynamic_etf &= dynamic_etf;
    flags.init_align &= init_align;
    flags.pap_loss &= pap;
    let stream = m.load_stream().map_err(to_py)?;
    let report = run_stream(&stream, &cfg, flags, seed).map_err(to_py)?;
    Ok(report.to_json())
}

/// Reads an EMB1 or CSV file; returns `(dim, labels, features)`.
#[pyfunction]
fn read_embeddings(path: PathBuf) -> PyResult<(usize, Vec<ClassId>, Vec<Vec<f64>>)> {
    let file = read_any(&path).map_err(to_py)?;
    let (labels, features) = file
        .records
        .into_iter()
        .map(|(l, x)| (l, x.into_inner()))
        .unzip();
    Ok((file.dim, labels, features))
}

/// Writes EMB1, or CSV when the path ends in `.csv`.
#[pyfunction]
fn write_embeddings(path: PathBuf, labels: Vec<ClassId>, features: Vec<Vec<f64>>) -> PyResult<()> {
    let (dim, rows) = records(labels, features)?;
    write_any(&path, dim, &rows).map_err(to_py)
}

#[pymodule]
fn etfcil(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEtfClassifier>()?;
    m.add_function(wrap_pyfunction!(nc_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(pap_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pap_grad, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(read_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(write_embeddings, m)?)?;
    Ok(())
}
