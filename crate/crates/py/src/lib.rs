//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use datacollab::dataio::{self, FeatureSchema, LabeledDataset};
use datacollab::matrixkit::{self, Matrix, RandomSource};
use datacollab::pipeline::{self, Mode, RunConfig, Seeds};
use datacollab::{audit, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Configuration(_)
        | Error::InvalidInput(_)
        | Error::InvalidShape(_)
        | Error::InvalidRank { .. }
        | Error::Schema(_)
        | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    matrixkit::from_rows(&rows).map_err(to_py)
}

fn rows(a: &Matrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Labeled dataset: features `x` and a binary label per row.
#[pyclass(name = "Dataset", module = "pydatacollab")]
struct PyDataset(LabeledDataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (x, labels, features=None, label="y"))]
    fn new(x: Vec<Vec<f64>>, labels: Vec<bool>, features: Option<Vec<String>>, label: &str) -> PyResult<Self> {
        let x = matrix(x)?;
        let names = features.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let schema = FeatureSchema::new(&refs, label).map_err(to_py)?;
        LabeledDataset::new(x, dataio::binary_labels(&labels), schema)
            .map(Self)
            .map_err(to_py)
    }

    /// Load a CSV described by a schema TOML file.
    #[staticmethod]
    fn from_csv(path: &str, schema: &str) -> PyResult<Self> {
        let schema = FeatureSchema::load(schema).map_err(to_py)?;
        let (data, _) = dataio::load_csv(path, &schema).map_err(to_py)?;
        Ok(Self(data))
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        dataio::write_csv(path, &self.0).map_err(to_py)
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(&self.0.x)
    }

    #[getter]
    fn labels(&self) -> Vec<bool> {
        self.0.positive_labels()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.0.schema.features.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(rows={}, features={})", self.0.len(), self.0.num_features())
    }
}

/// Run settings. Unset seeds draw from entropy.
#[pyclass(name = "RunConfig", module = "pydatacollab")]
struct PyRunConfig(RunConfig);

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (mode="dc_proposed", parties=4, party_size=10, test_size=20, seed=None, r=2000,
                        lambda_collab=1.0, lambda_local=1.0, permute=true, m_tilde=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: &str,
        parties: usize,
        party_size: usize,
        test_size: usize,
        seed: Option<u64>,
        r: usize,
        lambda_collab: f64,
        lambda_local: f64,
        permute: bool,
        m_tilde: Option<usize>,
    ) -> PyResult<Self> {
        Ok(Self(RunConfig {
            mode: mode.parse().map_err(to_py)?,
            party_sizes: vec![party_size; parties],
            test_size,
            seeds: seed.map(Seeds::all).unwrap_or_default(),
            r,
            lambda_collab,
            lambda_local,
            permute,
            m_tilde,
            ..RunConfig::default()
        }))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml_str(text).map(Self).map_err(to_py)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml_string()
    }

    #[getter]
    fn mode(&self) -> String {
        self.0.mode.to_string()
    }

    #[getter]
    fn party_sizes(&self) -> Vec<usize> {
        self.0.party_sizes.clone()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(mode={}, parties={:?})", self.0.mode, self.0.party_sizes)
    }
}

/// Outcome of one trial.
#[pyclass(name = "PredictionResult", module = "pydatacollab", get_all)]
struct PyPredictionResult {
    mode: String,
    auc: Vec<f64>,
    predictions: Vec<Vec<Vec<f64>>>,
}

#[pymethods]
impl PyPredictionResult {
    #[getter]
    fn mean_auc(&self) -> f64 {
        self.auc.iter().sum::<f64>() / self.auc.len().max(1) as f64
    }
}

/// Mean AUC per mode over repeated trials.
#[pyclass(name = "ExperimentReport", module = "pydatacollab")]
struct PyExperimentReport(pipeline::ExperimentReport);

#[pymethods]
impl PyExperimentReport {
    /// `(mode, mean_auc, stderr)` per mode.
    fn summary(&self) -> Vec<(String, f64, f64)> {
        self.0
            .summaries
            .iter()
            .map(|s| (s.mode.to_string(), s.mean_auc, s.stderr))
            .collect()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    fn to_table(&self) -> String {
        self.0.to_table()
    }
}

#[pyfunction]
#[pyo3(signature = (n, seed=None))]
fn synth_hospital(n: usize, seed: Option<u64>) -> PyResult<PyDataset> {
    dataio::synth_hospital(n, &mut RandomSource::from_option(seed))
        .map(PyDataset)
        .map_err(to_py)
}

/// Split, fit and score one trial of `config.mode`.
#[pyfunction]
fn run(py: Python<'_>, config: &PyRunConfig, data: &PyDataset) -> PyResult<PyPredictionResult> {
    let result = py
        .detach(|| pipeline::run(&config.0, &data.0))
        .map_err(to_py)?;
    Ok(PyPredictionResult {
        mode: result.mode.to_string(),
        auc: result.auc,
        predictions: result.predictions.iter().map(rows).collect(),
    })
}

#[pyfunction]
#[pyo3(signature = (config, data, name="dataset", trials=20, modes=None, jobs=1))]
fn experiment(
    py: Python<'_>,
    config: &PyRunConfig,
    data: &PyDataset,
    name: &str,
    trials: usize,
    modes: Option<Vec<String>>,
    jobs: usize,
) -> PyResult<PyExperimentReport> {
    let modes = match modes {
        Some(list) => list.iter().map(|m| m.parse()).collect::<datacollab::Result<Vec<Mode>>>().map_err(to_py)?,
        None => Mode::ALL.to_vec(),
    };
    py.detach(|| pipeline::experiment_with_jobs(&config.0, &data.0, name, trials, &modes, jobs))
        .map(PyExperimentReport)
        .map_err(to_py)
}

/// Area under the ROC curve; ties count one half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    pipeline::auc(&scores, &labels).map_err(to_py)
}

/// Largest |Pearson correlation| between raw features and representation
/// columns, with the full matrix.
#[pyfunction]
fn correlation_audit(x: Vec<Vec<f64>>, rep: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (max, corr) = audit::correlation_audit(&matrix(x)?, &matrix(rep)?).map_err(to_py)?;
    Ok((max, rows(&corr)))
}

/// Key = value audit report for a representation aligned with `x`.
#[pyfunction]
fn audit_aligned(x: Vec<Vec<f64>>, rep: Vec<Vec<f64>>) -> PyResult<String> {
    audit::audit_aligned(&matrix(x)?, &matrix(rep)?)
        .map(|r| r.to_text())
        .map_err(to_py)
}

/// Thin SVD as `(u, singular_values, v)`.
#[pyfunction]
fn svd(a: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let f = matrixkit::svd(&matrix(a)?).map_err(to_py)?;
    Ok((rows(&f.u), f.singular_values, rows(&f.v)))
}

#[pyfunction]
fn pseudo_inverse(a: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    matrixkit::pseudo_inverse(&matrix(a)?).map(|p| rows(&p)).map_err(to_py)
}

/// Ridge weights with the unpenalized intercept as the last row.
#[pyfunction]
fn ridge_fit(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, lam: f64) -> PyResult<Vec<Vec<f64>>> {
    matrixkit::ridge_fit(&matrix(x)?, &matrix(y)?, lam)
        .map(|m| rows(&m.weights))
        .map_err(to_py)
}

#[pymodule]
pub fn pydatacollab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyPredictionResult>()?;
    m.add_class::<PyExperimentReport>()?;
    m.add_function(wrap_pyfunction!(synth_hospital, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_audit, m)?)?;
    m.add_function(wrap_pyfunction!(audit_aligned, m)?)?;
    m.add_function(wrap_pyfunction!(svd, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_fit, m)?)?;
    Ok(())
}
