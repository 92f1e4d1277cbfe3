//! Python module `selcdf`: models, designs and limit c.d.f.s as classes, the
//! estimators and experiment runs as functions. Structured results come back
//! as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use selcdf_core::conditions;
use selcdf_core::designs::{DesignSpec, IndicatorVector};
use selcdf_core::ecdf::{self, StepCdf};
use selcdf_core::harness::{self, ExperimentConfig, Mode};
use selcdf_core::superpop::{Population, SuperpopModel};
use selcdf_core::{weights, Error};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::EnumerationInfeasible { .. } | Error::NoLimit(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn population(ys: Vec<f64>) -> PyResult<Population> {
    Population::new(ys).map_err(to_py_err)
}

/// Superpopulation law of the responses.
#[pyclass(name = "SuperpopModel", module = "selcdf", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: SuperpopModel,
}

#[pymethods]
impl PyModel {
    /// Parses `{"kind": "uniform", "a": 0.5, "b": 1.5}` and the like.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn uniform(a: f64, b: f64) -> PyResult<Self> {
        Ok(PyModel { inner: SuperpopModel::uniform(a, b).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn truncated_exponential(rate: f64, a: f64, b: f64) -> PyResult<Self> {
        Ok(PyModel { inner: SuperpopModel::truncated_exponential(rate, a, b).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn piecewise_linear(knots: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(PyModel { inner: SuperpopModel::piecewise_linear(knots).map_err(to_py_err)? })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).unwrap()
    }

    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }

    fn density(&self, y: f64) -> f64 {
        self.inner.density(y)
    }

    fn cdf(&self, alpha: f64) -> f64 {
        self.inner.cdf(alpha)
    }

    fn quantile(&self, u: f64) -> f64 {
        self.inner.quantile(u)
    }

    fn moment(&self, k: u32) -> PyResult<f64> {
        self.inner.moment(k).map_err(to_py_err)
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn draw_population(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        Ok(self.inner.draw_population(n, seed).map_err(to_py_err)?.into_responses())
    }

    fn __repr__(&self) -> String {
        format!("SuperpopModel({})", self.to_json())
    }
}

/// A selection mechanism.
#[pyclass(name = "Design", module = "selcdf", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDesign {
    inner: DesignSpec,
}

#[pymethods]
impl PyDesign {
    /// Parses `{"variant": "length_biased", "tau": 0.5}` and the like.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: DesignSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py_err)?;
        Ok(PyDesign { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).unwrap()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    /// Selection counts for one draw of the design on `population`.
    fn sample(&self, population_: Vec<f64>, seed: u64) -> PyResult<Vec<u32>> {
        let pop = population(population_)?;
        Ok(self.inner.sample(&pop, seed).map_err(to_py_err)?.counts().to_vec())
    }

    fn expected_sample_size(&self, population_: Vec<f64>) -> PyResult<f64> {
        self.inner.expected_sample_size(&population(population_)?).map_err(to_py_err)
    }

    /// Exact law as `(counts, probability)` pairs.
    fn enumerate(&self, population_: Vec<f64>) -> PyResult<Vec<(Vec<u32>, f64)>> {
        let support = self.inner.enumerate_support(&population(population_)?).map_err(to_py_err)?;
        Ok(support.into_iter().map(|(iv, p)| (iv.counts().to_vec(), p)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Design({})", self.to_json())
    }
}

/// Weighted limit c.d.f. `F_s`.
#[pyclass(name = "LimitCdf", module = "selcdf", frozen, skip_from_py_object)]
struct PyLimit {
    inner: weights::LimitCdf,
}

#[pymethods]
impl PyLimit {
    /// The limit induced by a design; raises for designs without one.
    #[staticmethod]
    fn for_design(design: &PyDesign, model: &PyModel) -> PyResult<Self> {
        let w = weights::builtin_weight(&design.inner, &model.inner).map_err(to_py_err)?;
        Ok(PyLimit { inner: weights::LimitCdf::new(w, &model.inner).map_err(to_py_err)? })
    }

    /// `F_s = F`.
    #[staticmethod]
    fn unweighted(model: &PyModel) -> Self {
        PyLimit { inner: weights::LimitCdf::unweighted(&model.inner) }
    }

    fn eval(&self, alpha: f64) -> f64 {
        self.inner.eval(alpha)
    }

    fn unnormalized(&self, alpha: f64) -> f64 {
        self.inner.unnormalized(alpha)
    }

    #[getter]
    fn normalizer(&self) -> f64 {
        self.inner.normalizer()
    }

    fn quantile(&self, p: f64) -> PyResult<f64> {
        ecdf::limit_quantile(&self.inner, p).map_err(to_py_err)
    }
}

fn step(population_: Vec<f64>, counts: Vec<u32>) -> PyResult<StepCdf> {
    let pop = population(population_)?;
    ecdf::empirical_cdf(&pop, &IndicatorVector::new(counts)).map_err(to_py_err)
}

/// Jump points and values of the selected ecdf.
#[pyfunction]
fn empirical_cdf(population: Vec<f64>, counts: Vec<u32>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = step(population, counts)?;
    Ok((s.jumps().to_vec(), s.values().to_vec()))
}

/// Exact `sup |F_N - F_s|` of the selected ecdf.
#[pyfunction]
fn sup_distance(population: Vec<f64>, counts: Vec<u32>, limit: &PyLimit) -> PyResult<f64> {
    Ok(step(population, counts)?.sup_distance(&limit.inner))
}

#[pyfunction]
#[pyo3(signature = (population, counts, limit, interval = (0.1, 0.9), grid = 512))]
fn quantile_sup_distance(
    population: Vec<f64>,
    counts: Vec<u32>,
    limit: &PyLimit,
    interval: (f64, f64),
    grid: usize,
) -> PyResult<f64> {
    ecdf::quantile_sup_distance(&step(population, counts)?, &limit.inner, interval, grid).map_err(to_py_err)
}

/// `m_N(y)` in closed form, or `None` when no closed form exists.
#[pyfunction]
fn m_theoretical(design: &PyDesign, model: &PyModel, y: f64, n: usize) -> Option<f64> {
    weights::m_theoretical(&design.inner, &model.inner, y, n).value()
}

#[pyfunction]
fn m_monte_carlo<'py>(
    py: Python<'py>,
    design: &PyDesign,
    model: &PyModel,
    y: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let e = weights::m_monte_carlo(&design.inner, &model.inner, y, n, reps, seed).map_err(to_py_err)?;
    to_py(py, &e)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn pairwise_monte_carlo<'py>(
    py: Python<'py>,
    design: &PyDesign,
    model: &PyModel,
    y1: f64,
    y2: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let e = weights::pairwise_monte_carlo(&design.inner, &model.inner, y1, y2, n, reps, seed).map_err(to_py_err)?;
    to_py(py, &e)
}

#[pyfunction]
fn empty_sample_bound(expected_n: f64, var_n: f64) -> PyResult<f64> {
    conditions::empty_sample_bound(expected_n, var_n).map_err(to_py_err)
}

#[pyfunction]
fn srswor_cov_identity(big_n: usize, n: usize) -> PyResult<(f64, f64)> {
    conditions::srswor_cov_identity(big_n, n).map_err(to_py_err)
}

/// Runs an experiment config (JSON text) in memory and returns its report.
/// `couple` and `enumerate` return their summaries.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = ExperimentConfig::from_json(config).map_err(to_py_err)?;
    let run = || -> selcdf_core::Result<String> {
        let text = match config.mode {
            Mode::Converge => serde_json::to_string(&harness::run_convergence(&config)?),
            Mode::Audit => serde_json::to_string(&harness::run_audit(&config)?),
            Mode::Couple => serde_json::to_string(&harness::run_couple(&config)?.1),
            Mode::Enumerate => serde_json::to_string(&harness::run_enumerate(&config)?.1),
        };
        text.map_err(|e| Error::Io(e.to_string()))
    };
    let text = py
        .detach(|| harness::with_threads(config.threads, run))
        .map_err(to_py_err)?
        .map_err(to_py_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn selcdf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyLimit>()?;
    m.add_function(wrap_pyfunction!(empirical_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(sup_distance, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_sup_distance, m)?)?;
    m.add_function(wrap_pyfunction!(m_theoretical, m)?)?;
    m.add_function(wrap_pyfunction!(m_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(empty_sample_bound, m)?)?;
    m.add_function(wrap_pyfunction!(srswor_cov_identity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    #[test]
    fn module_roundtrip() {
        Python::attach(|py| {
            let m = PyModule::new(py, "selcdf").unwrap();
            selcdf(&m).unwrap();
            let model = PyModel::uniform(0.5, 1.5).unwrap();
            let design = PyDesign::from_json(r#"{"variant": "length_biased", "tau": 0.5}"#).unwrap();
            let limit = PyLimit::for_design(&design, &model).unwrap();
            assert!((limit.eval(1.0) - 0.375).abs() < 1e-12);
            let e = m_monte_carlo(py, &design, &model, 1.2, 200, 2000, 1).unwrap();
            let d = e.cast::<PyDict>().unwrap();
            let m_hat: f64 = d.get_item("m_hat").unwrap().unwrap().extract().unwrap();
            assert!((m_hat - 0.6).abs() < 0.05);
            assert!(d.get_item("c_hat").unwrap().unwrap().is_none());
            let pop = model.draw_population(100, 2).unwrap();
            let counts = design.sample(pop.clone(), 3).unwrap();
            assert!(sup_distance(pop, counts, &limit).unwrap() <= 1.0);
        });
    }

    #[test]
    fn errors_map_to_python_exceptions() {
        Python::attach(|py| {
            let err = PyModel::uniform(1.0, 0.0).err().unwrap();
            assert!(err.is_instance_of::<PyValueError>(py));
            let cluster = PyDesign::from_json(r#"{"variant": "cluster_split", "tau": 1.0}"#).unwrap();
            let model = PyModel::uniform(0.0, 1.0).unwrap();
            let err = PyLimit::for_design(&cluster, &model).err().unwrap();
            assert!(err.is_instance_of::<PyRuntimeError>(py));
        });
    }

    #[test]
    fn run_experiment_returns_report() {
        Python::attach(|py| {
            let cfg = r#"{"model": {"kind": "uniform", "a": 0.5, "b": 1.5},
                "design": {"variant": "length_biased", "tau": 0.5},
                "n_grid": [100, 200], "replicates": 5, "seed": 1}"#;
            let r = run_experiment(py, cfg).unwrap();
            let rows = r.get_item("rows").unwrap();
            assert_eq!(rows.len().unwrap(), 10);
        });
    }
}
