//! Python bindings. Results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pythonize::{depythonize, pythonize};
use serde::Serialize;

use tfperf_core::{archsearch, fusion, hwmodel, mapspace, workload};

fn err(e: tfperf_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    pythonize(py, v).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "ModelConfig", module = "tfperf", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: workload::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[staticmethod]
    #[pyo3(signature = (name, seq_len = None))]
    fn preset(name: &str, seq_len: Option<u64>) -> PyResult<Self> {
        let mut inner = workload::ModelConfig::preset(name).map_err(err)?;
        if let Some(l) = seq_len {
            inner.seq_len = l;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: workload::ModelConfig::from_json(text).map_err(err)? })
    }

    fn with_seq_len(&self, seq_len: u64) -> Self {
        Self { inner: self.inner.clone().with_seq_len(seq_len) }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seq_len(&self) -> u64 {
        self.inner.seq_len
    }

    #[getter]
    fn num_layers(&self) -> u64 {
        self.inner.num_layers
    }

    #[getter]
    fn model_dim(&self) -> u64 {
        self.inner.model_dim
    }

    #[getter]
    fn num_heads(&self) -> u64 {
        self.inner.num_heads
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({:?}, seq_len={})", self.inner.name, self.inner.seq_len)
    }
}

#[pyclass(name = "AcceleratorConfig", module = "tfperf", skip_from_py_object)]
#[derive(Clone)]
struct PyAccelerator {
    inner: hwmodel::AcceleratorConfig,
}

#[pymethods]
impl PyAccelerator {
    #[new]
    #[pyo3(signature = (pe_width = 16, scratchpad_kb = 256, accumulator_kb = 64))]
    fn new(pe_width: u64, scratchpad_kb: u64, accumulator_kb: u64) -> PyResult<Self> {
        let inner = hwmodel::AcceleratorConfig::gemmini(pe_width, scratchpad_kb, accumulator_kb);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self { inner: hwmodel::AcceleratorConfig::preset(name).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: hwmodel::AcceleratorConfig::from_json(text).map_err(err)? })
    }

    #[getter]
    fn pe_width(&self) -> u64 {
        self.inner.pe_width
    }

    #[getter]
    fn scratchpad_bytes(&self) -> u64 {
        self.inner.scratchpad_bytes
    }

    #[getter]
    fn accumulator_bytes(&self) -> u64 {
        self.inner.accumulator_bytes
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "AcceleratorConfig({:?}, pe_width={}, scratchpad_bytes={}, accumulator_bytes={})",
            self.inner.name, self.inner.pe_width, self.inner.scratchpad_bytes, self.inner.accumulator_bytes
        )
    }
}

fn accel_or_default(accel: Option<PyRef<'_, PyAccelerator>>) -> hwmodel::AcceleratorConfig {
    accel.map(|a| a.inner.clone()).unwrap_or_default()
}

/// Ideal FLOPs / MOPs / intensity profile of a model.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, model: PyRef<'_, PyModelConfig>) -> PyResult<Bound<'py, PyAny>> {
    let ops = workload::model_ops(&model.inner, workload::PrecisionModel::Ideal).map_err(err)?;
    to_py(py, &workload::profile(&ops).map_err(err)?)
}

/// Latency per operator category on the accelerator.
#[pyfunction]
#[pyo3(signature = (model, accel = None))]
fn latency_breakdown<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModelConfig>,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let b = hwmodel::latency_breakdown(&model.inner, &accel_or_default(accel)).map_err(err)?;
    let named: std::collections::BTreeMap<&str, f64> = b.iter().map(|(k, v)| (k.label(), *v)).collect();
    to_py(py, &named)
}

#[pyfunction]
#[pyo3(signature = (model, accel = None))]
fn nonideal_profile<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModelConfig>,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &hwmodel::nonideal_profile(&model.inner, &accel_or_default(accel)).map_err(err)?)
}

/// `splits` are (scratchpad_kb, accumulator_kb) pairs.
#[pyfunction]
#[pyo3(signature = (model, total_kb, splits, accel = None))]
fn memory_split_sweep<'py>(
    py: Python<'py>,
    model: PyRef<'_, PyModelConfig>,
    total_kb: u64,
    splits: Vec<(u64, u64)>,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let bytes: Vec<(u64, u64)> = splits.iter().map(|&(s, a)| (s * 1024, a * 1024)).collect();
    let sweep = hwmodel::memory_split_sweep(&model.inner, &accel_or_default(accel), total_kb * 1024, &bytes).map_err(err)?;
    to_py(py, &sweep)
}

fn nest_from(op: &str) -> PyResult<mapspace::LoopNest> {
    mapspace::LoopNest::named(op).map_err(err)
}

/// Summary statistics of `n` random mappings of a named nest.
#[pyfunction]
#[pyo3(signature = (op, n, seed = 0, accel = None))]
fn mapspace_stats<'py>(
    py: Python<'py>,
    op: &str,
    n: usize,
    seed: u64,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let accel = accel_or_default(accel);
    let nest = nest_from(op)?;
    let s = py.detach(|| mapspace::sample_stats(&nest, &accel, n, seed)).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("n_samples", s.n_samples)?;
    d.set_item("min_edp", s.min_edp)?;
    d.set_item("median", s.median)?;
    d.set_item("max_relative_edp", s.max_relative_edp)?;
    d.set_item("frac_within_3x", s.frac_within(3.0))?;
    d.set_item("cdf", s.cdf)?;
    Ok(d.into_any())
}

/// Best mapping of a small matmul by enumeration.
#[pyfunction]
#[pyo3(signature = (m, k, n, accel = None))]
fn exhaustive_best<'py>(
    py: Python<'py>,
    m: u64,
    k: u64,
    n: u64,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let accel = accel_or_default(accel);
    let nest = mapspace::LoopNest::matmul(m, k, n);
    let best = py.detach(|| mapspace::exhaustive_best(&nest, &accel)).map_err(err)?;
    to_py(py, &best)
}

/// Fused versus non-fused evaluation of one encoder pair.
#[pyfunction]
#[pyo3(signature = (pair, model, accel = None))]
fn fusion_eval<'py>(
    py: Python<'py>,
    pair: &str,
    model: PyRef<'_, PyModelConfig>,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = fusion::PairKind::parse(pair).map_err(err)?;
    let p = fusion::FusionPair::from_encoder(kind, &model.inner).map_err(err)?;
    to_py(py, &fusion::eval_pair(&p, &accel_or_default(accel)).map_err(err)?)
}

/// Hardware cost of a candidate given as a dict with N, d, h and d_FFN.
#[pyfunction]
#[pyo3(signature = (candidate, accel = None))]
fn candidate_cost<'py>(
    py: Python<'py>,
    candidate: &Bound<'py, PyAny>,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let c: archsearch::Candidate = depythonize(candidate).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let r = archsearch::candidate_cost(&c, &accel_or_default(accel), &archsearch::CostCache::new()).map_err(err)?;
    to_py(py, &r)
}

/// Runs the evolutionary search over the default space.
#[pyfunction]
#[pyo3(signature = (population = 40, rounds = 40, mutation = 0.2, seed = 0, accel = None))]
fn evolve<'py>(
    py: Python<'py>,
    population: usize,
    rounds: usize,
    mutation: f64,
    seed: u64,
    accel: Option<PyRef<'_, PyAccelerator>>,
) -> PyResult<Bound<'py, PyAny>> {
    let accel = accel_or_default(accel);
    let params = archsearch::EvolveParams { population, rounds, mutation };
    let space = archsearch::SearchSpace::default();
    let r = py.detach(|| archsearch::evolve(&space, &accel, params, seed)).map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn _tfperf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyAccelerator>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(latency_breakdown, m)?)?;
    m.add_function(wrap_pyfunction!(nonideal_profile, m)?)?;
    m.add_function(wrap_pyfunction!(memory_split_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(mapspace_stats, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustive_best, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_eval, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_cost, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add("SCHEMA_VERSION", tfperf_core::report::SCHEMA_VERSION)?;
    let names = [
        "ModelConfig",
        "AcceleratorConfig",
        "analyze",
        "latency_breakdown",
        "nonideal_profile",
        "memory_split_sweep",
        "mapspace_stats",
        "exhaustive_best",
        "fusion_eval",
        "candidate_cost",
        "evolve",
        "SCHEMA_VERSION",
    ];
    m.add("__all__", names.to_vec())?;
    Ok(())
}
