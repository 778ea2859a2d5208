use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use scenconf_core::bounds::{self, BoundSpec, CorrectedDiscard};
use scenconf_core::conformal::{self, QuantileValue, ScoreVector, Significance};
use scenconf_core::engine::{self, EngineError, Family, LinearScenarioProgram, ScenarioSolution, ScoreDistribution};
use scenconf_core::validation::{self, ExperimentFile};

create_exception!(scenconf, InfeasibleProgramError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::InfeasibleProgram => InfeasibleProgramError::new_err(e.to_string()),
        other => value_err(other),
    }
}

#[pyfunction]
fn binomial_tail(m: u64, k: u64, eps: f64) -> PyResult<f64> {
    Ok(bounds::binomial_tail(m, k, eps).map_err(value_err)?.value())
}

#[pyfunction]
fn binomial_head(m: u64, k: u64, eps: f64) -> PyResult<f64> {
    Ok(bounds::binomial_head(m, k, eps).map_err(value_err)?.value())
}

#[pyfunction]
fn beta_cdf(a: u64, b: u64, x: f64) -> PyResult<f64> {
    Ok(bounds::beta_cdf(a, b, x).map_err(value_err)?.value())
}

/// `(r + d) / (m + 1)`.
#[pyfunction]
#[pyo3(signature = (m, r=0, d=1))]
fn expected_violation_bound(m: u64, r: u64, d: u64) -> PyResult<f64> {
    let spec = BoundSpec::new(m, d, r).map_err(value_err)?;
    Ok(bounds::expected_violation_bound(&spec).value())
}

/// Lower bound on `P{V <= eps}` after discarding `r` of `m` samples.
#[pyfunction]
#[pyo3(signature = (m, eps, r=0, d=1))]
fn violation_cdf_bound(m: u64, eps: f64, r: u64, d: u64) -> PyResult<f64> {
    let spec = BoundSpec::new(m, d, r)
        .and_then(|s| s.with_epsilon(eps))
        .map_err(value_err)?;
    Ok(bounds::violation_cdf_bound(&spec).map_err(value_err)?.value())
}

/// `(p, r)`; `r` is `None` when the quantile is the appended infinity.
#[pyfunction]
fn quantile_index(m: u64, delta: f64) -> PyResult<(u64, Option<u64>)> {
    let q = bounds::quantile_index(m, delta).map_err(value_err)?;
    Ok((q.p, q.r()))
}

#[pyfunction]
fn sample_size_vanilla(r: u64, delta: f64) -> PyResult<u64> {
    bounds::sample_size_vanilla(r, delta).map_err(value_err)
}

#[pyfunction]
fn sample_size_ccc(r: u64, eps: f64, delta: f64) -> PyResult<u64> {
    bounds::sample_size_ccc(r, eps, delta).map_err(value_err)
}

/// `(r, delta)` for the calibration-conditional quantile at level `1 - eps`.
#[pyfunction]
fn ccc_delta(m: u64, eps: f64) -> PyResult<(u64, f64)> {
    let c = bounds::ccc_delta(m, eps).map_err(value_err)?;
    Ok((c.r, c.delta.value()))
}

/// Discard count of the concentration-corrected quantile, `None` when the
/// level selects the appended infinity. Raises when no count is valid.
#[pyfunction]
fn corrected_discard_count(m: u64, eps: f64, delta: f64) -> PyResult<Option<u64>> {
    match bounds::corrected_discard_count(m, eps, delta).map_err(value_err)? {
        CorrectedDiscard::Discard { r, .. } => Ok(Some(r)),
        CorrectedDiscard::AppendedInfinity { .. } => Ok(None),
        CorrectedDiscard::Infeasible { level } => Err(PyValueError::new_err(format!(
            "corrected level {level} leaves no valid discard count"
        ))),
    }
}

/// Conformal quantile of `scores` at significance `delta`; `inf` for the
/// appended infinity.
#[pyfunction]
fn conformal_quantile(scores: Vec<f64>, delta: f64) -> PyResult<f64> {
    let scores = ScoreVector::new(scores).map_err(value_err)?;
    let q = conformal::conformal_quantile(&scores, Significance::Real(delta)).map_err(value_err)?;
    Ok(match q.r_p {
        QuantileValue::Finite(v) => v,
        QuantileValue::Infinite => f64::INFINITY,
    })
}

/// `(r_p, discarded_indices)` of the order program with `r` discards.
#[pyfunction]
fn solve_order_program(scores: Vec<f64>, r: usize) -> PyResult<(f64, Vec<usize>)> {
    let scores = ScoreVector::new(scores).map_err(value_err)?;
    let out = engine::solve_order_program(&scores, r).map_err(engine_err)?;
    Ok((out.r_p, out.discarded_indices))
}

#[pyclass(frozen, skip_from_py_object, name = "Solution")]
#[derive(Clone)]
struct PySolution {
    #[pyo3(get)]
    x_star: Vec<f64>,
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    active_indices: Vec<usize>,
    #[pyo3(get)]
    support_indices: Vec<usize>,
    #[pyo3(get)]
    discarded_indices: Vec<usize>,
    #[pyo3(get)]
    degenerate: bool,
}

impl From<ScenarioSolution> for PySolution {
    fn from(s: ScenarioSolution) -> Self {
        Self {
            x_star: s.x_star,
            objective: s.objective,
            active_indices: s.active_indices,
            support_indices: s.support_indices,
            discarded_indices: s.discarded_indices,
            degenerate: s.degenerate,
        }
    }
}

#[pymethods]
impl PySolution {
    fn __repr__(&self) -> String {
        format!(
            "Solution(x_star={:?}, objective={}, support_indices={:?})",
            self.x_star, self.objective, self.support_indices
        )
    }
}

#[pyclass(frozen, name = "ScenarioProgram")]
struct PyProgram {
    inner: LinearScenarioProgram,
}

#[pymethods]
impl PyProgram {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: LinearScenarioProgram::from_json(text).map_err(engine_err)?,
        })
    }

    /// Seeded instance of `order`, `interval_cover` or `random_lp`.
    #[staticmethod]
    #[pyo3(signature = (family, m, seed=0, dimension=3))]
    fn generate(family: &str, m: usize, seed: u64, dimension: usize) -> PyResult<Self> {
        let dist = ScoreDistribution::default();
        let family = match family.replace('-', "_").as_str() {
            "order" => Family::Order { dist },
            "interval_cover" => Family::IntervalCover { dist },
            "random_lp" => Family::RandomLp { dimension },
            other => return Err(PyValueError::new_err(format!("unknown family `{other}`"))),
        };
        family.validate().map_err(engine_err)?;
        if m == 0 {
            return Err(PyValueError::new_err("m must be positive"));
        }
        Ok(Self {
            inner: family.generate(m, seed).program,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension
    }

    #[getter]
    fn sample_count(&self) -> usize {
        self.inner.sample_count()
    }

    fn solve(&self) -> PyResult<PySolution> {
        Ok(engine::solve(&self.inner).map_err(engine_err)?.into())
    }

    fn cascade_discard(&self, r: usize) -> PyResult<PySolution> {
        Ok(engine::cascade_discard(&self.inner, r).map_err(engine_err)?.solution.into())
    }

    /// Support set by the removal test.
    fn support_set(&self) -> PyResult<Vec<usize>> {
        let solution = engine::solve(&self.inner).map_err(engine_err)?;
        engine::support_set(&self.inner, &solution).map_err(engine_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioProgram(dimension={}, samples={})",
            self.inner.dimension,
            self.inner.sample_count()
        )
    }
}

/// Runs a validation experiment from its JSON config; returns
/// `(passed, summary_json)`. Nothing is written to disk.
#[pyfunction]
#[pyo3(signature = (config_json, threads=0))]
fn run_experiment(py: Python<'_>, config_json: &str, threads: usize) -> PyResult<(bool, String)> {
    let file = ExperimentFile::parse(config_json, None).map_err(value_err)?;
    let report = py
        .detach(|| validation::run(&file.config, threads))
        .map_err(value_err)?;
    Ok((report.pass(), report.json_string()))
}

#[pymodule]
fn scenconf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InfeasibleProgramError", m.py().get_type::<InfeasibleProgramError>())?;
    m.add_function(wrap_pyfunction!(binomial_tail, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_head, m)?)?;
    m.add_function(wrap_pyfunction!(beta_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(expected_violation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(violation_cdf_bound, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_index, m)?)?;
    m.add_function(wrap_pyfunction!(sample_size_vanilla, m)?)?;
    m.add_function(wrap_pyfunction!(sample_size_ccc, m)?)?;
    m.add_function(wrap_pyfunction!(ccc_delta, m)?)?;
    m.add_function(wrap_pyfunction!(corrected_discard_count, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(solve_order_program, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyProgram>()?;
    m.add_class::<PySolution>()?;
    Ok(())
}
