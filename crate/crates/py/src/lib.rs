//! Python bindings: `rmdp.Instance` wraps a loaded robust MDP and exposes the
//! Bellman operators, the classical solvers, the two convex programs and the
//! curvature probes. Vectors cross the boundary as lists of floats.

use pyo3::exceptions::{PyOverflowError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rmdp_core::convex::{solve_convex_program, PenaltyOptions};
use rmdp_core::curvature::{classify_curvature as classify, probe_operator, ProbeOperator, ProbeSample};
use rmdp_core::instance::{bundled, bundled_names as names, load_instance, parse_instance};
use rmdp_core::numerics;
use rmdp_core::polyhedral::{solve_concise_program, PolyhedralRmdp};
use rmdp_core::regularized::{self, RegularizationConfig};
use rmdp_core::{RmdpError, SolveReport};

fn to_py(err: RmdpError) -> PyErr {
    match err {
        RmdpError::OverflowRisk { .. } => PyOverflowError::new_err(err.to_string()),
        e if e.is_convergence_failure() => PyRuntimeError::new_err(e.to_string()),
        e if e.is_input_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Outcome of one solver run.
#[pyclass(frozen, get_all)]
struct SolveResult {
    method: String,
    status: String,
    value: Vec<f64>,
    objective: f64,
    iterations: usize,
    residual: f64,
    wall_time_s: f64,
    /// Solution of the transformed program, `exp(b v)`, when applicable.
    x: Option<Vec<f64>>,
}

impl SolveResult {
    fn from_report(report: SolveReport, x: Option<Vec<f64>>) -> Self {
        SolveResult {
            method: report.method,
            status: format!("{:?}", report.status).to_lowercase(),
            value: report.value,
            objective: report.objective,
            iterations: report.iterations,
            residual: report.residual,
            wall_time_s: report.wall_time_s,
            x,
        }
    }
}

#[pymethods]
impl SolveResult {
    fn __repr__(&self) -> String {
        format!("SolveResult(method={:?}, status={:?}, value={:?})", self.method, self.status, self.value)
    }
}

#[pyclass(frozen)]
struct Instance {
    inner: rmdp_core::instance::Instance,
}

impl Instance {
    fn config(&self, b: f64) -> PyResult<RegularizationConfig> {
        let rmdp = &self.inner.rmdp;
        RegularizationConfig::uniform(rmdp.n_states(), rmdp.n_actions(), b).map_err(to_py)
    }
}

#[pymethods]
impl Instance {
    /// One of the instances shipped with the library, see `bundled_names()`.
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        Ok(Instance { inner: bundled(name).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Instance { inner: load_instance(path).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Instance { inner: parse_instance(text).map_err(to_py)? })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.rmdp.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.rmdp.n_actions()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.rmdp.base.discount
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.rmdp.base.initial.clone()
    }

    fn bellman(&self, v: Vec<f64>) -> Vec<f64> {
        self.inner.rmdp.base.bellman(&v)
    }

    fn robust_bellman(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.rmdp.robust_bellman(&v).map_err(to_py)
    }

    fn regularized_bellman(&self, v: Vec<f64>, b: f64) -> PyResult<Vec<f64>> {
        regularized::regularized_bellman(&self.inner.rmdp, &self.config(b)?, &v).map_err(to_py)
    }

    fn t_tilde(&self, x: Vec<f64>, b: f64) -> PyResult<Vec<f64>> {
        regularized::t_tilde(&self.inner.rmdp, &self.config(b)?, &x).map_err(to_py)
    }

    #[pyo3(signature = (tol=1e-10))]
    fn value_iteration(&self, tol: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.rmdp.base.value_iteration(None, tol).map_err(to_py)?.value)
    }

    #[pyo3(signature = (tol=1e-10))]
    fn robust_value_iteration(&self, tol: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.rmdp.robust_value_iteration(tol).map_err(to_py)?.value)
    }

    /// Returns `(actions, value)` with one action index per state.
    #[pyo3(signature = (tol=1e-10))]
    fn robust_policy_iteration(&self, tol: f64) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let (policy, fp) = self.inner.rmdp.robust_policy_iteration(tol).map_err(to_py)?;
        Ok((policy.actions(), fp.value))
    }

    #[pyo3(signature = (b, tol=1e-10))]
    fn regularized_fixed_point(&self, b: f64, tol: f64) -> PyResult<Vec<f64>> {
        let fp = regularized::regularized_fixed_point(&self.inner.rmdp, &self.config(b)?, tol).map_err(to_py)?;
        Ok(fp.value)
    }

    fn solve_convex(&self, py: Python<'_>, b: f64) -> PyResult<SolveResult> {
        let cfg = self.config(b)?;
        let rmdp = &self.inner.rmdp;
        let (x, report) = py
            .detach(|| solve_convex_program(rmdp, &cfg, &PenaltyOptions::default()))
            .map_err(to_py)?;
        Ok(SolveResult::from_report(report, Some(x)))
    }

    fn solve_concise(&self, py: Python<'_>, b: f64) -> PyResult<SolveResult> {
        let cfg = self.config(b)?;
        let prmdp = PolyhedralRmdp::from_rmdp(&self.inner.rmdp).map_err(to_py)?;
        let (x, _, report) = py
            .detach(|| solve_concise_program(&prmdp, &cfg, &PenaltyOptions::default()))
            .map_err(to_py)?;
        Ok(SolveResult::from_report(report, Some(x)))
    }

    /// Samples component `state` of an operator on the segment from `v1` to
    /// `v2` (value space). Returns `(thetas, values, verdict)`.
    #[pyo3(signature = (operator, state, v1, v2, samples=201, b=1.0, b_phi=1.0, tol=1e-7))]
    #[allow(clippy::too_many_arguments)]
    fn probe(
        &self,
        operator: &str,
        state: usize,
        v1: Vec<f64>,
        v2: Vec<f64>,
        samples: usize,
        b: f64,
        b_phi: f64,
        tol: f64,
    ) -> PyResult<(Vec<f64>, Vec<f64>, String)> {
        let op = ProbeOperator::from_name(operator, b, b_phi).map_err(to_py)?;
        let x1 = op.transform_point(&v1).map_err(to_py)?;
        let x2 = op.transform_point(&v2).map_err(to_py)?;
        let points = probe_operator(&self.inner.rmdp, &op, state, &x1, &x2, samples).map_err(to_py)?;
        let verdict = classify(&points, tol).map_err(to_py)?.verdict.as_str().to_string();
        Ok((points.iter().map(|p| p.theta).collect(), points.iter().map(|p| p.value).collect(), verdict))
    }

    fn __repr__(&self) -> String {
        format!("Instance(n_states={}, n_actions={})", self.n_states(), self.n_actions())
    }
}

#[pyfunction]
fn bundled_names() -> Vec<&'static str> {
    names()
}

/// Regularization strength that keeps the value gap below `epsilon`.
#[pyfunction]
fn choose_b(epsilon: f64, discount: f64, n_actions: usize) -> PyResult<f64> {
    regularized::choose_b(epsilon, discount, n_actions).map_err(to_py)
}

#[pyfunction]
fn exp_b(v: Vec<f64>, b: f64) -> PyResult<Vec<f64>> {
    regularized::exp_b(&v, b).map_err(to_py)
}

#[pyfunction]
fn log_b(x: Vec<f64>, b: f64) -> PyResult<Vec<f64>> {
    regularized::log_b(&x, b).map_err(to_py)
}

#[pyfunction]
fn scaled_log_sum_exp(weights: Vec<f64>, y: Vec<f64>, b: f64) -> PyResult<f64> {
    numerics::scaled_log_sum_exp(&weights, &y, b).map_err(to_py)
}

#[pyfunction]
fn softmax_weights(weights: Vec<f64>, y: Vec<f64>, b: f64) -> PyResult<Vec<f64>> {
    numerics::softmax_weights(&weights, &y, b).map_err(to_py)
}

/// `"convex"`, `"concave"`, `"affine"` or `"neither"`.
#[pyfunction]
#[pyo3(signature = (thetas, values, tol=1e-7))]
fn classify_curvature(thetas: Vec<f64>, values: Vec<f64>, tol: f64) -> PyResult<String> {
    if thetas.len() != values.len() {
        return Err(PyValueError::new_err("thetas and values differ in length"));
    }
    let samples: Vec<ProbeSample> = thetas.into_iter().zip(values).map(|(theta, value)| ProbeSample { theta, value }).collect();
    Ok(classify(&samples, tol).map_err(to_py)?.verdict.as_str().to_string())
}

#[pymodule]
fn rmdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Instance>()?;
    m.add_class::<SolveResult>()?;
    m.add_function(wrap_pyfunction!(bundled_names, m)?)?;
    m.add_function(wrap_pyfunction!(choose_b, m)?)?;
    m.add_function(wrap_pyfunction!(exp_b, m)?)?;
    m.add_function(wrap_pyfunction!(log_b, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_weights, m)?)?;
    m.add_function(wrap_pyfunction!(classify_curvature, m)?)?;
    Ok(())
}
