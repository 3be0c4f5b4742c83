//! Python bindings: panels, the weight solver, the objective and the oracle
//! cross-check.
//!
//! ```python
//! import consensus_weights_py as cw
//! panel = cw.ScorePanel.reference()
//! result = cw.solve(panel)
//! print(result.weights, result.objective)
//! ```

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use consensus_weights::cli::{
    parse_constraints, parse_panel, render_report, run_solve, run_verify, write_panel, write_trace_csv, CliError,
    InitialWeights, ResultDocument, RunConfig, VerifyConfig, VerifyReport,
};
use consensus_weights::{
    build_score_matrix, consensus_point, objective, objective_gradient, ModelError, ScoreMatrix, WeightVector,
};

create_exception!(consensus_weights_py, InfeasibleError, PyValueError);

fn to_py_err(e: CliError) -> PyErr {
    match e {
        CliError::Infeasible => InfeasibleError::new_err(e.to_string()),
        CliError::Solver(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn model_err(e: ModelError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Scores indexed by alternative, indicator and expert.
#[pyclass(name = "ScorePanel", module = "consensus_weights_py")]
pub struct PyScorePanel {
    inner: consensus_weights::ScorePanel,
}

impl PyScorePanel {
    fn matrix(&self) -> PyResult<ScoreMatrix> {
        build_score_matrix(&self.inner).map_err(model_err)
    }
}

#[pymethods]
impl PyScorePanel {
    /// `scores` is flat in alternative, indicator, expert order.
    #[new]
    fn new(alternatives: Vec<String>, indicators: Vec<String>, experts: Vec<String>, scores: Vec<f64>) -> PyResult<Self> {
        let inner = consensus_weights::ScorePanel::new(alternatives, indicators, experts, scores).map_err(model_err)?;
        Ok(PyScorePanel { inner })
    }

    /// Parses the `alternative,indicator,<expert>...` CSV layout.
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let inner = parse_panel(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyScorePanel { inner })
    }

    /// The bundled 5 × 6 × 7 reference panel.
    #[staticmethod]
    fn reference() -> Self {
        PyScorePanel {
            inner: parse_panel(consensus_weights::REFERENCE_PANEL_CSV).expect("bundled panel parses"),
        }
    }

    fn to_csv(&self) -> String {
        write_panel(&self.inner)
    }

    #[getter]
    fn alternatives(&self) -> Vec<String> {
        self.inner.alternatives().to_vec()
    }

    #[getter]
    fn indicators(&self) -> Vec<String> {
        self.inner.indicators().to_vec()
    }

    #[getter]
    fn experts(&self) -> Vec<String> {
        self.inner.experts().to_vec()
    }

    /// `(alternatives, indicators, experts)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (
            self.inner.num_alternatives(),
            self.inner.num_indicators(),
            self.inner.num_experts(),
        )
    }

    fn score(&self, alternative: usize, indicator: usize, expert: usize) -> PyResult<f64> {
        let (s, n, m) = self.shape();
        if alternative >= s || indicator >= n || expert >= m {
            return Err(PyValueError::new_err("score index out of range"));
        }
        Ok(self.inner.score(alternative, indicator, expert))
    }

    fn __repr__(&self) -> String {
        let (s, n, m) = self.shape();
        format!("ScorePanel(alternatives={s}, indicators={n}, experts={m})")
    }
}

/// Output of [`solve`].
#[pyclass(name = "SolveResult", module = "consensus_weights_py")]
pub struct PySolveResult {
    doc: ResultDocument,
}

#[pymethods]
impl PySolveResult {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.doc.weight_values()
    }

    #[getter]
    fn distances(&self) -> Vec<f64> {
        self.doc.distance_values()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.doc.objective
    }

    #[getter]
    fn converged(&self) -> bool {
        self.doc.diagnostics.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.doc.diagnostics.iterations
    }

    #[getter]
    fn termination_reason(&self) -> String {
        format!("{:?}", self.doc.diagnostics.termination_reason)
    }

    /// `Q` at every iterate, starting point first.
    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.doc.trace.iter().map(|r| r.q).collect()
    }

    /// Expert labels by decreasing weight.
    fn ranking(&self) -> Vec<String> {
        let mut rows: Vec<_> = self.doc.weights.iter().collect();
        rows.sort_by_key(|w| w.rank);
        rows.into_iter().map(|w| w.expert.clone()).collect()
    }

    fn to_json(&self) -> String {
        self.doc.to_json()
    }

    /// The full result document as nested dicts and lists.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_loads(py, &self.doc.to_json())
    }

    fn trace_csv(&self) -> String {
        write_trace_csv(&self.doc)
    }

    fn report(&self) -> String {
        render_report(&self.doc)
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveResult(objective={}, iterations={}, converged={})",
            self.doc.objective, self.doc.diagnostics.iterations, self.doc.diagnostics.converged
        )
    }
}

/// Output of [`verify`].
#[pyclass(name = "VerifyReport", module = "consensus_weights_py")]
pub struct PyVerifyReport {
    report: VerifyReport,
}

#[pymethods]
impl PyVerifyReport {
    fn all_passed(&self) -> bool {
        self.report.all_passed()
    }

    /// `(name, passed, detail)` per check.
    #[getter]
    fn checks(&self) -> Vec<(String, bool, String)> {
        self.report
            .checks
            .iter()
            .map(|c| (c.name.clone(), c.passed, c.detail.clone()))
            .collect()
    }

    #[getter]
    fn solver_objective(&self) -> f64 {
        self.report.solver_objective
    }

    #[getter]
    fn grid_objective(&self) -> f64 {
        self.report.grid_objective
    }

    #[getter]
    fn subgradient_objective(&self) -> f64 {
        self.report.subgradient_objective
    }

    fn render(&self) -> String {
        self.report.render()
    }
}

/// Solves for expert weights.
///
/// `init` is `None` (uniform) or a weight list on the simplex; `constraints`
/// holds extra rows in the text form accepted by the command line, e.g.
/// `"w(c1) >= w(c2)"`.
#[pyfunction]
#[pyo3(signature = (panel, tol=1e-12, max_iter=200, init=None, constraints=None, margin=0.0))]
fn solve(
    panel: &PyScorePanel,
    tol: f64,
    max_iter: usize,
    init: Option<Vec<f64>>,
    constraints: Option<&str>,
    margin: f64,
) -> PyResult<PySolveResult> {
    let extra_constraints = match constraints {
        Some(text) => parse_constraints(text, panel.inner.experts(), margin)
            .map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => Vec::new(),
    };
    let config = RunConfig {
        tolerance: tol,
        max_iterations: max_iter,
        initial_weights: init.map_or(InitialWeights::Uniform, InitialWeights::Explicit),
        extra_constraints,
    };
    let doc = run_solve(&panel.inner, &config).map_err(to_py_err)?;
    Ok(PySolveResult { doc })
}

/// `Q(w)`, the summed distance from each expert to the consensus point.
#[pyfunction]
fn objective_value(panel: &PyScorePanel, weights: Vec<f64>) -> PyResult<f64> {
    let w = WeightVector::new(weights).map_err(model_err)?;
    objective(&panel.matrix()?, &w).map_err(model_err)
}

#[pyfunction]
fn gradient(panel: &PyScorePanel, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = WeightVector::new(weights).map_err(model_err)?;
    let g = objective_gradient(&panel.matrix()?, &w).map_err(model_err)?;
    Ok(g.iter().copied().collect())
}

/// Consensus scores `S·w`, flat in alternative, indicator order.
#[pyfunction]
fn consensus(panel: &PyScorePanel, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = WeightVector::new(weights).map_err(model_err)?;
    let b = consensus_point(&panel.matrix()?, &w).map_err(model_err)?;
    Ok(b.values().iter().copied().collect())
}

/// Cross-checks the solver against the grid and subgradient oracles.
#[pyfunction]
#[pyo3(signature = (panel, seed=0, grid=None, subgrad_steps=100_000))]
fn verify(panel: &PyScorePanel, seed: u64, grid: Option<usize>, subgrad_steps: usize) -> PyResult<PyVerifyReport> {
    let config = VerifyConfig {
        seed,
        grid,
        subgradient_steps: subgrad_steps,
        ..VerifyConfig::default()
    };
    let report = run_verify(&panel.inner, &config).map_err(to_py_err)?;
    Ok(PyVerifyReport { report })
}

#[pymodule]
fn consensus_weights_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScorePanel>()?;
    m.add_class::<PySolveResult>()?;
    m.add_class::<PyVerifyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(objective_value, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(consensus, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
