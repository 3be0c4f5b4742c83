use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::exit_code;
use super::input::InputError;
use crate::model::{build_score_matrix, unique_minimizer, ModelError, ScorePanel, WeightVector};
use crate::oracle::order_consistency_check;
use crate::slsqp::{NlpProblem, SolverConfig, TerminationReason};
use crate::weights::{solve_expert_weights, ExpertWeightProblem, LinearConstraint, WeightError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{0}")]
    Io(String),
    #[error("constraints leave no feasible weight vector")]
    Infeasible,
    #[error("solver failed: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => exit_code::INPUT_ERROR,
            CliError::Infeasible => exit_code::INFEASIBLE,
            CliError::Solver(_) => exit_code::NO_CONVERGENCE,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(InputError::Model(e))
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        match e {
            WeightError::Infeasible => CliError::Infeasible,
            WeightError::Model(m) => m.into(),
            WeightError::Solve(s) => CliError::Solver(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialWeights {
    #[default]
    Uniform,
    Explicit(Vec<f64>),
}

impl FromStr for InitialWeights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("uniform") {
            return Ok(InitialWeights::Uniform);
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", v.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(InitialWeights::Explicit)
    }
}

impl InitialWeights {
    pub fn resolve(&self, m: usize) -> Result<WeightVector, ModelError> {
        match self {
            InitialWeights::Uniform => Ok(WeightVector::uniform(m)),
            InitialWeights::Explicit(values) => {
                if values.len() != m {
                    return Err(ModelError::DimensionMismatch {
                        expected: m,
                        actual: values.len(),
                    });
                }
                WeightVector::new(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => OutputFormat::Csv,
            _ => OutputFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_weights: InitialWeights,
    pub extra_constraints: Vec<LinearConstraint>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        RunConfig {
            tolerance: solver.tolerance,
            max_iterations: solver.max_iterations,
            initial_weights: InitialWeights::Uniform,
            extra_constraints: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertWeight {
    pub expert: String,
    pub weight: f64,
    /// 1 = largest weight.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDistance {
    pub expert: String,
    pub distance: f64,
    /// 1 = smallest distance.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeDistances {
    pub alternative: String,
    /// `d_ij`, in expert order.
    pub distances: Vec<f64>,
    /// `D_i`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub termination_reason: TerminationReason,
    pub iterations: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub numerical_rank: usize,
    pub full_column_rank: bool,
    pub singular_values: Vec<f64>,
    pub rank_tolerance: f64,
    /// `Q` is strictly convex on the simplex.
    pub unique_minimizer: bool,
    pub max_constraint_violation: f64,
    pub order_consistent: bool,
    pub warnings: Vec<String>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "lnQ")]
    pub ln_q: f64,
    pub alpha: f64,
    pub merit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub weights: Vec<ExpertWeight>,
    pub distances: Vec<ExpertDistance>,
    pub per_alternative: Vec<AlternativeDistances>,
    pub objective: f64,
    pub diagnostics: Diagnostics,
    pub trace: Vec<TraceRow>,
}

impl ResultDocument {
    pub fn exit_code(&self) -> i32 {
        if self.diagnostics.converged {
            exit_code::SUCCESS
        } else {
            exit_code::NO_CONVERGENCE
        }
    }

    pub fn weight_values(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.weight).collect()
    }

    pub fn distance_values(&self) -> Vec<f64> {
        self.distances.iter().map(|d| d.distance).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(InputError::Invalid(format!("bad results file: {e}"))))
    }
}

fn ranks(order: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; order.len()];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos + 1;
    }
    rank
}

/// Solves the weight program for `panel` and assembles the result document.
///
/// Non-convergence still yields a document; check
/// [`ResultDocument::exit_code`].
pub fn run_solve(panel: &ScorePanel, config: &RunConfig) -> Result<ResultDocument, CliError> {
    let start = Instant::now();
    let matrix = build_score_matrix(panel)?;
    let m = panel.num_experts();
    let initial = config.initial_weights.resolve(m)?;
    let solver = config.solver_config();
    let solution = solve_expert_weights(&matrix, &initial, &config.extra_constraints, &solver)?;

    let consistency = order_consistency_check(&solution.weights, &solution.distances.expert_distances);
    let weight_rank = ranks(&consistency.weight_order);
    let distance_rank = ranks(&consistency.distance_order);
    let experts = panel.experts();

    let problem = ExpertWeightProblem::new(&matrix, config.extra_constraints.clone())?;
    let g = problem.constraints(solution.weights.as_slice());
    let max_violation = g
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < problem.num_equalities() { v.abs() } else { (-v).max(0.0) })
        .fold(0.0, f64::max);

    let unique = unique_minimizer(&matrix, solution.diagnostics.rank_tolerance);
    let mut warnings = Vec::new();
    if !solution.diagnostics.full_column_rank {
        warnings.push(format!(
            "score matrix has rank {} < {} experts (full_column_rank = false)",
            solution.diagnostics.numerical_rank, m
        ));
    }
    if !unique {
        warnings.push("optimal weights are not unique; other weight vectors reach the same objective".into());
    }
    if !solution.converged() {
        warnings.push(format!("solver stopped: {:?}", solution.termination_reason()));
    }

    let trace = solution
        .outcome
        .trace
        .records
        .iter()
        .map(|r| TraceRow {
            k: r.iteration,
            q: r.f_value,
            ln_q: r.f_value.ln(),
            alpha: r.alpha,
            merit: r.merit,
        })
        .collect();

    Ok(ResultDocument {
        weights: experts
            .iter()
            .zip(solution.weights.as_slice())
            .enumerate()
            .map(|(j, (e, &w))| ExpertWeight {
                expert: e.clone(),
                weight: w,
                rank: weight_rank[j],
            })
            .collect(),
        distances: experts
            .iter()
            .zip(&solution.distances.expert_distances)
            .enumerate()
            .map(|(j, (e, &d))| ExpertDistance {
                expert: e.clone(),
                distance: d,
                rank: distance_rank[j],
            })
            .collect(),
        per_alternative: panel
            .alternatives()
            .iter()
            .zip(&solution.distances.per_alt_distances)
            .zip(&solution.distances.per_alt_totals)
            .map(|((a, d), &t)| AlternativeDistances {
                alternative: a.clone(),
                distances: d.clone(),
                total: t,
            })
            .collect(),
        objective: solution.objective(),
        diagnostics: Diagnostics {
            converged: solution.converged(),
            termination_reason: solution.termination_reason(),
            iterations: solution.outcome.iterations(),
            tolerance: solver.tolerance,
            max_iterations: solver.max_iterations,
            numerical_rank: solution.diagnostics.numerical_rank,
            full_column_rank: solution.diagnostics.full_column_rank,
            singular_values: solution.diagnostics.singular_values.clone(),
            rank_tolerance: solution.diagnostics.rank_tolerance,
            unique_minimizer: unique,
            max_constraint_violation: max_violation,
            order_consistent: consistency.consistent,
            warnings,
            runtime_seconds: start.elapsed().as_secs_f64(),
        },
        trace,
    })
}

/// One row per expert: label, weight, weight rank, distance, distance rank.
pub fn write_results_csv(doc: &ResultDocument) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["expert", "weight", "weight_rank", "distance", "distance_rank"])
        .expect("in-memory write");
    for (w, d) in doc.weights.iter().zip(&doc.distances) {
        writer
            .write_record([
                w.expert.clone(),
                format!("{:?}", w.weight),
                w.rank.to_string(),
                format!("{:?}", d.distance),
                d.rank.to_string(),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

/// Columns `k,Q,lnQ,alpha,merit`.
pub fn write_trace_csv(doc: &ResultDocument) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["k", "Q", "lnQ", "alpha", "merit"])
        .expect("in-memory write");
    for row in &doc.trace {
        writer
            .write_record([
                row.k.to_string(),
                format!("{:?}", row.q),
                format!("{:?}", row.ln_q),
                format!("{:?}", row.alpha),
                format!("{:?}", row.merit),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

/// Human-readable summary: the weight/distance table with rank rows, then
/// per-alternative distances and solver diagnostics.
pub fn render_report(doc: &ResultDocument) -> String {
    let label_width = 28;
    let col = doc
        .weights
        .iter()
        .map(|w| w.expert.len())
        .chain(doc.per_alternative.iter().map(|_| 9))
        .max()
        .unwrap_or(9)
        .max(9);
    let mut out = String::new();
    let line = |out: &mut String, label: &str, cells: Vec<String>| {
        let _ = write!(out, "{label:<label_width$}");
        for c in cells {
            let _ = write!(out, " {c:>col$}");
        }
        out.push('\n');
    };
    line(&mut out, "", doc.weights.iter().map(|w| w.expert.clone()).collect());
    line(&mut out, "Expert weight", doc.weights.iter().map(|w| format!("{:.3}", w.weight)).collect());
    line(&mut out, "Descending order of weights", doc.weights.iter().map(|w| w.rank.to_string()).collect());
    line(&mut out, "Distances", doc.distances.iter().map(|d| format!("{:.3}", d.distance)).collect());
    line(&mut out, "Ascending order of distances", doc.distances.iter().map(|d| d.rank.to_string()).collect());
    out.push('\n');

    let mut header: Vec<String> = doc.weights.iter().map(|w| w.expert.clone()).collect();
    header.push("total".into());
    line(&mut out, "Per-alternative distances", header);
    for alt in &doc.per_alternative {
        let mut cells: Vec<String> = alt.distances.iter().map(|d| format!("{d:.3}")).collect();
        cells.push(format!("{:.3}", alt.total));
        line(&mut out, &alt.alternative, cells);
    }
    out.push('\n');

    let d = &doc.diagnostics;
    let _ = writeln!(out, "Objective Q*        {:.6}", doc.objective);
    let _ = writeln!(out, "Iterations          {}", d.iterations);
    let _ = writeln!(out, "Termination         {:?}", d.termination_reason);
    let _ = writeln!(out, "Rank                {} of {}", d.numerical_rank, doc.weights.len());
    let _ = writeln!(out, "Order consistent    {}", d.order_consistent);
    for w in &d.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
