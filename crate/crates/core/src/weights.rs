//! The expert-weight program solved with SLSQP.
//!
//! ```text
//!     min Q(w)   s.t.   Σ w_j = 1,   0 ≤ w_j ≤ 1,   extra linear rows
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{solve_lsei, LseiError, LseiInstance};
use crate::model::{
    distance_report, rank_diagnostics, unique_minimizer, DistanceReport, ModelError, RankDiagnostics, ScoreMatrix, WeightVector,
    DEFAULT_RANK_TOLERANCE,
};
use crate::slsqp::{self, NlpProblem, SolveError, SolveOutcome, SolverConfig, TerminationReason};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("constraints leave no feasible weight vector")]
    Infeasible,
}

/// `coefficients · w ≥ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coefficients: Vec<f64>, rhs: f64) -> Self {
        LinearConstraint { coefficients, rhs }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.coefficients.iter().zip(w).map(|(a, x)| a * x).sum::<f64>() - self.rhs
    }
}

/// Constraint order: the sum equality, then `w_j ≥ 0`, then `1 − w_j ≥ 0`,
/// then the extra rows.
pub struct ExpertWeightProblem<'a> {
    matrix: &'a ScoreMatrix,
    extra: Vec<LinearConstraint>,
}

impl<'a> ExpertWeightProblem<'a> {
    pub fn new(matrix: &'a ScoreMatrix, extra: Vec<LinearConstraint>) -> Result<Self, ModelError> {
        let m = matrix.num_experts();
        if let Some(c) = extra.iter().find(|c| c.coefficients.len() != m) {
            return Err(ModelError::DimensionMismatch {
                expected: m,
                actual: c.coefficients.len(),
            });
        }
        Ok(ExpertWeightProblem { matrix, extra })
    }

    pub fn matrix(&self) -> &ScoreMatrix {
        self.matrix
    }
}

impl NlpProblem for ExpertWeightProblem<'_> {
    fn dimension(&self) -> usize {
        self.matrix.num_experts()
    }

    fn num_equalities(&self) -> usize {
        1
    }

    fn num_constraints(&self) -> usize {
        1 + 2 * self.dimension() + self.extra.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.matrix.objective_at(x).unwrap_or(f64::NAN)
    }

    fn objective_change(&self, x: &[f64], step: &[f64]) -> f64 {
        self.matrix.objective_change_at(x, step).unwrap_or(f64::NAN)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.matrix
            .gradient_at(x)
            .unwrap_or_else(|_| DVector::from_element(self.dimension(), f64::NAN))
    }

    fn constraints(&self, x: &[f64]) -> DVector<f64> {
        let m = self.dimension();
        let mut g = DVector::zeros(self.num_constraints());
        g[0] = x.iter().sum::<f64>() - 1.0;
        for j in 0..m {
            g[1 + j] = x[j];
            g[1 + m + j] = 1.0 - x[j];
        }
        for (row, c) in self.extra.iter().enumerate() {
            g[1 + 2 * m + row] = c.value(x);
        }
        g
    }

    fn constraint_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        let m = self.dimension();
        let mut jac = DMatrix::zeros(self.num_constraints(), m);
        jac.row_mut(0).fill(1.0);
        for j in 0..m {
            jac[(1 + j, j)] = 1.0;
            jac[(1 + m + j, j)] = -1.0;
        }
        for (row, c) in self.extra.iter().enumerate() {
            for (j, a) in c.coefficients.iter().enumerate() {
                jac[(1 + 2 * m + row, j)] = *a;
            }
        }
        jac
    }
}

/// Solved weights together with the quantities reported alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub weights: WeightVector,
    pub distances: DistanceReport,
    pub diagnostics: RankDiagnostics,
    pub outcome: SolveOutcome,
}

impl WeightSolution {
    pub fn converged(&self) -> bool {
        self.outcome.converged()
    }

    pub fn termination_reason(&self) -> TerminationReason {
        self.outcome.trace.termination_reason
    }

    pub fn objective(&self) -> f64 {
        self.distances.objective
    }
}

/// Every constraint of the weight program is linear, so one projection of
/// `start` onto the constraint set decides feasibility exactly.
fn linear_constraints_feasible(problem: &ExpertWeightProblem<'_>, start: &[f64]) -> bool {
    let m = problem.dimension();
    let jac = problem.constraint_jacobian(start);
    let offsets = problem.constraints(&vec![0.0; m]);
    let instance = LseiInstance::new(DMatrix::identity(m, m), DVector::from_column_slice(start))
        .with_equalities(jac.rows(0, 1).into_owned(), -offsets.rows(0, 1))
        .with_inequalities(
            jac.rows(1, jac.nrows() - 1).into_owned(),
            -offsets.rows(1, offsets.len() - 1),
        );
    !matches!(solve_lsei(&instance), Err(LseiError::Infeasible))
}

/// Residual norms at or below this multiple of the largest score-column norm
/// count as zero when testing for a kink.
const KINK_TOLERANCE: f64 = 1e-7;

enum KinkTest {
    /// Some `V` with `‖V‖ ≤ |K|` closes the optimality conditions.
    Optimal,
    /// Feasible direction along which `Q` decreases to first order.
    Descent(DVector<f64>),
}

/// Tests `0 ∈ ∂Q(w) + N(w)` at a point where some residuals `r_j` vanish.
///
/// With `K` the vanishing residuals, `∂Q(w) = ∇_s − SᵀV` for `‖V‖ ≤ |K|`,
/// where `∇_s` is the gradient of the remaining terms, and the normal cone is
/// spanned by the active constraint gradients `a_i` (the redundant `w_j ≤ 1`
/// rows are left out). The point is optimal when some multipliers `λ`, with
/// `λ_i ≥ 0` on inequalities, make `z = ∇_s − Σ λ_i a_i = SᵀV` for a `V` of
/// norm at most `|K|`. The smallest such `V` lies in the range of `S`, so with
/// `S = UΣWᵀ` its norm is `‖Σ⁻¹Wᵀz‖` subject to `z` having no component in
/// the null space of `S`. Otherwise `u = −WΣ⁻¹ρ/‖ρ‖`, with `ρ = Σ⁻¹Wᵀz` at the
/// best multipliers, has `‖Su‖ = 1` and `Q'(w; u) = |K| − ‖ρ‖ < 0`; the
/// equality multipliers of that fit supply its null-space part.
/// Returns `None` when no residual vanishes.
fn kink_test(problem: &ExpertWeightProblem<'_>, w: &[f64]) -> Option<KinkTest> {
    let s = problem.matrix().data();
    let m = problem.dimension();
    let b = s * DVector::from_column_slice(w);
    let scale = s.column_iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
    let mut kinks = 0usize;
    let mut smooth_direction = DVector::zeros(s.nrows());
    for p in s.column_iter() {
        let r = p - &b;
        let norm = r.norm();
        if norm <= KINK_TOLERANCE * scale {
            kinks += 1;
        } else {
            smooth_direction.axpy(1.0 / norm, &r, 1.0);
        }
    }
    if kinks == 0 {
        return None;
    }
    let smooth_gradient = -s.tr_mul(&smooth_direction);

    let g = problem.constraints(w);
    let jac = problem.constraint_jacobian(w);
    let upper = 1 + m..1 + 2 * m;
    let active: Vec<usize> = (0..g.len())
        .filter(|&i| i == 0 || (!upper.contains(&i) && g[i] <= 1e-9))
        .collect();
    let normals = DMatrix::from_fn(m, active.len(), |j, c| jac[(active[c], j)]);

    // Zero rows make the thin SVD return all of W.
    let padded = DMatrix::from_fn(s.nrows().max(m), m, |r, c| if r < s.nrows() { s[(r, c)] } else { 0.0 });
    let svd = padded.svd(false, true);
    let v_t = svd.v_t?;
    let largest = svd.singular_values.max();
    let (range, null): (Vec<usize>, Vec<usize>) =
        (0..m).partition(|&i| svd.singular_values[i] > DEFAULT_RANK_TOLERANCE * largest);
    let scaled = |rows: &[usize], x: &DMatrix<f64>, weight: bool| {
        DMatrix::from_fn(rows.len(), x.ncols(), |r, c| {
            let i = rows[r];
            let value = v_t.row(i).dot(&x.column(c).transpose());
            if weight {
                value / svd.singular_values[i]
            } else {
                value
            }
        })
    };
    let grad = DMatrix::from_column_slice(m, 1, smooth_gradient.as_slice());
    let design = scaled(&range, &normals, true);
    let target = scaled(&range, &grad, true).column(0).into_owned();
    let eq = scaled(&null, &normals, false);
    let eq_rhs = scaled(&null, &grad, false).column(0).into_owned();
    let ineq_cols: Vec<usize> = (0..active.len()).filter(|&c| active[c] != 0).collect();
    let ineq = DMatrix::from_fn(ineq_cols.len(), active.len(), |r, c| if ineq_cols[r] == c { 1.0 } else { 0.0 });
    let instance = LseiInstance::new(design.clone(), target.clone())
        .with_equalities(eq, eq_rhs)
        .with_inequalities(ineq, DVector::zeros(ineq_cols.len()));
    let solution = solve_lsei(&instance).ok()?;
    let rho = target - design * &solution.d;
    let v_norm = rho.norm();
    if v_norm <= kinks as f64 * (1.0 + 1e-6) + 1e-9 {
        return Some(KinkTest::Optimal);
    }
    let mut u = DVector::zeros(m);
    for (k, &i) in range.iter().enumerate() {
        u.axpy(-rho[k] / (svd.singular_values[i] * v_norm), &v_t.row(i).transpose(), 1.0);
    }
    for (k, &i) in null.iter().enumerate() {
        u.axpy(-solution.eq_multipliers[k] / v_norm, &v_t.row(i).transpose(), 1.0);
    }
    Some(KinkTest::Descent(u))
}

/// Backtracks from `w` along `u`, staying feasible, until `Q` decreases.
fn escape_step(problem: &ExpertWeightProblem<'_>, w: &[f64], u: &DVector<f64>) -> Option<(Vec<f64>, f64, f64)> {
    let m = problem.dimension();
    let mut t = (0..m)
        .filter(|&j| u[j] < 0.0)
        .map(|j| w[j] / -u[j])
        .fold(1.0, f64::min);
    for _ in 0..60 {
        let trial: Vec<f64> = (0..m).map(|j| (w[j] + t * u[j]).max(0.0)).collect();
        let sum: f64 = trial.iter().sum();
        let trial: Vec<f64> = trial.iter().map(|v| v / sum).collect();
        let step = DVector::from_iterator(m, (0..m).map(|j| trial[j] - w[j]));
        let change = problem.objective_change(w, step.as_slice());
        let feasible = problem.constraints(&trial).iter().skip(1).all(|&c| c >= -1e-12);
        if feasible && change < 0.0 {
            return Some((trial, change, t));
        }
        t *= 0.5;
    }
    None
}

/// Restarts after a stalled run; each restart follows an escape from a kink.
const MAX_KINK_RESTARTS: usize = 10;

/// Runs SLSQP and checks where it stopped. A nonsmooth optimum is reported
/// as such; from a nonsmooth point that is not optimal the solver steps off
/// the kink and restarts. Escape steps appear in the trace with a
/// reset Hessian.
fn solve_with_kink_escape(
    problem: &ExpertWeightProblem<'_>,
    initial: &[f64],
    config: &SolverConfig,
) -> Result<SolveOutcome, SolveError> {
    let mut outcome = slsqp::solve(problem, initial, config)?;
    for _ in 0..MAX_KINK_RESTARTS {
        if !matches!(
            outcome.trace.termination_reason,
            TerminationReason::Converged | TerminationReason::LineSearchFailed | TerminationReason::MaxIterations
        ) {
            break;
        }
        let w: Vec<f64> = outcome.x.iter().copied().collect();
        let u = match kink_test(problem, &w) {
            Some(KinkTest::Optimal) => {
                outcome.trace.termination_reason = TerminationReason::NonsmoothOptimum;
                break;
            }
            Some(KinkTest::Descent(u)) => u,
            None => break,
        };
        let used = outcome.iterations();
        if used >= config.max_iterations {
            outcome.trace.termination_reason = TerminationReason::MaxIterations;
            break;
        }
        let Some((next, change, t)) = escape_step(problem, &w, &u) else {
            break;
        };
        let remaining = SolverConfig {
            max_iterations: (config.max_iterations - used - 1).max(1),
            ..config.clone()
        };
        let restart = slsqp::solve(problem, &next, &remaining)?;
        let mut records = std::mem::take(&mut outcome.trace.records);
        let previous = records.last().cloned().expect("trace has an initial row");
        for (k, mut record) in restart.trace.records.into_iter().enumerate() {
            record.iteration = used + 1 + k;
            if k == 0 {
                record.step_norm = (&outcome.x - DVector::from_column_slice(&next)).amax();
                record.alpha = t;
                record.merit_before = previous.f_value;
                record.merit = previous.f_value + change;
                record.merit_change = change;
                record.objective_change = change;
                record.hessian_reset = true;
            }
            records.push(record);
        }
        outcome = SolveOutcome {
            x: restart.x,
            f_value: restart.f_value,
            multipliers: restart.multipliers,
            trace: slsqp::SolveTrace {
                records,
                termination_reason: restart.trace.termination_reason,
            },
        };
    }
    Ok(outcome)
}

/// Minimizes `Q` over the simplex (plus `extra` rows) starting at `initial`.
pub fn solve_expert_weights(
    matrix: &ScoreMatrix,
    initial: &WeightVector,
    extra: &[LinearConstraint],
    config: &SolverConfig,
) -> Result<WeightSolution, WeightError> {
    if initial.len() != matrix.num_experts() {
        return Err(ModelError::DimensionMismatch {
            expected: matrix.num_experts(),
            actual: initial.len(),
        }
        .into());
    }
    let diagnostics = rank_diagnostics(matrix, DEFAULT_RANK_TOLERANCE);
    if !unique_minimizer(matrix, DEFAULT_RANK_TOLERANCE) {
        log::warn!(
            "score matrix has rank {} for {} experts; optimal weights may not be unique",
            diagnostics.numerical_rank,
            matrix.num_experts()
        );
    }
    let problem = ExpertWeightProblem::new(matrix, extra.to_vec())?;
    if !extra.is_empty() && !linear_constraints_feasible(&problem, initial.as_slice()) {
        return Err(WeightError::Infeasible);
    }
    let outcome = solve_with_kink_escape(&problem, initial.as_slice(), config)?;
    if outcome.trace.termination_reason == TerminationReason::SubproblemInfeasible {
        return Err(WeightError::Infeasible);
    }
    let weights = WeightVector::from_solution(outcome.x.as_slice())?;
    let distances = distance_report(matrix, &weights)?;
    Ok(WeightSolution {
        weights,
        distances,
        diagnostics,
        outcome,
    })
}
