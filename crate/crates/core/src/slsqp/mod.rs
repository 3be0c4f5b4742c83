//! Sequential least-squares quadratic programming.
//!
//! Each iteration factors the quasi-Newton matrix as `B = L·D·Lᵀ`, solves
//! the quadratic subproblem in its equivalent least-squares form
//!
//! ```text
//!     min ‖D^½ Lᵀ d + D^-½ L⁻¹ ∇f‖₂   s.t. linearized constraints
//! ```
//!
//! picks a step length on the exact penalty merit function and refreshes
//! `B` with a damped BFGS update.

mod bfgs;
mod ldl;
mod merit;
mod problem;

pub use bfgs::{damped_bfgs_update, damping_factor, DampedUpdate};
pub use ldl::{ldl_factorize, Ldl};
pub use merit::{line_search, merit_value, penalty, update_penalty, LineStep};
pub use problem::{ClosureProblem, Constraint, ConstraintKind, NlpProblem};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{solve_lsei, LseiError, LseiInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {0} evaluation")]
    NonFiniteEvaluation(&'static str),
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("search direction is zero")]
    ZeroDirection,
    #[error("merit function not reduced after {steps} backtracking steps")]
    LineSearchFailed { steps: usize },
    #[error("quadratic subproblem failed: {0}")]
    Subproblem(#[from] LseiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence tolerance `ε`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub line_search_max_steps: usize,
    pub armijo_coefficient: f64,
    pub backtrack_factor: f64,
    /// Allowed constraint violation at a converged point.
    pub feasibility_tolerance: f64,
    /// Allowed `‖∇f − Jᵀμ‖∞` at a converged point.
    pub kkt_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-12,
            max_iterations: 200,
            line_search_max_steps: 40,
            armijo_coefficient: 1e-4,
            backtrack_factor: 0.5,
            feasibility_tolerance: 1e-8,
            kkt_tolerance: 1e-6,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(SolveError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.line_search_max_steps == 0 {
            return Err(SolveError::InvalidConfig("line_search_max_steps must be at least 1".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(SolveError::InvalidConfig("backtrack_factor must lie in (0, 1)".into()));
        }
        if !(self.feasibility_tolerance > 0.0 && self.kkt_tolerance > 0.0) {
            return Err(SolveError::InvalidConfig("feasibility and KKT tolerances must be positive".into()));
        }
        if !(self.armijo_coefficient > 0.0 && self.armijo_coefficient < 1.0) {
            return Err(SolveError::InvalidConfig("armijo_coefficient must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Mutable state carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub x: DVector<f64>,
    /// Quasi-Newton approximation `B` of the Lagrangian Hessian.
    pub hessian: DMatrix<f64>,
    pub rho: DVector<f64>,
    pub iteration: usize,
    pub f_value: f64,
    pub gradient: DVector<f64>,
    pub constraint_values: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub multipliers: DVector<f64>,
}

struct Evaluation {
    f: f64,
    gradient: DVector<f64>,
    constraints: DVector<f64>,
    jacobian: DMatrix<f64>,
}

fn evaluate<P: NlpProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Evaluation, SolveError> {
    let n = problem.dimension();
    let mc = problem.num_constraints();
    let f = problem.objective(x);
    if !f.is_finite() {
        return Err(SolveError::NonFiniteEvaluation("objective"));
    }
    let gradient = problem.gradient(x);
    if gradient.len() != n {
        return Err(SolveError::DimensionMismatch {
            expected: n,
            actual: gradient.len(),
        });
    }
    if gradient.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFiniteEvaluation("gradient"));
    }
    let constraints = problem.constraints(x);
    let jacobian = problem.constraint_jacobian(x);
    if constraints.len() != mc || jacobian.shape() != (mc, n) {
        return Err(SolveError::DimensionMismatch {
            expected: mc,
            actual: constraints.len(),
        });
    }
    if constraints.iter().chain(jacobian.iter()).any(|v| !v.is_finite()) {
        return Err(SolveError::NonFiniteEvaluation("constraint"));
    }
    Ok(Evaluation {
        f,
        gradient,
        constraints,
        jacobian,
    })
}

impl IterationState {
    /// State at `x0` with `B = I` and zero penalties.
    pub fn new<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64]) -> Result<Self, SolveError> {
        let n = problem.dimension();
        if x0.len() != n {
            return Err(SolveError::DimensionMismatch {
                expected: n,
                actual: x0.len(),
            });
        }
        if problem.num_equalities() > problem.num_constraints() {
            return Err(SolveError::InvalidConfig(
                "more equalities than constraints".into(),
            ));
        }
        let eval = evaluate(problem, x0)?;
        let mc = problem.num_constraints();
        Ok(IterationState {
            x: DVector::from_column_slice(x0),
            hessian: DMatrix::identity(n, n),
            rho: DVector::zeros(mc),
            iteration: 0,
            f_value: eval.f,
            gradient: eval.gradient,
            constraint_values: eval.constraints,
            jacobian: eval.jacobian,
            multipliers: DVector::zeros(mc),
        })
    }

    fn apply(&mut self, x: DVector<f64>, eval: Evaluation) {
        self.x = x;
        self.f_value = eval.f;
        self.gradient = eval.gradient;
        self.constraint_values = eval.constraints;
        self.jacobian = eval.jacobian;
    }

    /// Largest constraint violation at the current point.
    pub fn max_violation(&self, num_equalities: usize) -> f64 {
        max_violation(&self.constraint_values, num_equalities)
    }

    /// `∇f − Jᵀμ`.
    fn lagrangian_gradient(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.gradient - self.jacobian.tr_mul(mu)
    }
}

fn max_violation(values: &DVector<f64>, num_equalities: usize) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(j, &g)| if j < num_equalities { g.abs() } else { (-g).max(0.0) })
        .fold(0.0, f64::max)
}

/// Builds the least-squares form of the quadratic subproblem at the
/// current iterate. If `B` has lost positive definiteness it is reset to
/// the identity first.
pub fn build_qp_subproblem<P: NlpProblem + ?Sized>(
    state: &mut IterationState,
    problem: &P,
) -> LseiInstance {
    let factor = match ldl_factorize(&state.hessian) {
        Ok(f) => f,
        Err(_) => {
            log::debug!("resetting quasi-Newton matrix at iteration {}", state.iteration);
            let n = state.x.len();
            state.hessian = DMatrix::identity(n, n);
            ldl_factorize(&state.hessian).expect("identity is positive definite")
        }
    };
    let sqrt_d = factor.d.map(f64::sqrt);
    // E = D^½ Lᵀ
    let mut design = factor.l.transpose();
    for (i, mut row) in design.row_iter_mut().enumerate() {
        row *= sqrt_d[i];
    }
    // target = −D^-½ L⁻¹ ∇f
    let forward = factor
        .l
        .solve_lower_triangular(&state.gradient)
        .expect("unit lower triangular");
    let target = -forward.component_div(&sqrt_d);

    let me = problem.num_equalities();
    let mc = state.constraint_values.len();
    let eq_matrix = state.jacobian.rows(0, me).into_owned();
    let eq_rhs = -state.constraint_values.rows(0, me);
    let ineq_matrix = state.jacobian.rows(me, mc - me).into_owned();
    let ineq_rhs = -state.constraint_values.rows(me, mc - me);
    LseiInstance::new(design, target)
        .with_equalities(eq_matrix, eq_rhs)
        .with_inequalities(ineq_matrix, ineq_rhs)
}

/// Subproblem with an extra variable `ξ ∈ [0, 1]` that scales down the
/// constant terms of the equalities and of the currently violated
/// inequalities, heavily penalized so it is only used when needed.
fn relaxed_subproblem(base: &LseiInstance, num_equalities: usize, state: &IterationState) -> LseiInstance {
    let n = base.num_variables();
    let weight = 1e3 * (1.0 + base.design.amax() + base.target.amax());
    let mut design = DMatrix::zeros(n + 1, n + 1);
    design.view_mut((0, 0), (n, n)).copy_from(&base.design);
    design[(n, n)] = weight;
    let mut target = DVector::zeros(n + 1);
    target.rows_mut(0, n).copy_from(&base.target);

    let me = num_equalities;
    let mut eq_matrix = DMatrix::zeros(me, n + 1);
    eq_matrix.view_mut((0, 0), (me, n)).copy_from(&base.eq_matrix);
    for j in 0..me {
        eq_matrix[(j, n)] = -state.constraint_values[j];
    }

    let mi = base.ineq_matrix.nrows();
    let mut ineq_matrix = DMatrix::zeros(mi + 2, n + 1);
    ineq_matrix.view_mut((0, 0), (mi, n)).copy_from(&base.ineq_matrix);
    for j in 0..mi {
        let g = state.constraint_values[me + j];
        if g < 0.0 {
            ineq_matrix[(j, n)] = -g;
        }
    }
    let mut ineq_rhs = DVector::zeros(mi + 2);
    ineq_rhs.rows_mut(0, mi).copy_from(&base.ineq_rhs);
    // 0 ≤ ξ ≤ 1
    ineq_matrix[(mi, n)] = 1.0;
    ineq_matrix[(mi + 1, n)] = -1.0;
    ineq_rhs[mi + 1] = -1.0;

    LseiInstance::new(design, target)
        .with_equalities(eq_matrix, base.eq_rhs.clone())
        .with_inequalities(ineq_matrix, ineq_rhs)
}

enum SubproblemResult {
    Step {
        d: DVector<f64>,
        multipliers: DVector<f64>,
        relaxed: bool,
    },
    Infeasible,
}

fn solve_subproblem<P: NlpProblem + ?Sized>(
    state: &mut IterationState,
    problem: &P,
) -> Result<SubproblemResult, SolveError> {
    let instance = build_qp_subproblem(state, problem);
    match solve_lsei(&instance) {
        Ok(sol) => {
            return Ok(SubproblemResult::Step {
                multipliers: sol.multipliers(),
                d: sol.d,
                relaxed: false,
            })
        }
        Err(LseiError::Infeasible) => {}
        Err(e) => return Err(e.into()),
    }
    let me = problem.num_equalities();
    let n = instance.num_variables();
    let relaxed = relaxed_subproblem(&instance, me, state);
    let sol = match solve_lsei(&relaxed) {
        Ok(sol) => sol,
        Err(LseiError::Infeasible) => return Ok(SubproblemResult::Infeasible),
        Err(e) => return Err(e.into()),
    };
    let xi = sol.d[n];
    log::debug!("relaxed subproblem at iteration {}: xi = {xi:.3e}", state.iteration);
    let d = sol.d.rows(0, n).into_owned();
    // With ξ at its upper bound the linearization offers no way to reduce
    // the violation.
    if xi >= 1.0 - 1e-8 || d.amax() <= 1e-14 {
        return Ok(SubproblemResult::Infeasible);
    }
    let mi = instance.ineq_matrix.nrows();
    let mut multipliers = DVector::zeros(me + mi);
    multipliers.rows_mut(0, me).copy_from(&sol.eq_multipliers);
    multipliers
        .rows_mut(me, mi)
        .copy_from(&sol.ineq_multipliers.rows(0, mi));
    Ok(SubproblemResult::Step {
        d,
        multipliers,
        relaxed: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    /// Stopped where the objective is not differentiable; optimality was
    /// certified by the caller with a subgradient test.
    NonsmoothOptimum,
    MaxIterations,
    SubproblemInfeasible,
    LineSearchFailed,
}

/// One row of the convergence trace. Row `k` describes iterate `x_k` and
/// the step that produced it (zero step for the initial point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub f_value: f64,
    pub step_norm: f64,
    pub alpha: f64,
    /// Merit at `x_k` under the penalties of the step into `x_k`.
    pub merit: f64,
    /// Merit at `x_{k-1}` under the same penalties.
    pub merit_before: f64,
    /// `φ(x_k) − φ(x_{k-1})` at those penalties, formed without cancellation.
    pub merit_change: f64,
    /// `f(x_k) − f(x_{k-1})`, formed without cancellation.
    pub objective_change: f64,
    pub rho: Vec<f64>,
    /// Damping factor of the quasi-Newton update after this step.
    pub theta: f64,
    /// `sᵀq` and `sᵀBs` of that update; zero on the initial row.
    pub curvature: f64,
    pub curvature_reference: f64,
    pub hessian_reset: bool,
    /// Smallest LDLᵀ pivot of the updated `B` (0 when it does not factor).
    pub min_pivot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub termination_reason: TerminationReason,
}

impl SolveTrace {
    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub x: DVector<f64>,
    pub f_value: f64,
    /// Multipliers of the last subproblem, equalities first.
    pub multipliers: DVector<f64>,
    pub trace: SolveTrace,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        matches!(
            self.trace.termination_reason,
            TerminationReason::Converged | TerminationReason::NonsmoothOptimum
        )
    }

    pub fn iterations(&self) -> usize {
        self.trace.iterations()
    }
}

fn min_pivot(b: &DMatrix<f64>) -> f64 {
    ldl_factorize(b).map_or(0.0, |f| f.d.min())
}

/// Runs SLSQP from `x0`.
///
/// Returns `Err` only for invalid input or non-finite evaluations; failure
/// to converge is reported through the trace's termination reason.
pub fn solve<P: NlpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &SolverConfig,
) -> Result<SolveOutcome, SolveError> {
    config.validate()?;
    let me = problem.num_equalities();
    let mut state = IterationState::new(problem, x0)?;
    let mut records = vec![TraceRecord {
        iteration: 0,
        x: state.x.iter().copied().collect(),
        f_value: state.f_value,
        step_norm: 0.0,
        alpha: 0.0,
        merit: state.f_value + penalty(&state.constraint_values, me, &state.rho),
        merit_before: state.f_value + penalty(&state.constraint_values, me, &state.rho),
        merit_change: 0.0,
        objective_change: 0.0,
        rho: state.rho.iter().copied().collect(),
        theta: 1.0,
        curvature: 0.0,
        curvature_reference: 0.0,
        hessian_reset: false,
        min_pivot: min_pivot(&state.hessian),
    }];
    let step_tolerance = config.tolerance.sqrt();

    let termination = loop {
        let (d, mu, relaxed) = match solve_subproblem(&mut state, problem)? {
            SubproblemResult::Step { d, multipliers, relaxed } => (d, multipliers, relaxed),
            SubproblemResult::Infeasible => break TerminationReason::SubproblemInfeasible,
        };
        state.multipliers = mu.clone();
        let feasible = state.max_violation(me) <= config.feasibility_tolerance;
        let d_max = d.amax();
        if d_max == 0.0 && feasible {
            break TerminationReason::Converged;
        }
        if state.iteration >= config.max_iterations {
            break TerminationReason::MaxIterations;
        }

        state.rho = update_penalty(&state.rho, &mu);
        let step = match line_search(problem, &state, &d, config) {
            Ok(step) => step,
            Err(SolveError::LineSearchFailed { .. }) | Err(SolveError::ZeroDirection) => {
                // A relaxed step that cannot reduce the merit means the
                // violation is already as small as the constraints allow.
                if relaxed {
                    break TerminationReason::SubproblemInfeasible;
                }
                // Rounding noise in the merit near a stationary point.
                if feasible && d_max <= step_tolerance {
                    break TerminationReason::Converged;
                }
                break TerminationReason::LineSearchFailed;
            }
            Err(e) => return Err(e),
        };

        let s = &d * step.alpha;
        let x_next = &state.x + &s;
        let f_change = problem.objective_change(state.x.as_slice(), s.as_slice());
        let eval = evaluate(problem, x_next.as_slice())?;
        let grad_lagrangian_old = state.lagrangian_gradient(&mu);
        let f_prev = state.f_value;
        state.apply(x_next, eval);
        let eta = state.lagrangian_gradient(&mu) - grad_lagrangian_old;
        let update = damped_bfgs_update(&state.hessian, &s, &eta);
        if update.reset {
            log::debug!("damped update reset B at iteration {}", state.iteration);
        }
        state.hessian = update.matrix;
        state.iteration += 1;

        records.push(TraceRecord {
            iteration: state.iteration,
            x: state.x.iter().copied().collect(),
            f_value: state.f_value,
            step_norm: d.norm(),
            alpha: step.alpha,
            merit: step.merit,
            merit_before: step.initial_merit,
            merit_change: step.merit_change,
            objective_change: f_change,
            rho: state.rho.iter().copied().collect(),
            theta: update.theta,
            curvature: update.s_q,
            curvature_reference: update.s_b_s,
            hessian_reset: update.reset,
            min_pivot: min_pivot(&state.hessian),
        });

        let feasible = state.max_violation(me) <= config.feasibility_tolerance;
        if f_change.abs() <= config.tolerance * (1.0 + f_prev.abs()) && d_max <= step_tolerance && feasible {
            // Multipliers for the final point; keep iterating while they do
            // not yet certify stationarity.
            match solve_subproblem(&mut state, problem) {
                Ok(SubproblemResult::Step { multipliers, .. }) => {
                    let residual = state.lagrangian_gradient(&multipliers).amax();
                    state.multipliers = multipliers;
                    if residual <= config.kkt_tolerance {
                        break TerminationReason::Converged;
                    }
                }
                _ => break TerminationReason::Converged,
            }
        }
    };

    Ok(SolveOutcome {
        x: state.x,
        f_value: state.f_value,
        multipliers: state.multipliers,
        trace: SolveTrace {
            records,
            termination_reason: termination,
        },
    })
}
