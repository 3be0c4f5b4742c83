use nalgebra::DVector;

use super::{IterationState, NlpProblem, SolveError, SolverConfig};

/// Weighted constraint violation `Σ_eq ρ_j|g_j| + Σ_in ρ_j|min(0, g_j)|`.
pub fn penalty(values: &DVector<f64>, num_equalities: usize, rho: &DVector<f64>) -> f64 {
    values
        .iter()
        .zip(rho.iter())
        .enumerate()
        .map(|(j, (&g, &r))| {
            if j < num_equalities {
                r * g.abs()
            } else {
                r * g.min(0.0).abs()
            }
        })
        .sum()
}

/// Exact penalty merit `φ_ρ(x) = f(x) + penalty(g(x))`.
pub fn merit_value<P: NlpProblem + ?Sized>(problem: &P, x: &[f64], rho: &DVector<f64>) -> f64 {
    problem.objective(x) + penalty(&problem.constraints(x), problem.num_equalities(), rho)
}

/// `ρ_j = max{½(ρ_j⁻ + |μ_j|), |μ_j|}`.
pub fn update_penalty(rho_prev: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    assert_eq!(rho_prev.len(), mu.len(), "penalty and multiplier lengths differ");
    rho_prev.zip_map(mu, |r, m| (0.5 * (r + m.abs())).max(m.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineStep {
    pub alpha: f64,
    pub merit: f64,
    /// Merit at `α = 0`.
    pub initial_merit: f64,
    /// `φ(α) − φ(0)`, formed from [`NlpProblem::objective_change`].
    pub merit_change: f64,
}

/// Backtracking search on `φ(α) = φ_ρ(x + αd)` starting from `α = 1`.
///
/// Accepts the first `α` with `φ(α) ≤ φ(0) + c·α·Δ`, where `Δ` is the
/// first-order merit decrease predicted by the subproblem. If `Δ` is not
/// negative only strict decrease is required.
pub fn line_search<P: NlpProblem + ?Sized>(
    problem: &P,
    state: &IterationState,
    d: &DVector<f64>,
    config: &SolverConfig,
) -> Result<LineStep, SolveError> {
    if d.iter().all(|&v| v == 0.0) {
        return Err(SolveError::ZeroDirection);
    }
    let me = problem.num_equalities();
    let phi0 = state.f_value + penalty(&state.constraint_values, me, &state.rho);
    let predicted = state.gradient.dot(d) - penalty(&state.constraint_values, me, &state.rho);

    let mut alpha = 1.0;
    for _ in 0..config.line_search_max_steps {
        let step = d * alpha;
        let trial = &state.x + &step;
        let values = problem.constraints(trial.as_slice());
        let change = problem.objective_change(state.x.as_slice(), step.as_slice()) + penalty(&values, me, &state.rho)
            - penalty(&state.constraint_values, me, &state.rho);
        let accepted = if predicted < 0.0 {
            change <= config.armijo_coefficient * alpha * predicted && change < 0.0
        } else {
            change < 0.0
        };
        if change.is_finite() && accepted {
            return Ok(LineStep {
                alpha,
                merit: merit_value(problem, trial.as_slice(), &state.rho),
                initial_merit: phi0,
                merit_change: change,
            });
        }
        alpha *= config.backtrack_factor;
    }
    Err(SolveError::LineSearchFailed {
        steps: config.line_search_max_steps,
    })
}
