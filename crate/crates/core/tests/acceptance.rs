//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the report.

mod common;

use std::time::Instant;

use consensus_weights::cli::parse_panel;
use consensus_weights::lsq::solve_lsei;
use consensus_weights::model::DEFAULT_RANK_TOLERANCE;
use consensus_weights::oracle::{
    brute_force_minimize, finite_difference_gradient, order_consistency_check, projected_subgradient_minimize,
    random_instance, random_simplex_point, SimplexGrid, StepRule,
};
use consensus_weights::slsqp::{damped_bfgs_update, damping_factor, ldl_factorize, update_penalty, SolverConfig};
use consensus_weights::{
    build_score_matrix, convexity_gap, objective_gradient, rank_diagnostics, solve_expert_weights, unique_minimizer,
    ScoreMatrix, WeightVector, REFERENCE_PANEL_CSV,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REFERENCE_WEIGHTS: [f64; 7] = [0.116, 0.142, 0.161, 0.171, 0.134, 0.131, 0.145];
const REFERENCE_DISTANCES: [f64; 7] = [102.592, 83.876, 73.903, 69.927, 89.217, 90.910, 82.576];
const REFERENCE_ORDER: [usize; 7] = [3, 2, 6, 1, 4, 5, 0];
const REFERENCE_OBJECTIVE: f64 = 593.001;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(outcomes: &mut Vec<Outcome>, name: &'static str, passed: bool, detail: String) {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    outcomes.push(Outcome { name, passed, detail });
}

struct Instance {
    seed: u64,
    matrix: ScoreMatrix,
    m: usize,
}

fn oracle_instances() -> Vec<Instance> {
    (0..25u64)
        .map(|i| {
            let m = 2 + (i % 3) as usize;
            let seed = 1000 + i;
            Instance {
                seed,
                matrix: random_instance(seed, 6, m),
                m,
            }
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    let panel = parse_panel(REFERENCE_PANEL_CSV).unwrap();
    let reference = build_score_matrix(&panel).unwrap();
    let config = SolverConfig::default();

    // Reference weights.
    let started = Instant::now();
    let sol = solve_expert_weights(&reference, &WeightVector::uniform(7), &[], &config).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let weights = sol.weights.as_slice();
    let weight_err = max_abs_diff(weights, &REFERENCE_WEIGHTS);
    report(
        &mut outcomes,
        "reference weights",
        sol.converged() && weight_err <= 1e-3 && elapsed < 1.0,
        format!("max deviation {weight_err:.2e}, {elapsed:.3} s, weights {weights:.5?}"),
    );

    // Reference distances and Q*.
    let distances = &sol.distances.expert_distances;
    let distance_err = max_abs_diff(distances, &REFERENCE_DISTANCES);
    let q = sol.objective();
    report(
        &mut outcomes,
        "reference distances",
        distance_err <= 0.05 && (q - REFERENCE_OBJECTIVE).abs() <= 0.35,
        format!("max deviation {distance_err:.3e}, Q* = {q:.6}"),
    );

    // Orderings.
    let orders = order_consistency_check(&sol.weights, distances);
    report(
        &mut outcomes,
        "reference ordering",
        orders.weight_order == REFERENCE_ORDER && orders.distance_order == REFERENCE_ORDER,
        format!(
            "by weight {:?}, by distance {:?}",
            orders.weight_order.iter().map(|&j| &panel.experts()[j]).collect::<Vec<_>>(),
            orders.distance_order.iter().map(|&j| &panel.experts()[j]).collect::<Vec<_>>()
        ),
    );

    // Convergence profile: monotone ln Q that flattens out at the end.
    let ln_q: Vec<f64> = sol.outcome.trace.records.iter().map(|r| r.f_value.ln()).collect();
    let iterations = sol.outcome.iterations();
    let monotone = ln_q.windows(2).all(|w| w[1] <= w[0]);
    let last_change = ln_q[ln_q.len() - 2] - ln_q[ln_q.len() - 1];
    report(
        &mut outcomes,
        "convergence profile",
        iterations <= 20 && monotone && last_change <= 1e-9,
        format!(
            "{iterations} iterations, monotone {monotone}, ln Q {:.6} -> {:.6}, last change {last_change:.1e}",
            ln_q[0],
            ln_q[ln_q.len() - 1]
        ),
    );

    // Oracle equivalence on seeded random instances.
    let instances = oracle_instances();
    let started = Instant::now();
    let mut worst_grid: f64 = 0.0;
    let mut worst_sub: f64 = 0.0;
    let mut all_converged = true;
    let mut all_full_rank = true;
    let mut solved = Vec::new();
    for inst in &instances {
        all_full_rank &= rank_diagnostics(&inst.matrix, DEFAULT_RANK_TOLERANCE).full_column_rank;
        let s = solve_expert_weights(&inst.matrix, &WeightVector::uniform(inst.m), &[], &config).unwrap();
        all_converged &= s.converged();
        let (_, grid_q) = brute_force_minimize(&inst.matrix, SimplexGrid::new(200, inst.m).unwrap()).unwrap();
        let (_, sub_q) = projected_subgradient_minimize(&inst.matrix, 100_000, StepRule::default());
        worst_grid = worst_grid.max((s.objective() - grid_q).abs());
        worst_sub = worst_sub.max((s.objective() - sub_q).abs() / sub_q.abs());
        solved.push(s);
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        &mut outcomes,
        "oracle equivalence",
        all_full_rank && all_converged && worst_grid <= 1e-2 && worst_sub <= 1e-2 && elapsed < 60.0,
        format!(
            "{} instances, grid gap {worst_grid:.2e}, subgradient gap {worst_sub:.2e} relative, {elapsed:.1} s",
            instances.len()
        ),
    );

    // Uniqueness across random starts.
    let mut spread_by_m = [0.0f64; 5];
    let mut uniqueness_failures = Vec::new();
    for (inst, base) in instances.iter().zip(&solved) {
        let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
        let mut spread: f64 = 0.0;
        for _ in 0..10 {
            let start = random_simplex_point(&mut rng, inst.m);
            let s = solve_expert_weights(&inst.matrix, &start, &[], &config).unwrap();
            spread = spread.max(max_abs_diff(s.weights.as_slice(), base.weights.as_slice()));
        }
        spread_by_m[inst.m] = spread_by_m[inst.m].max(spread);
        if spread > 1e-6 {
            uniqueness_failures.push(inst);
        }
    }
    report(
        &mut outcomes,
        "uniqueness",
        uniqueness_failures.is_empty(),
        format!(
            "max weight spread m=2 {:.2e}, m=3 {:.2e}, m=4 {:.2e}; {} of {} instances disagree",
            spread_by_m[2],
            spread_by_m[3],
            spread_by_m[4],
            uniqueness_failures.len(),
            instances.len()
        ),
    );

    // Convexity, 40 pairs on each of the 25 instances.
    let mut min_gap = f64::INFINITY;
    let mut strict_failures = Vec::new();
    for inst in &instances {
        let mut rng = ChaCha8Rng::seed_from_u64(inst.seed ^ 0xc0de);
        let mut strict = true;
        for _ in 0..40 {
            let w = random_simplex_point(&mut rng, inst.m);
            let w2 = random_simplex_point(&mut rng, inst.m);
            let lambda = rng.gen_range(0.01..0.99);
            let gap = convexity_gap(&inst.matrix, &w, &w2, lambda).unwrap();
            min_gap = min_gap.min(gap);
            if max_abs_diff(w.as_slice(), w2.as_slice()) > 1e-6 && gap <= 1e-12 {
                strict = false;
            }
        }
        if !strict {
            strict_failures.push(inst);
        }
    }
    report(
        &mut outcomes,
        "convexity",
        min_gap >= -1e-9 && strict_failures.is_empty(),
        format!(
            "1000 gaps, min {min_gap:.3e}; strictness fails on {} instances (m = {:?})",
            strict_failures.len(),
            strict_failures.iter().map(|i| i.m).collect::<Vec<_>>()
        ),
    );

    // Gradient against central differences on the reference panel.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gradient_err: f64 = 0.0;
    for _ in 0..20 {
        let w = random_simplex_point(&mut rng, 7);
        let analytic = objective_gradient(&reference, &w).unwrap();
        let numeric = finite_difference_gradient(&reference, &w, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            gradient_err = gradient_err.max((a - n).abs() / a.abs().max(1.0));
        }
    }
    report(
        &mut outcomes,
        "gradient check",
        gradient_err <= 1e-5,
        format!("20 points, max relative error {gradient_err:.2e}"),
    );

    // Solver unit suite.
    let rho = |prev: f64, mu: f64| update_penalty(&DVector::from_vec(vec![prev]), &DVector::from_vec(vec![mu]))[0];
    let penalty_ok = rho(0.0, 2.0) == 2.0 && rho(10.0, 2.0) == 6.0 && rho(0.0, 0.0) == 0.0;
    let theta_ok = damping_factor(1.0, 0.2) == 1.0 && damping_factor(1.0, 0.5) == 1.0 && damping_factor(1.0, -1.0) == 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pd_ok = true;
    for _ in 0..1000 {
        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let b = a.transpose() * &a + DMatrix::identity(4, 4);
        let s = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let eta = -(&b * &s) * rng.gen_range(0.1..2.0);
        let up = damped_bfgs_update(&b, &s, &eta);
        pd_ok &= ldl_factorize(&up.matrix).is_ok_and(|f| f.d.iter().all(|&d| d > 0.0));
    }
    let f = ldl_factorize(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0])).unwrap();
    let mut ldl_ok = (f.l[(1, 0)] - 0.5).abs() < 1e-15 && (f.d[0] - 4.0).abs() < 1e-15 && (f.d[1] - 2.0).abs() < 1e-15;
    for _ in 0..100 {
        let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let b = a.transpose() * &a + DMatrix::identity(5, 5);
        let rec = ldl_factorize(&b).unwrap().reconstruct();
        ldl_ok &= (rec - &b).amax() <= 1e-10 * b.amax();
    }
    let mut lsei_ok = true;
    for seed in 0..500u64 {
        let n = 1 + (seed % 3) as usize;
        let instance = common::random_lsei_instance(seed, n, (seed / 3 % 5) as usize, (seed / 15 % 2) as usize);
        let (_, v_ref) = common::brute_force_lsei(&instance).unwrap();
        let v = instance.half_squared_residual(&solve_lsei(&instance).unwrap().d);
        lsei_ok &= (v - v_ref).abs() <= 1e-8 * v_ref.max(1.0);
    }
    report(
        &mut outcomes,
        "solver unit suite",
        penalty_ok && theta_ok && pd_ok && ldl_ok && lsei_ok,
        format!("penalty {penalty_ok}, damping {theta_ok}, definiteness {pd_ok}, LDL {ldl_ok}, LSEI vs active sets {lsei_ok}"),
    );

    // Order consistency, observational only.
    let mut violations = Vec::new();
    for seed in 0..100u64 {
        let m = 3 + (seed % 5) as usize;
        let matrix = random_instance(50_000 + seed, 12, m);
        let s = solve_expert_weights(&matrix, &WeightVector::uniform(m), &[], &config).unwrap();
        if !order_consistency_check(&s.weights, &s.distances.expert_distances).consistent {
            violations.push(50_000 + seed);
        }
    }
    report(
        &mut outcomes,
        "order consistency (observational)",
        violations.is_empty(),
        format!("100 instances, violations at seeds {violations:?}"),
    );

    // Uniqueness and strict convexity cannot hold for two experts: there
    // Q(t, 1 − t) = ‖p_1 − p_2‖ for every t. Those failures are expected; any
    // other failed criterion is not.
    assert!(uniqueness_failures.iter().all(|i| i.m == 2 && !unique_minimizer(&i.matrix, DEFAULT_RANK_TOLERANCE)));
    assert!(strict_failures.iter().all(|i| i.m == 2));
    let unexpected: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.passed && !matches!(o.name, "uniqueness" | "convexity" | "order consistency (observational)"))
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(unexpected.is_empty(), "{unexpected:#?}");
    assert!(min_gap >= -1e-9);
}
