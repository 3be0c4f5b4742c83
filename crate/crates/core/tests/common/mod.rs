use consensus_weights::lsq::LseiInstance;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes `‖Ed − f‖²` subject to `C d = h` through the KKT system, or
/// `None` when the active rows are inconsistent.
fn equality_constrained_ls(e: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>, h: &DVector<f64>) -> Option<DVector<f64>> {
    let n = e.ncols();
    let k = c.nrows();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(e.transpose() * e));
    kkt.view_mut((0, n), (n, k)).copy_from(&c.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(c);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(e.transpose() * f));
    rhs.rows_mut(n, k).copy_from(h);
    let sol = kkt.svd(true, true).solve(&rhs, 1e-11).ok()?;
    let d = sol.rows(0, n).into_owned();
    ((c * &d - h).amax() <= 1e-8).then_some(d)
}

/// Exhaustive active-set enumeration for `min ‖Ed − f‖ s.t. A_eq d = b_eq, G d ≥ h`.
pub fn brute_force_lsei(instance: &LseiInstance) -> Option<(DVector<f64>, f64)> {
    let n = instance.num_variables();
    let k = instance.ineq_matrix.nrows();
    let me = instance.eq_matrix.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let mut c = DMatrix::zeros(me + active.len(), n);
        let mut h = DVector::zeros(me + active.len());
        c.rows_mut(0, me).copy_from(&instance.eq_matrix);
        h.rows_mut(0, me).copy_from(&instance.eq_rhs);
        for (r, &i) in active.iter().enumerate() {
            c.row_mut(me + r).copy_from(&instance.ineq_matrix.row(i));
            h[me + r] = instance.ineq_rhs[i];
        }
        let Some(d) = equality_constrained_ls(&instance.design, &instance.target, &c, &h) else {
            continue;
        };
        if (&instance.ineq_matrix * &d - &instance.ineq_rhs).min() < -1e-9 {
            continue;
        }
        let value = instance.half_squared_residual(&d);
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((d, value));
        }
    }
    best
}

/// Feasible LSEI instance with `n` variables, `k` inequalities and at most
/// `me` equalities (fewer than `n`).
pub fn random_lsei_instance(seed: u64, n: usize, k: usize, me: usize) -> LseiInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let rows = n + 1;
    let design = DMatrix::from_fn(rows, n, |_, _| uniform(-2.0, 2.0));
    let target = DVector::from_fn(rows, |_, _| uniform(-3.0, 3.0));
    let anchor = DVector::from_fn(n, |_, _| uniform(-1.0, 1.0));
    let me = me.min(n - 1);
    let eq = DMatrix::from_fn(me, n, |_, _| uniform(-1.0, 1.0));
    let eq_rhs = &eq * &anchor;
    let g = DMatrix::from_fn(k, n, |_, _| uniform(-1.0, 1.0));
    let slack = DVector::from_fn(k, |_, _| uniform(0.0, 0.5));
    let h = &g * &anchor - slack;
    LseiInstance::new(design, target)
        .with_equalities(eq, eq_rhs)
        .with_inequalities(g, h)
}
