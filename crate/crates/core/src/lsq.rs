//! Linear least squares with linear equality and inequality constraints.
//!
//! ```text
//!     min ‖E d − f‖₂   s.t.   A_eq d = b_eq,   A_in d ≥ b_in
//! ```
//!
//! Equalities are removed by an orthogonal (SVD) reduction onto their null
//! space. The remaining inequality-constrained problem is turned into a
//! least-distance program through a QR factorization of the reduced design,
//! and that program is solved as a non-negative least-squares problem with
//! an active-set method.
//!
//! Multipliers follow the convention of the Lagrangian
//! `½‖Ed − f‖² − μ_eqᵀ(A_eq d − b_eq) − μ_inᵀ(A_in d − b_in)`, so
//! `Eᵀ(Ed − f) = A_eqᵀ μ_eq + A_inᵀ μ_in` and `μ_in ≥ 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LseiError {
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(&'static str),
    #[error("constraints are inconsistent")]
    Infeasible,
    #[error("design matrix is rank deficient on the equality null space")]
    RankDeficient,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LseiInstance {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl LseiInstance {
    /// Unconstrained instance; add constraints with the `with_*` builders.
    pub fn new(design: DMatrix<f64>, target: DVector<f64>) -> Self {
        let n = design.ncols();
        LseiInstance {
            design,
            target,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        self
    }

    pub fn num_variables(&self) -> usize {
        self.design.ncols()
    }

    fn validate(&self) -> Result<(), LseiError> {
        let n = self.num_variables();
        if self.design.nrows() != self.target.len() {
            return Err(LseiError::DimensionMismatch("design/target"));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(LseiError::DimensionMismatch("equality constraints"));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(LseiError::DimensionMismatch("inequality constraints"));
        }
        Ok(())
    }

    /// `½‖Ed − f‖²`.
    pub fn half_squared_residual(&self, d: &DVector<f64>) -> f64 {
        0.5 * (&self.design * d - &self.target).norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LseiSolution {
    pub d: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    /// Inequalities satisfied with equality at `d`.
    pub active_set: Vec<usize>,
}

impl LseiSolution {
    /// Equality multipliers followed by inequality multipliers.
    pub fn multipliers(&self) -> DVector<f64> {
        let mut all = DVector::zeros(self.eq_multipliers.len() + self.ineq_multipliers.len());
        all.rows_mut(0, self.eq_multipliers.len())
            .copy_from(&self.eq_multipliers);
        all.rows_mut(self.eq_multipliers.len(), self.ineq_multipliers.len())
            .copy_from(&self.ineq_multipliers);
        all
    }
}

struct EqualityReduction {
    particular: DVector<f64>,
    null_basis: DMatrix<f64>,
    // Full SVD pieces of the zero-padded equality matrix, for recovering
    // equality multipliers.
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    singular_values: Vec<f64>,
    kept: Vec<usize>,
}

fn reduce_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<EqualityReduction, LseiError> {
    let (me, n) = a.shape();
    // Padding to at least n rows makes the SVD return a full n × n V.
    let rows = me.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, me).copy_from(a);
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v requested").transpose();
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let largest = singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = largest * 1e-12 * rows.max(1) as f64;

    let kept: Vec<usize> = (0..n)
        .filter(|&i| largest > 0.0 && singular_values[i] > cutoff)
        .collect();
    let mut padded_rhs = DVector::zeros(rows);
    padded_rhs.rows_mut(0, me).copy_from(b);

    let mut particular = DVector::zeros(n);
    for &i in &kept {
        let coef = u.column(i).dot(&padded_rhs) / singular_values[i];
        particular.axpy(coef, &v.column(i), 1.0);
    }
    let residual = (a * &particular - b).norm();
    let scale = 1.0 + b.norm() + largest * particular.norm();
    if residual > 1e-9 * scale {
        return Err(LseiError::Infeasible);
    }

    let null: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();
    let null_basis = DMatrix::from_fn(n, null.len(), |r, c| v[(r, null[c])]);
    Ok(EqualityReduction {
        particular,
        null_basis,
        u,
        v,
        singular_values,
        kept,
    })
}

impl EqualityReduction {
    /// Minimum-norm `μ` with `A_eqᵀ μ ≈ rhs`.
    fn multipliers(&self, me: usize, rhs: &DVector<f64>) -> DVector<f64> {
        let mut mu = DVector::zeros(self.u.nrows());
        for &i in &self.kept {
            let coef = self.v.column(i).dot(rhs) / self.singular_values[i];
            mu.axpy(coef, &self.u.column(i), 1.0);
        }
        mu.rows(0, me).into_owned()
    }
}

/// Solves the constrained least-squares instance.
pub fn solve_lsei(instance: &LseiInstance) -> Result<LseiSolution, LseiError> {
    instance.validate()?;
    let n = instance.num_variables();
    let me = instance.eq_matrix.nrows();
    let e = &instance.design;

    let reduction = reduce_equalities(&instance.eq_matrix, &instance.eq_rhs)?;
    let d0 = &reduction.particular;
    let z_basis = &reduction.null_basis;

    let g_mat = e * z_basis;
    let h_vec = &instance.target - e * d0;
    let c_mat = &instance.ineq_matrix * z_basis;
    let e_vec = &instance.ineq_rhs - &instance.ineq_matrix * d0;

    let (y, lambda) = solve_lsi(&g_mat, &h_vec, &c_mat, &e_vec)?;
    let d = d0 + z_basis * &y;

    let gradient = e.tr_mul(&(e * &d - &instance.target));
    let rhs = &gradient - instance.ineq_matrix.tr_mul(&lambda);
    let eq_multipliers = reduction.multipliers(me, &rhs);

    let slack = &instance.ineq_matrix * &d - &instance.ineq_rhs;
    let active_set = (0..slack.len())
        .filter(|&i| {
            let scale = 1.0 + instance.ineq_rhs[i].abs() + instance.ineq_matrix.row(i).norm() * d.norm();
            slack[i].abs() <= 1e-9 * scale
        })
        .collect();
    debug_assert_eq!(d.len(), n);

    Ok(LseiSolution {
        d,
        eq_multipliers,
        ineq_multipliers: lambda,
        active_set,
    })
}

/// `min ‖G y − h‖ s.t. C y ≥ e` for `G` with full column rank. Returns the
/// minimizer and the inequality multipliers.
fn solve_lsi(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    c: &DMatrix<f64>,
    e: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), LseiError> {
    let k = g.ncols();
    let p = c.nrows();
    if k == 0 {
        // The equalities pin the point; only feasibility is left to check.
        let scale = 1.0 + e.amax();
        if e.iter().any(|&v| v > 1e-9 * scale) {
            return Err(LseiError::Infeasible);
        }
        return Ok((DVector::zeros(0), DVector::zeros(p)));
    }
    if g.nrows() < k {
        return Err(LseiError::RankDeficient);
    }
    let qr = g.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * diag_max) {
        return Err(LseiError::RankDeficient);
    }
    let qth = q.tr_mul(h);
    // H = C R⁻¹, computed as (R⁻ᵀ Cᵀ)ᵀ.
    let h_mat = r
        .tr_solve_upper_triangular(&c.transpose())
        .ok_or(LseiError::RankDeficient)?
        .transpose();
    let g_vec = e - &h_mat * &qth;

    let (z, lambda) = solve_ldp(&h_mat, &g_vec)?;
    let y = r
        .solve_upper_triangular(&(z + qth))
        .ok_or(LseiError::RankDeficient)?;
    Ok((y, lambda))
}

/// Least-distance program `min ½‖z‖² s.t. H z ≥ g`, via the NNLS dual.
/// Returns `z` and multipliers `λ ≥ 0` with `z = Hᵀλ`.
pub fn solve_ldp(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), LseiError> {
    let (p, k) = h.shape();
    if g.len() != p {
        return Err(LseiError::DimensionMismatch("ldp"));
    }
    if p == 0 {
        return Ok((DVector::zeros(k), DVector::zeros(0)));
    }
    let mut a = DMatrix::zeros(k + 1, p);
    a.rows_mut(0, k).copy_from(&h.transpose());
    a.row_mut(k).copy_from(&g.transpose());
    let mut b = DVector::zeros(k + 1);
    b[k] = 1.0;
    let u = nnls(&a, &b)?.x;
    let denom = 1.0 - g.dot(&u);
    // A zero residual means no point satisfies the constraints.
    if denom <= 1e-12 {
        return Err(LseiError::Infeasible);
    }
    let lambda = u / denom;
    let z = h.tr_mul(&lambda);
    Ok((z, lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    /// `Aᵀ(b − Ax)`; non-positive off the passive set at optimality.
    pub dual: DVector<f64>,
    pub passive_set: Vec<usize>,
}

/// Non-negative least squares `min ‖A x − b‖ s.t. x ≥ 0`.
///
/// Active-set method with smallest-index selection: the entering column is
/// the lowest-indexed one with a positive dual, and the passive set is kept
/// linearly independent.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution, LseiError> {
    let (rows, n) = a.shape();
    if b.len() != rows {
        return Err(LseiError::DimensionMismatch("nnls"));
    }
    let scale = a.norm() * b.norm();
    let dual_tol = 1e-12 * scale.max(1e-300);
    let max_iterations = 10 * (n + 1) + 50;

    let mut x = DVector::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let mut excluded = vec![false; n];
    let mut iterations = 0;

    loop {
        let dual = a.tr_mul(&(b - a * &x));
        let entering = (0..n).find(|&j| !passive.contains(&j) && !excluded[j] && dual[j] > dual_tol);
        let Some(t) = entering else { break };

        if !extends_rank(a, &passive, t) {
            excluded[t] = true;
            continue;
        }
        passive.push(t);
        passive.sort_unstable();

        let mut first_pass = true;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(LseiError::IterationLimit);
            }
            let z = passive_solve(a, b, &passive)?;
            if first_pass {
                first_pass = false;
                let pos = passive.iter().position(|&j| j == t).expect("t is passive");
                if z[pos] <= 0.0 {
                    // The new column cannot carry positive mass; try another.
                    passive.retain(|&j| j != t);
                    excluded[t] = true;
                    break;
                }
            }
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (pos, &j) in passive.iter().enumerate() {
                    x[j] = z[pos];
                }
                excluded.iter_mut().for_each(|e| *e = false);
                break;
            }
            // Step towards z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for (pos, &j) in passive.iter().enumerate() {
                if z[pos] <= 0.0 {
                    let ratio = x[j] / (x[j] - z[pos]);
                    if ratio < alpha {
                        alpha = ratio;
                    }
                }
            }
            for (pos, &j) in passive.iter().enumerate() {
                x[j] += alpha * (z[pos] - x[j]);
            }
            let x_ref = &x;
            let zero_tol = 1e-14 * (1.0 + x_ref.amax());
            let leaving: Vec<usize> = passive
                .iter()
                .copied()
                .filter(|&j| x_ref[j] <= zero_tol)
                .collect();
            for j in leaving {
                x[j] = 0.0;
                passive.retain(|&p| p != j);
            }
            excluded.iter_mut().for_each(|e| *e = false);
            if passive.is_empty() {
                break;
            }
        }
    }

    let residual = b - a * &x;
    Ok(NnlsSolution {
        residual_norm: residual.norm(),
        dual: a.tr_mul(&residual),
        x,
        passive_set: passive,
    })
}

fn columns(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])])
}

/// Whether column `t` is linearly independent of the passive columns.
fn extends_rank(a: &DMatrix<f64>, passive: &[usize], t: usize) -> bool {
    let col = a.column(t).into_owned();
    let col_norm = col.norm();
    if col_norm == 0.0 {
        return false;
    }
    if passive.len() >= a.nrows() {
        return false;
    }
    if passive.is_empty() {
        return true;
    }
    let basis = columns(a, passive);
    let q = basis.qr().q();
    let projected = &q * q.tr_mul(&col);
    (col - projected).norm() > 1e-10 * col_norm
}

fn passive_solve(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> Result<DVector<f64>, LseiError> {
    let qr = columns(a, passive).qr();
    let rhs = qr.q().tr_mul(b);
    qr.r().solve_upper_triangular(&rhs).ok_or(LseiError::RankDeficient)
}
