use nalgebra::{DMatrix, DVector};

use super::ldl::ldl_factorize;

/// Result of one damped BFGS step.
#[derive(Debug, Clone, PartialEq)]
pub struct DampedUpdate {
    pub matrix: DMatrix<f64>,
    /// Blending factor between `η` and `B s`; 1 means a plain BFGS update.
    pub theta: f64,
    /// The update could not be applied and `B` was replaced by the identity.
    pub reset: bool,
    /// `sᵀq` for the damped vector `q`.
    pub s_q: f64,
    /// `sᵀBs` for the matrix before the update.
    pub s_b_s: f64,
}

/// Damping factor `θ`: 1 when `sᵀη ≥ 0.2·sᵀBs`, otherwise
/// `0.8·sᵀBs / (sᵀBs − sᵀη)`.
pub fn damping_factor(s_b_s: f64, s_eta: f64) -> f64 {
    if s_eta >= 0.2 * s_b_s {
        return 1.0;
    }
    let denom = s_b_s - s_eta;
    if denom == 0.0 {
        return 1.0;
    }
    0.8 * s_b_s / denom
}

/// Damped BFGS update
///
/// ```text
///     q = θη + (1 − θ)Bs
///     B⁺ = B + qqᵀ/(qᵀs) − Bs sᵀB/(sᵀBs)
/// ```
///
/// which keeps `sᵀq ≥ 0.2·sᵀBs` and therefore `B⁺` positive definite. If
/// rounding on a tiny step loses definiteness anyway, `B` is reset.
pub fn damped_bfgs_update(b: &DMatrix<f64>, s: &DVector<f64>, eta: &DVector<f64>) -> DampedUpdate {
    let n = b.nrows();
    let bs = b * s;
    let s_b_s = s.dot(&bs);
    let identity = |s_q| DampedUpdate {
        matrix: DMatrix::identity(n, n),
        theta: 1.0,
        reset: true,
        s_q,
        s_b_s,
    };
    if !(s_b_s > 0.0 && s_b_s.is_finite()) {
        return identity(s.dot(eta));
    }
    let s_eta = s.dot(eta);
    let theta = damping_factor(s_b_s, s_eta);
    let q = eta * theta + &bs * (1.0 - theta);
    let q_s = q.dot(s);
    if q_s.is_nan() || q_s <= 0.0 {
        return identity(q_s);
    }
    let mut updated = b + &q * q.transpose() / q_s - &bs * bs.transpose() / s_b_s;
    // Symmetrize to stop rounding drift from accumulating.
    updated = (&updated + updated.transpose()) * 0.5;
    let positive = ldl_factorize(&updated).is_ok_and(|f| f.d.iter().all(|&p| p > 0.0));
    if updated.iter().any(|v| !v.is_finite()) || !positive {
        return identity(q_s);
    }
    DampedUpdate {
        matrix: updated,
        theta,
        reset: false,
        s_q: q_s,
        s_b_s,
    }
}
