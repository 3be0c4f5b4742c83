use nalgebra::{DMatrix, DVector};

use super::SolveError;

/// `B = L·D·Lᵀ` with `L` unit lower triangular and `D` positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Ldl {
    pub l: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Ldl {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * DMatrix::from_diagonal(&self.d) * self.l.transpose()
    }
}

/// Factorizes a symmetric matrix, reading only its lower triangle.
///
/// Fails with [`SolveError::NotPositiveDefinite`] when a pivot is not
/// positive (relative to the largest diagonal entry) or not finite.
pub fn ldl_factorize(b: &DMatrix<f64>) -> Result<Ldl, SolveError> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(SolveError::DimensionMismatch {
            expected: n,
            actual: b.ncols(),
        });
    }
    let scale = (0..n).map(|i| b[(i, i)].abs()).fold(0.0, f64::max);
    let floor = scale * f64::EPSILON;
    let mut l = DMatrix::identity(n, n);
    let mut d = DVector::zeros(n);
    for j in 0..n {
        let mut pivot = b[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(pivot.is_finite() && pivot > floor) {
            return Err(SolveError::NotPositiveDefinite { pivot: j, value: pivot });
        }
        d[j] = pivot;
        for i in j + 1..n {
            let mut v = b[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / pivot;
        }
    }
    Ok(Ldl { l, d })
}
