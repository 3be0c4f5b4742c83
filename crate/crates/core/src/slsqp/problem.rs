use nalgebra::{DMatrix, DVector};

/// A smooth nonlinear program
///
/// ```text
///     min f(x)   s.t.   g_j(x) = 0  (j < m_e),   g_j(x) ≥ 0  (j ≥ m_e)
/// ```
///
/// Implementations must be pure: repeated evaluation at the same point
/// returns the same values.
pub trait NlpProblem {
    fn dimension(&self) -> usize;

    /// Number of leading constraints that are equalities.
    fn num_equalities(&self) -> usize;

    fn num_constraints(&self) -> usize;

    fn objective(&self, x: &[f64]) -> f64;

    /// `f(x + step) − f(x)`. Override when the difference can be formed
    /// more accurately than by subtracting two objective values.
    fn objective_change(&self, x: &[f64], step: &[f64]) -> f64 {
        let moved: Vec<f64> = x.iter().zip(step).map(|(a, b)| a + b).collect();
        self.objective(&moved) - self.objective(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64>;

    /// All constraint values, equalities first.
    fn constraints(&self, x: &[f64]) -> DVector<f64>;

    /// Constraint Jacobian; row `j` is `∇g_j(x)ᵀ`.
    fn constraint_jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `g(x) = 0`
    Equality,
    /// `g(x) ≥ 0`
    Inequality,
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

pub struct Constraint {
    pub kind: ConstraintKind,
    value: ScalarFn,
    gradient: VectorFn,
}

impl Constraint {
    pub fn new(
        kind: ConstraintKind,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Constraint {
            kind,
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }

    /// `aᵀx − b` with the given kind.
    pub fn linear(kind: ConstraintKind, a: Vec<f64>, b: f64) -> Self {
        let grad = DVector::from_vec(a.clone());
        Constraint::new(
            kind,
            move |x| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() - b,
            move |_| grad.clone(),
        )
    }
}

/// [`NlpProblem`] assembled from closures.
pub struct ClosureProblem {
    dimension: usize,
    objective: ScalarFn,
    gradient: VectorFn,
    equalities: Vec<Constraint>,
    inequalities: Vec<Constraint>,
}

impl ClosureProblem {
    pub fn new(
        dimension: usize,
        objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        ClosureProblem {
            dimension,
            objective: Box::new(objective),
            gradient: Box::new(gradient),
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        match constraint.kind {
            ConstraintKind::Equality => self.equalities.push(constraint),
            ConstraintKind::Inequality => self.inequalities.push(constraint),
        }
        self
    }

    fn ordered(&self) -> impl Iterator<Item = &Constraint> {
        self.equalities.iter().chain(&self.inequalities)
    }
}

impl NlpProblem for ClosureProblem {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    fn num_constraints(&self) -> usize {
        self.equalities.len() + self.inequalities.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        (self.objective)(x)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        (self.gradient)(x)
    }

    fn constraints(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.num_constraints(), self.ordered().map(|c| (c.value)(x)))
    }

    fn constraint_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.num_constraints(), self.dimension);
        for (row, c) in self.ordered().enumerate() {
            jac.row_mut(row).copy_from(&(c.gradient)(x).transpose());
        }
        jac
    }
}
