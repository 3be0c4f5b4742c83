//! Score data model and the consensus-distance objective.
//!
//! Expert `j` scores indicator `k` of alternative `i` with `a_ij^k`. Stacking
//! each alternative's `n × m` block on top of each other gives the `ns × m`
//! score matrix `S` whose column `p_j` collects everything expert `j` said.
//! For a weight vector `w` on the probability simplex, the consensus point is
//! `b = S·w` and the objective is `Q(w) = Σ_j ‖p_j − b‖₂`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the simplex constraints of a [`WeightVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-10;

/// Residual norms at or below this value contribute nothing to the gradient.
pub const GRADIENT_GUARD: f64 = 1e-12;

/// Default relative cutoff for counting a singular value towards the rank.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("panel must have at least one {0}")]
    EmptyDimension(&'static str),
    #[error("duplicate {kind} label `{label}`")]
    DuplicateLabel { kind: &'static str, label: String },
    #[error("expected {expected} scores, got {actual}")]
    ScoreCount { expected: usize, actual: usize },
    #[error("non-finite score at alternative `{alternative}`, indicator `{indicator}`, expert `{expert}`")]
    NonFinite {
        alternative: String,
        indicator: String,
        expert: String,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("weights are not on the probability simplex: {0}")]
    NotOnSimplex(String),
    #[error("interpolation parameter {0} is outside (0, 1)")]
    LambdaOutOfRange(f64),
}

/// Raw `s × n × m` score tensor with labelled axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePanel {
    alternatives: Vec<String>,
    indicators: Vec<String>,
    experts: Vec<String>,
    // index: (alternative * n + indicator) * m + expert
    scores: Vec<f64>,
}

fn check_labels(kind: &'static str, labels: &[String]) -> Result<(), ModelError> {
    if labels.is_empty() {
        return Err(ModelError::EmptyDimension(kind));
    }
    let mut seen = HashSet::with_capacity(labels.len());
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(ModelError::DuplicateLabel {
                kind,
                label: label.clone(),
            });
        }
    }
    Ok(())
}

impl ScorePanel {
    /// Builds a panel from labels and scores laid out alternative-major,
    /// then indicator, then expert (the row layout of the CSV format).
    pub fn new(
        alternatives: Vec<String>,
        indicators: Vec<String>,
        experts: Vec<String>,
        scores: Vec<f64>,
    ) -> Result<Self, ModelError> {
        check_labels("alternative", &alternatives)?;
        check_labels("indicator", &indicators)?;
        check_labels("expert", &experts)?;
        let expected = alternatives.len() * indicators.len() * experts.len();
        if scores.len() != expected {
            return Err(ModelError::ScoreCount {
                expected,
                actual: scores.len(),
            });
        }
        let panel = ScorePanel {
            alternatives,
            indicators,
            experts,
            scores,
        };
        panel.check_finite()?;
        if panel.scores.iter().any(|&v| v < 0.0) {
            log::warn!("panel contains negative scores");
        }
        Ok(panel)
    }

    /// Panel with generated labels `d1.., u1.., c1..`.
    pub fn from_scores(
        num_alternatives: usize,
        num_indicators: usize,
        num_experts: usize,
        scores: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let labels = |prefix: &str, count: usize| -> Vec<String> {
            (1..=count).map(|i| format!("{prefix}{i}")).collect()
        };
        Self::new(
            labels("d", num_alternatives),
            labels("u", num_indicators),
            labels("c", num_experts),
            scores,
        )
    }

    fn check_finite(&self) -> Result<(), ModelError> {
        let (n, m) = (self.indicators.len(), self.experts.len());
        match self.scores.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(ModelError::NonFinite {
                alternative: self.alternatives[pos / (n * m)].clone(),
                indicator: self.indicators[(pos / m) % n].clone(),
                expert: self.experts[pos % m].clone(),
            }),
        }
    }

    pub fn alternatives(&self) -> &[String] {
        &self.alternatives
    }

    pub fn indicators(&self) -> &[String] {
        &self.indicators
    }

    pub fn experts(&self) -> &[String] {
        &self.experts
    }

    pub fn num_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn num_indicators(&self) -> usize {
        self.indicators.len()
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Score `a_ij^k` given to `alternative` on `indicator` by `expert`.
    pub fn score(&self, alternative: usize, indicator: usize, expert: usize) -> f64 {
        let (n, m) = (self.num_indicators(), self.num_experts());
        self.scores[(alternative * n + indicator) * m + expert]
    }

    /// Flat score buffer in alternative, indicator, expert order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn expert_index(&self, label: &str) -> Option<usize> {
        self.experts.iter().position(|e| e == label)
    }
}

/// The stacked `ns × m` matrix `S = [A^1; …; A^s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    data: DMatrix<f64>,
    block_size: usize,
    num_alternatives: usize,
}

impl ScoreMatrix {
    /// Wraps an existing matrix whose rows form `num_alternatives` blocks
    /// of `block_size` rows each.
    pub fn from_matrix(
        data: DMatrix<f64>,
        block_size: usize,
        num_alternatives: usize,
    ) -> Result<Self, ModelError> {
        if data.ncols() == 0 {
            return Err(ModelError::EmptyDimension("expert"));
        }
        if block_size == 0 || num_alternatives == 0 {
            return Err(ModelError::EmptyDimension("indicator"));
        }
        if data.nrows() != block_size * num_alternatives {
            return Err(ModelError::DimensionMismatch {
                expected: block_size * num_alternatives,
                actual: data.nrows(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                alternative: "?".into(),
                indicator: "?".into(),
                expert: "?".into(),
            });
        }
        Ok(ScoreMatrix {
            data,
            block_size,
            num_alternatives,
        })
    }

    /// A single-block matrix (one alternative, every row an indicator).
    pub fn from_columns_matrix(data: DMatrix<f64>) -> Result<Self, ModelError> {
        let rows = data.nrows();
        Self::from_matrix(data, rows, 1)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_alternatives(&self) -> usize {
        self.num_alternatives
    }

    pub fn num_experts(&self) -> usize {
        self.data.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len != self.num_experts() {
            return Err(ModelError::DimensionMismatch {
                expected: self.num_experts(),
                actual: len,
            });
        }
        Ok(())
    }

    /// `Q(w)` at an arbitrary point of `R^m`; the solver evaluates it along
    /// search directions that may leave the simplex by rounding error.
    pub fn objective_at(&self, w: &[f64]) -> Result<f64, ModelError> {
        self.check_len(w.len())?;
        let b = &self.data * DVector::from_column_slice(w);
        Ok(self
            .data
            .column_iter()
            .map(|p| (p - &b).norm())
            .sum())
    }

    /// `Q(w + step) − Q(w)`, evaluated term by term as
    /// `(‖r_j − t‖² − ‖r_j‖²) / (‖r_j − t‖ + ‖r_j‖)` with `t = S·step`, which
    /// stays accurate when the change is far below the rounding error of `Q`.
    pub fn objective_change_at(&self, w: &[f64], step: &[f64]) -> Result<f64, ModelError> {
        self.check_len(w.len())?;
        self.check_len(step.len())?;
        let b = &self.data * DVector::from_column_slice(w);
        let t = &self.data * DVector::from_column_slice(step);
        let t_sq = t.norm_squared();
        Ok(self
            .data
            .column_iter()
            .map(|p| {
                let r = p - &b;
                let before = r.norm();
                let after = (&r - &t).norm();
                let denom = before + after;
                if denom == 0.0 {
                    0.0
                } else {
                    (t_sq - 2.0 * r.dot(&t)) / denom
                }
            })
            .sum())
    }

    /// Gradient `Σ_j −Sᵀ r_j / ‖r_j‖` with `r_j = p_j − S·w`.
    pub fn gradient_at(&self, w: &[f64]) -> Result<DVector<f64>, ModelError> {
        self.check_len(w.len())?;
        let b = &self.data * DVector::from_column_slice(w);
        let mut direction = DVector::zeros(self.nrows());
        for p in self.data.column_iter() {
            let r = p - &b;
            let norm = r.norm();
            if norm > GRADIENT_GUARD {
                direction.axpy(1.0 / norm, &r, 1.0);
            }
        }
        Ok(-self.data.tr_mul(&direction))
    }
}

/// Stacks the panel into `S` in alternative-major, indicator-minor order.
pub fn build_score_matrix(panel: &ScorePanel) -> Result<ScoreMatrix, ModelError> {
    panel.check_finite()?;
    let (s, n, m) = (
        panel.num_alternatives(),
        panel.num_indicators(),
        panel.num_experts(),
    );
    let data = DMatrix::from_fn(s * n, m, |row, j| panel.score(row / n, row % n, j));
    ScoreMatrix::from_matrix(data, n, s)
}

/// Expert weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::EmptyDimension("expert"));
        }
        if let Some(w) = weights
            .iter()
            .find(|w| !w.is_finite() || **w < -SIMPLEX_TOLERANCE || **w > 1.0 + SIMPLEX_TOLERANCE)
        {
            return Err(ModelError::NotOnSimplex(format!("entry {w} outside [0, 1]")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ModelError::NotOnSimplex(format!("entries sum to {total}")));
        }
        Ok(WeightVector(weights))
    }

    /// Snaps a numerically near-feasible point onto the simplex: clamps to
    /// `[0, 1]` and rescales the sum. The input must already be within
    /// [`SIMPLEX_TOLERANCE`] of feasible after clamping.
    pub fn from_solution(point: &[f64]) -> Result<Self, ModelError> {
        let clamped: Vec<f64> = point.iter().map(|w| w.clamp(0.0, 1.0)).collect();
        let total: f64 = clamped.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > 1e-6 {
            return Err(ModelError::NotOnSimplex(format!("entries sum to {total}")));
        }
        Self::new(clamped.iter().map(|w| w / total).collect())
    }

    pub fn uniform(m: usize) -> Self {
        WeightVector(vec![1.0 / m as f64; m])
    }

    /// All mass on expert `j`.
    pub fn basis(m: usize, j: usize) -> Self {
        let mut w = vec![0.0; m];
        w[j] = 1.0;
        WeightVector(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    /// `λ·self + (1 − λ)·other`.
    pub fn interpolate(&self, other: &WeightVector, lambda: f64) -> Result<WeightVector, ModelError> {
        if self.len() != other.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(WeightVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        ))
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = ModelError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        WeightVector::new(value)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(value: WeightVector) -> Self {
        value.0
    }
}

/// The overall consistent score point `b = S·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusVector {
    values: DVector<f64>,
    block_size: usize,
}

impl ConsensusVector {
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn num_blocks(&self) -> usize {
        self.values.len() / self.block_size
    }

    /// Consistent score point `b^i` of alternative `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.values.as_slice()[i * self.block_size..(i + 1) * self.block_size]
    }
}

pub fn consensus_point(s: &ScoreMatrix, w: &WeightVector) -> Result<ConsensusVector, ModelError> {
    s.check_len(w.len())?;
    Ok(ConsensusVector {
        values: s.data() * w.to_dvector(),
        block_size: s.block_size(),
    })
}

/// Distances between every expert and the consensus, overall and per
/// alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// `s_j = ‖p_j − b‖₂`.
    pub expert_distances: Vec<f64>,
    /// `d_ij = ‖a_ij − b^i‖₂`, indexed `[alternative][expert]`.
    pub per_alt_distances: Vec<Vec<f64>>,
    /// `D_i = Σ_j d_ij`.
    pub per_alt_totals: Vec<f64>,
    /// `Q = Σ_j s_j`.
    pub objective: f64,
}

pub fn distance_report(s: &ScoreMatrix, w: &WeightVector) -> Result<DistanceReport, ModelError> {
    let b = consensus_point(s, w)?;
    let n = s.block_size();
    let m = s.num_experts();
    let mut per_alt_distances = vec![vec![0.0; m]; s.num_alternatives()];
    for (i, row) in per_alt_distances.iter_mut().enumerate() {
        let bi = b.block(i);
        for (j, d) in row.iter_mut().enumerate() {
            *d = (0..n)
                .map(|k| (s.data()[(i * n + k, j)] - bi[k]).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    let expert_distances: Vec<f64> = s
        .data()
        .column_iter()
        .map(|p| (p - b.values()).norm())
        .collect();
    let per_alt_totals = per_alt_distances.iter().map(|row| row.iter().sum()).collect();
    let objective = expert_distances.iter().sum();
    Ok(DistanceReport {
        expert_distances,
        per_alt_distances,
        per_alt_totals,
        objective,
    })
}

/// `Q(w) = Σ_j ‖p_j − S·w‖₂`.
pub fn objective(s: &ScoreMatrix, w: &WeightVector) -> Result<f64, ModelError> {
    s.objective_at(w.as_slice())
}

/// Analytic gradient of `Q`; terms whose residual norm is at most
/// [`GRADIENT_GUARD`] are dropped (a valid subgradient choice).
pub fn objective_gradient(s: &ScoreMatrix, w: &WeightVector) -> Result<DVector<f64>, ModelError> {
    s.gradient_at(w.as_slice())
}

/// `T(λ; w, w′) = λQ(w) + (1 − λ)Q(w′) − Q(λw + (1 − λ)w′)`.
pub fn convexity_gap(
    s: &ScoreMatrix,
    w: &WeightVector,
    w2: &WeightVector,
    lambda: f64,
) -> Result<f64, ModelError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(ModelError::LambdaOutOfRange(lambda));
    }
    let mid = w.interpolate(w2, lambda)?;
    Ok(lambda * objective(s, w)? + (1.0 - lambda) * objective(s, w2)? - objective(s, &mid)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub numerical_rank: usize,
    pub full_column_rank: bool,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub rank_tolerance: f64,
}

/// Numerical column rank of `S`: singular values above
/// `rank_tolerance · σ_max` count.
pub fn rank_diagnostics(s: &ScoreMatrix, rank_tolerance: f64) -> RankDiagnostics {
    let mut singular_values: Vec<f64> = s.data().singular_values().iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let largest = singular_values.first().copied().unwrap_or(0.0);
    let numerical_rank = if largest > 0.0 {
        singular_values
            .iter()
            .filter(|&&sv| sv > rank_tolerance * largest)
            .count()
    } else {
        0
    };
    RankDiagnostics {
        numerical_rank,
        full_column_rank: numerical_rank == s.num_experts(),
        singular_values,
        rank_tolerance,
    }
}

/// Whether `Q` is strictly convex on the simplex, so the minimizer is unique.
///
/// This holds for one expert, never for two (`Q` is constant on the segment
/// between two score points), and for three or more exactly when the
/// columns are affinely independent. Full column rank implies the latter.
pub fn unique_minimizer(s: &ScoreMatrix, rank_tolerance: f64) -> bool {
    let m = s.num_experts();
    match m {
        1 => true,
        2 => false,
        _ => {
            let data = s.data();
            let base = data.column(0);
            let diffs = DMatrix::from_fn(data.nrows(), m - 1, |r, c| data[(r, c + 1)] - base[r]);
            let sv = diffs.singular_values();
            let largest = sv.max();
            largest > 0.0 && sv.iter().filter(|&&v| v > rank_tolerance * largest).count() == m - 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(rng: &mut ChaCha8Rng, s: usize, n: usize, m: usize) -> ScorePanel {
        let scores = (0..s * n * m).map(|_| rng.gen_range(40.0..99.0)).collect();
        ScorePanel::from_scores(s, n, m, scores).unwrap()
    }

    #[test]
    fn identity_panel() {
        let panel = ScorePanel::from_scores(1, 1, 1, vec![42.0]).unwrap();
        let s = build_score_matrix(&panel).unwrap();
        assert_eq!(s.data(), &DMatrix::from_element(1, 1, 42.0));
    }

    #[test]
    fn stacking_matches_index_mapping() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let panel = random_panel(&mut rng, 2, 2, 3);
        let s = build_score_matrix(&panel).unwrap();
        assert_eq!(s.nrows(), 4);
        for j in 0..3 {
            let mut expected = Vec::new();
            for i in 0..2 {
                for k in 0..2 {
                    expected.push(panel.score(i, k, j));
                }
            }
            assert_eq!(s.data().column(j).as_slice(), expected.as_slice());
        }
    }

    #[test]
    fn panel_rejects_bad_input() {
        assert!(matches!(
            ScorePanel::from_scores(1, 1, 2, vec![1.0, f64::NAN]),
            Err(ModelError::NonFinite { .. })
        ));
        assert!(matches!(
            ScorePanel::from_scores(1, 1, 2, vec![1.0]),
            Err(ModelError::ScoreCount { .. })
        ));
        let dup = ScorePanel::new(
            vec!["d1".into()],
            vec!["u1".into()],
            vec!["c1".into(), "c1".into()],
            vec![1.0, 2.0],
        );
        assert!(matches!(dup, Err(ModelError::DuplicateLabel { .. })));
        assert!(matches!(
            ScorePanel::from_scores(0, 1, 1, vec![]),
            Err(ModelError::EmptyDimension(_))
        ));
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.6, 0.5]).is_err());
        assert!(WeightVector::new(vec![1.2, -0.2]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        let snapped = WeightVector::from_solution(&[0.5 + 1e-13, 0.5, -1e-15]).unwrap();
        assert_eq!(snapped.as_slice()[2], 0.0);
    }

    #[test]
    fn basis_weights_reproduce_expert() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = build_score_matrix(&random_panel(&mut rng, 3, 2, 4)).unwrap();
        for j in 0..4 {
            let w = WeightVector::basis(4, j);
            let b = consensus_point(&s, &w).unwrap();
            assert_eq!(b.values(), &s.data().column(j).into_owned());
            let report = distance_report(&s, &w).unwrap();
            assert_eq!(report.expert_distances[j], 0.0);
            for row in &report.per_alt_distances {
                assert_eq!(row[j], 0.0);
            }
        }
    }

    #[test]
    fn identical_columns_have_zero_objective() {
        let col = [3.0, 5.0, 8.0];
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_fn(3, 2, |r, _| col[r])).unwrap();
        let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
        let b = consensus_point(&s, &w).unwrap();
        for (bv, cv) in b.values().iter().zip(col) {
            assert_relative_eq!(*bv, cv, epsilon = 1e-12);
        }
        assert!(objective(&s, &w).unwrap() < 1e-12);
    }

    #[test]
    fn single_expert_is_own_consensus() {
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_column_slice(2, 1, &[4.0, 9.0])).unwrap();
        let w = WeightVector::new(vec![1.0]).unwrap();
        assert_eq!(objective(&s, &w).unwrap(), 0.0);
        assert_eq!(objective_gradient(&s, &w).unwrap(), DVector::zeros(1));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_element(2, 3, 1.0)).unwrap();
        let w = WeightVector::uniform(2);
        assert!(matches!(
            objective(&s, &w),
            Err(ModelError::DimensionMismatch { expected: 3, actual: 2 })
        ));
        assert!(consensus_point(&s, &w).is_err());
        assert!(distance_report(&s, &w).is_err());
        assert!(objective_gradient(&s, &w).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_fn(6, 3, |_, _| rng.gen_range(40.0..99.0)))
            .unwrap();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let g = s.gradient_at(&w).unwrap();
            let h = 1e-6;
            for j in 0..3 {
                let mut up = w.clone();
                let mut down = w.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (s.objective_at(&up).unwrap() - s.objective_at(&down).unwrap()) / (2.0 * h);
                assert!(fd.signum() == g[j].signum() || fd.abs() < 1e-6);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn convexity_gap_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_fn(8, 3, |_, _| rng.gen_range(40.0..99.0)))
            .unwrap();
        let w = WeightVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(convexity_gap(&s, &w, &w, 0.5).unwrap().abs() < 1e-9);
        assert!(matches!(
            convexity_gap(&s, &w, &w, 1.0),
            Err(ModelError::LambdaOutOfRange(_))
        ));
        assert!(convexity_gap(&s, &w, &w, 0.0).is_err());
        let w2 = WeightVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        assert!(convexity_gap(&s, &w, &w2, 0.5).unwrap() > 0.0);
    }

    #[test]
    fn convexity_gap_vanishes_along_duplicate_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(40.0..99.0));
        let data = DMatrix::from_fn(8, 3, |r, c| base[(r, c.min(1))]);
        let s = ScoreMatrix::from_columns_matrix(data).unwrap();
        let w = WeightVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let w2 = WeightVector::new(vec![0.2, 0.1, 0.7]).unwrap();
        assert!(convexity_gap(&s, &w, &w2, 0.5).unwrap().abs() < 1e-9);
    }

    #[test]
    fn rank_of_identity_and_duplicate() {
        let s = ScoreMatrix::from_columns_matrix(DMatrix::identity(3, 3)).unwrap();
        let diag = rank_diagnostics(&s, DEFAULT_RANK_TOLERANCE);
        assert_eq!(diag.numerical_rank, 3);
        assert!(diag.full_column_rank);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = DMatrix::from_fn(30, 7, |_, _| rng.gen_range(40.0..99.0));
        let first = data.column(0).into_owned();
        data.set_column(6, &first);
        let diag = rank_diagnostics(&ScoreMatrix::from_matrix(data, 6, 5).unwrap(), DEFAULT_RANK_TOLERANCE);
        assert!(diag.numerical_rank <= 6);
        assert!(!diag.full_column_rank);
        assert_eq!(diag.singular_values.len(), 7);
    }

    #[test]
    fn objective_change_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_fn(8, 4, |_, _| rng.gen_range(40.0..99.0))).unwrap();
        let w = [0.1, 0.2, 0.3, 0.4];
        let step = [0.05, -0.02, 0.01, -0.04];
        let direct = s.objective_at(&[0.15, 0.18, 0.31, 0.36]).unwrap() - s.objective_at(&w).unwrap();
        assert_relative_eq!(s.objective_change_at(&w, &step).unwrap(), direct, max_relative = 1e-9);

        // A step far below the rounding error of Q still has the right sign
        // and size: compare against the first-order change.
        let tiny = [1e-13, -1e-13, 0.0, 0.0];
        let g = s.gradient_at(&w).unwrap();
        let first_order = g[0] * 1e-13 - g[1] * 1e-13;
        assert_relative_eq!(s.objective_change_at(&w, &tiny).unwrap(), first_order, max_relative = 1e-6);
        assert_eq!(s.objective_change_at(&w, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn uniqueness_needs_affine_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let random = |rng: &mut ChaCha8Rng, cols| {
            ScoreMatrix::from_columns_matrix(DMatrix::from_fn(6, cols, |_, _| rng.gen_range(40.0..99.0))).unwrap()
        };
        assert!(unique_minimizer(&random(&mut rng, 1), DEFAULT_RANK_TOLERANCE));
        assert!(!unique_minimizer(&random(&mut rng, 2), DEFAULT_RANK_TOLERANCE));
        assert!(unique_minimizer(&random(&mut rng, 4), DEFAULT_RANK_TOLERANCE));

        // p3 = p1 + p2 is linearly dependent but not affinely dependent.
        let mut data = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(40.0..99.0));
        let sum = data.column(0) + data.column(1);
        data.set_column(2, &sum);
        let s = ScoreMatrix::from_columns_matrix(data).unwrap();
        assert!(!rank_diagnostics(&s, DEFAULT_RANK_TOLERANCE).full_column_rank);
        assert!(unique_minimizer(&s, DEFAULT_RANK_TOLERANCE));

        // Collinear score points.
        let p = DVector::from_fn(6, |_, _| rng.gen_range(40.0..99.0));
        let q = DVector::from_fn(6, |_, _| rng.gen_range(40.0..99.0));
        let cols = [p.clone(), q.clone(), &p * 0.3 + &q * 0.7];
        let s = ScoreMatrix::from_columns_matrix(DMatrix::from_columns(&cols)).unwrap();
        assert!(!unique_minimizer(&s, DEFAULT_RANK_TOLERANCE));
    }

    #[test]
    fn block_norms_decompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = build_score_matrix(&random_panel(&mut rng, 4, 3, 5)).unwrap();
        let w = WeightVector::new(vec![0.1, 0.2, 0.3, 0.15, 0.25]).unwrap();
        let report = distance_report(&s, &w).unwrap();
        for j in 0..5 {
            let blocks: f64 = report.per_alt_distances.iter().map(|r| r[j] * r[j]).sum();
            assert_relative_eq!(report.expert_distances[j].powi(2), blocks, max_relative = 1e-9);
        }
        let total: f64 = report.expert_distances.iter().sum();
        assert_relative_eq!(report.objective, total, max_relative = 1e-9);
        assert_relative_eq!(objective(&s, &w).unwrap(), report.objective, max_relative = 1e-9);
    }
}
