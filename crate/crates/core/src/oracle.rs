//! Reference machinery for checking the solver.
//!
//! Everything here works on plain row-major buffers with its own objective
//! evaluation so it does not share code paths with the production solver.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ScoreMatrix, WeightVector};

/// Largest number of grid points [`brute_force_minimize`] will visit.
pub const MAX_GRID_POINTS: u128 = 10_000_000;

/// Range of the uniform score distribution used by [`random_instance`].
pub const RANDOM_SCORE_RANGE: (f64, f64) = (40.0, 99.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid with resolution {resolution} over {dimension} experts has {points} points (limit {MAX_GRID_POINTS})")]
    GridTooLarge {
        resolution: usize,
        dimension: usize,
        points: u128,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
}

/// Column-major copy of `S` with a straight-line objective.
#[derive(Debug, Clone)]
pub struct DenseScores {
    rows: usize,
    columns: Vec<Vec<f64>>,
}

impl DenseScores {
    pub fn new(matrix: &ScoreMatrix) -> Self {
        let data = matrix.data();
        DenseScores {
            rows: data.nrows(),
            columns: (0..data.ncols())
                .map(|j| (0..data.nrows()).map(|i| data[(i, j)]).collect())
                .collect(),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.columns.len()
    }

    /// `Σ_j ‖p_j − Σ_k w_k p_k‖₂`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let mut consensus = vec![0.0; self.rows];
        for (col, &wk) in self.columns.iter().zip(w) {
            for (c, v) in consensus.iter_mut().zip(col) {
                *c += wk * v;
            }
        }
        self.columns
            .iter()
            .map(|col| {
                col.iter()
                    .zip(&consensus)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }

    /// A subgradient of the objective; zero residuals contribute nothing.
    fn subgradient(&self, w: &[f64]) -> Vec<f64> {
        let mut consensus = vec![0.0; self.rows];
        for (col, &wk) in self.columns.iter().zip(w) {
            for (c, v) in consensus.iter_mut().zip(col) {
                *c += wk * v;
            }
        }
        let mut direction = vec![0.0; self.rows];
        for col in &self.columns {
            let r: Vec<f64> = col.iter().zip(&consensus).map(|(a, b)| a - b).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (d, v) in direction.iter_mut().zip(&r) {
                    *d += v / norm;
                }
            }
        }
        self.columns
            .iter()
            .map(|col| -col.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

/// Weights restricted to multiples of `1 / resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexGrid {
    pub resolution: usize,
    pub dimension: usize,
}

impl SimplexGrid {
    pub fn new(resolution: usize, dimension: usize) -> Result<Self, OracleError> {
        if resolution == 0 {
            return Err(OracleError::InvalidGrid("resolution must be at least 1"));
        }
        if dimension == 0 {
            return Err(OracleError::InvalidGrid("dimension must be at least 1"));
        }
        Ok(SimplexGrid { resolution, dimension })
    }

    /// `C(g + m − 1, m − 1)`.
    pub fn num_points(&self) -> u128 {
        let (g, m) = (self.resolution as u128, self.dimension as u128);
        let mut count: u128 = 1;
        for i in 1..m {
            count = count * (g + i) / i;
            if count > u64::MAX as u128 {
                return count;
            }
        }
        count
    }

    /// Largest resolution not above `max_resolution` whose grid fits in
    /// [`MAX_GRID_POINTS`].
    pub fn largest_within_budget(max_resolution: usize, dimension: usize) -> Option<Self> {
        (1..=max_resolution)
            .rev()
            .map(|g| SimplexGrid {
                resolution: g,
                dimension,
            })
            .find(|grid| grid.num_points() <= MAX_GRID_POINTS)
    }

    /// Visits every grid point, first coordinate descending from `g`.
    fn for_each(&self, mut visit: impl FnMut(&[usize])) {
        let m = self.dimension;
        let g = self.resolution;
        let mut counts = vec![0usize; m];
        counts[0] = g;
        loop {
            visit(&counts);
            if m == 1 {
                return;
            }
            // Next composition in reverse-lexicographic order: move one unit
            // from the rightmost nonzero non-final slot one place to the right
            // and pull everything after it back.
            let tail = counts[m - 1];
            counts[m - 1] = 0;
            let Some(pivot) = (0..m - 1).rev().find(|&i| counts[i] > 0) else {
                return;
            };
            counts[pivot] -= 1;
            counts[pivot + 1] = tail + 1;
        }
    }
}

/// Exhaustive minimum of the objective over the grid. Ties keep the first
/// point visited, which puts the most weight on the lowest-indexed experts.
pub fn brute_force_minimize(matrix: &ScoreMatrix, grid: SimplexGrid) -> Result<(WeightVector, f64), OracleError> {
    if grid.dimension != matrix.num_experts() {
        return Err(OracleError::InvalidGrid("grid dimension differs from expert count"));
    }
    let points = grid.num_points();
    if points > MAX_GRID_POINTS {
        return Err(OracleError::GridTooLarge {
            resolution: grid.resolution,
            dimension: grid.dimension,
            points,
        });
    }
    let scores = DenseScores::new(matrix);
    let scale = 1.0 / grid.resolution as f64;
    let mut w = vec![0.0; grid.dimension];
    let mut best = (Vec::new(), f64::INFINITY);
    grid.for_each(|counts| {
        for (wi, &c) in w.iter_mut().zip(counts) {
            *wi = c as f64 * scale;
        }
        let q = scores.objective(&w);
        if q < best.1 - 1e-12 * (1.0 + best.1.abs()) || best.0.is_empty() {
            best = (w.clone(), q);
        }
    });
    let weights = WeightVector::new(best.0).expect("grid points lie on the simplex");
    Ok((weights, best.1))
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        }
    }
    v.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

/// Step rule for [`projected_subgradient_minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `scale / √k` along the normalized subgradient.
    InverseSqrt { scale: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::InverseSqrt { scale: 0.1 }
    }
}

impl StepRule {
    fn step(&self, k: usize) -> f64 {
        match *self {
            StepRule::InverseSqrt { scale } => scale / (k as f64).sqrt(),
        }
    }
}

/// Projected subgradient descent from the uniform weights, returning the
/// best iterate seen.
pub fn projected_subgradient_minimize(matrix: &ScoreMatrix, steps: usize, rule: StepRule) -> (WeightVector, f64) {
    let scores = DenseScores::new(matrix);
    let m = scores.num_experts();
    let mut w = vec![1.0 / m as f64; m];
    let mut best = (w.clone(), scores.objective(&w));
    if m == 1 {
        return (WeightVector::new(vec![1.0]).expect("unit weight"), best.1);
    }
    for k in 1..=steps {
        let g = scores.subgradient(&w);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let t = rule.step(k) / norm;
        let moved: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - t * gi).collect();
        w = project_to_simplex(&moved);
        let q = scores.objective(&w);
        if q < best.1 {
            best = (w.clone(), q);
        }
    }
    let weights = WeightVector::from_solution(&best.0).expect("projection lies on the simplex");
    (weights, best.1)
}

/// Central differences `(F(w + h e_j) − F(w − h e_j)) / 2h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut point = w.to_vec();
    (0..w.len())
        .map(|j| {
            point[j] = w[j] + h;
            let up = f(&point);
            point[j] = w[j] - h;
            let down = f(&point);
            point[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of the objective at `w`.
pub fn finite_difference_gradient(matrix: &ScoreMatrix, w: &WeightVector, h: f64) -> Vec<f64> {
    let scores = DenseScores::new(matrix);
    central_difference(|x| scores.objective(x), w.as_slice(), h)
}

/// Expert indices sorted by `key`, ties by index.
fn order_by(values: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    idx
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderConsistency {
    pub consistent: bool,
    /// Experts by decreasing weight.
    pub weight_order: Vec<usize>,
    /// Experts by increasing distance.
    pub distance_order: Vec<usize>,
}

/// Whether heavier weights go exactly with smaller distances.
pub fn order_consistency_check(weights: &WeightVector, distances: &[f64]) -> OrderConsistency {
    assert_eq!(weights.len(), distances.len(), "weights and distances differ in length");
    let weight_order = order_by(weights.as_slice(), true);
    let distance_order = order_by(distances, false);
    OrderConsistency {
        consistent: weight_order == distance_order,
        weight_order,
        distance_order,
    }
}

/// Seeded random `rows × experts` score matrix, entries uniform on
/// [`RANDOM_SCORE_RANGE`].
pub fn random_instance(seed: u64, rows: usize, experts: usize) -> ScoreMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = RANDOM_SCORE_RANGE;
    let data = DMatrix::from_fn(rows, experts, |_, _| rng.gen_range(lo..hi));
    ScoreMatrix::from_columns_matrix(data).expect("random instance is well formed")
}

/// Seeded random point on the simplex (normalized exponentials).
pub fn random_simplex_point(rng: &mut impl Rng, m: usize) -> WeightVector {
    let raw: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    WeightVector::from_solution(&raw.iter().map(|v| v / total).collect::<Vec<_>>()).expect("normalized")
}
