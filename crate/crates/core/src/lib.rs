//! Expert weights for multi-attribute group decision making.
//!
//! Each expert's scores across all alternatives and indicators form a point;
//! the weights are the convex combination whose consensus point minimizes
//! the summed Euclidean distance to all experts. The minimization runs on a
//! self-contained SLSQP solver ([`slsqp`]) whose quadratic subproblems are
//! handled by a constrained least-squares routine ([`lsq`]). The [`oracle`]
//! module holds independent reference solvers used for verification.

pub mod cli;
pub mod lsq;
pub mod model;
pub mod oracle;
pub mod slsqp;
pub mod weights;

pub use model::{
    build_score_matrix, consensus_point, convexity_gap, distance_report, objective, objective_gradient,
    rank_diagnostics, unique_minimizer, ConsensusVector, DistanceReport, ModelError, RankDiagnostics, ScoreMatrix, ScorePanel,
    WeightVector,
};
pub use weights::{solve_expert_weights, ExpertWeightProblem, LinearConstraint, WeightError, WeightSolution};

/// The 5 alternatives × 6 indicators × 7 experts reference panel, in the
/// CSV layout read by [`cli::parse_panel`].
pub const REFERENCE_PANEL_CSV: &str = include_str!("../data/reference_panel.csv");
