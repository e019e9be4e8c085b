use serde::{Deserialize, Serialize};

/// Numerical thresholds used throughout the pipeline.
///
/// All of them are surfaced on the command line and echoed in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative threshold for numeric rank and support decisions.
    pub rank_tol: f64,
    /// Absolute gap that separates eigenvalue clusters (scaled by `max(1, |max|)`).
    pub group_tol: f64,
    /// An eigenvalue `>= 1 - fix_tol` of the superoperator counts as a fixed point.
    pub fix_tol: f64,
    /// Singular value `>= 1 - intersect_tol` marks a shared direction of two subspaces.
    pub intersect_tol: f64,
    /// Frobenius agreement required between the two projection routes.
    pub agree_tol: f64,
    /// Rank threshold applied to the optimized purification.
    pub opt_rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_tol: 1e-9,
            group_tol: 1e-8,
            fix_tol: 1e-9,
            intersect_tol: 1e-6,
            agree_tol: 1e-8,
            opt_rank_tol: 1e-6,
        }
    }
}
