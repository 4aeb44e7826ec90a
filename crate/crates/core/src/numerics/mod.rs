//! Dense numerical kernels shared by every solver.

pub mod linalg;
pub mod lp;
pub mod polytope;

pub use linalg::{dot, inf_dist, inf_norm, mat_vec, solve_linear_system};
pub use lp::{solve_lp, LinearProgram, LpSolution, LpStatus, Sense};
pub use polytope::enumerate_vertices;

use crate::error::{Result, RmdpError};

/// Euclidean projection of `z` onto the probability simplex.
///
/// Sort-and-threshold: find the largest `k` such that the `k` largest
/// entries stay positive after subtracting a common shift.
pub fn project_simplex(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    z.iter().map(|&v| (v - theta).max(0.0)).collect()
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(RmdpError::InvalidWeights(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(RmdpError::InvalidWeights("all weights are zero".into()));
    }
    Ok(())
}

/// `(1/b)·log Σ_a w_a·exp(b·y_a)`, evaluated with the largest exponent
/// factored out so that no intermediate exponent is positive.
pub fn scaled_log_sum_exp(weights: &[f64], y: &[f64], b: f64) -> Result<f64> {
    check_weights(weights)?;
    if weights.len() != y.len() {
        return Err(RmdpError::DomainError(format!(
            "{} weights for {} exponents",
            weights.len(),
            y.len()
        )));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(RmdpError::DomainError(format!("scale b = {b} must be positive")));
    }
    let m = weights
        .iter()
        .zip(y)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = weights
        .iter()
        .zip(y)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, &v)| w * (b * (v - m)).exp())
        .sum();
    Ok(m + sum.ln() / b)
}

/// Maximiser of `qᵀy − KL(q, w)/b` over the simplex: `q ∝ w·exp(b·y)`.
pub fn softmax_weights(weights: &[f64], y: &[f64], b: f64) -> Result<Vec<f64>> {
    let lse = scaled_log_sum_exp(weights, y, b)?;
    Ok(weights
        .iter()
        .zip(y)
        .map(|(w, &v)| if *w > 0.0 { w * (b * (v - lse)).exp() } else { 0.0 })
        .collect())
}

/// `KL(q, w) = Σ q_a log(q_a / w_a)` with `0·log 0 = 0`.
pub fn kl_divergence(q: &[f64], w: &[f64]) -> f64 {
    q.iter()
        .zip(w)
        .map(|(&qa, &wa)| {
            if qa <= 0.0 {
                0.0
            } else if wa <= 0.0 {
                f64::INFINITY
            } else {
                qa * (qa / wa).ln()
            }
        })
        .sum()
}
