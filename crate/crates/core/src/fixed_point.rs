use crate::error::{Result, RmdpError};
use crate::numerics::inf_dist;

/// Default cap on Banach iterations.
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub value: Vec<f64>,
    pub iterations: usize,
    /// `‖v − F(v)‖∞` at the returned `v`.
    pub residual: f64,
}

/// Iterates `v ← F(v)` until the Bellman residual `‖v − F(v)‖∞` is at most
/// `tol`. The returned point is the last iterate whose residual was checked.
pub fn banach_iterate<F>(mut op: F, v0: Vec<f64>, tol: f64, max_iterations: usize) -> Result<FixedPoint>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(tol > 0.0) {
        return Err(RmdpError::DomainError(format!("tolerance {tol} must be positive")));
    }
    let mut v = v0;
    let mut residual = f64::INFINITY;
    for k in 0..max_iterations {
        let next = op(&v)?;
        residual = inf_dist(&v, &next);
        if !residual.is_finite() {
            return Err(RmdpError::NumericalBreakdown(format!(
                "non-finite iterate after {k} iterations"
            )));
        }
        if residual <= tol {
            return Ok(FixedPoint { value: v, iterations: k, residual });
        }
        v = next;
    }
    Err(RmdpError::IterationLimit { limit: max_iterations, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_map_converges_to_its_fixed_point() {
        let fp = banach_iterate(|v| Ok(vec![0.5 * v[0] + 1.0]), vec![0.0], 1e-12, 1000).unwrap();
        assert!((fp.value[0] - 2.0).abs() <= 2e-12);
        assert!(fp.residual <= 1e-12);
    }

    #[test]
    fn cap_reports_iteration_limit() {
        let err = banach_iterate(|v| Ok(vec![0.99 * v[0] + 1.0]), vec![0.0], 1e-12, 5).unwrap_err();
        assert!(matches!(err, RmdpError::IterationLimit { limit: 5, .. }));
    }
}
