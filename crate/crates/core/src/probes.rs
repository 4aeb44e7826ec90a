//! Operators that look like natural alternatives to `t̃` but are neither
//! convex nor concave in general: `t = exp_b∘T∘log_b`, the ℓ2-regularised
//! Bellman operator with its square substitutions, and KL regularisation
//! on the transitions.

use crate::error::{Result, RmdpError};
use crate::mdp::{Policy, ValueVector};
use crate::numerics::{dot, project_simplex, solve_linear_system};
use crate::regularized::EXPONENT_LIMIT;
use crate::robust::Rmdp;
use crate::uncertainty::UncertaintySet;

/// `t(x)_s = max_a min_{p ∈ U_sa} e^{b r_sa} Π_{s'} x_{s'}^{λ p_{s'}}`
pub fn t_operator(rmdp: &Rmdp, b: f64, x: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|&v| !(v >= 1.0)) {
        return Err(RmdpError::DomainError(format!("t needs x ≥ 1; x[{i}] = {}", x[i])));
    }
    let v: Vec<f64> = x.iter().map(|xi| xi.ln() / b).collect();
    let exponents: Vec<f64> = rmdp.robust_bellman(&v)?.iter().map(|t| b * t).collect();
    let top = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top > EXPONENT_LIMIT {
        return Err(RmdpError::OverflowRisk { exponent: top, limit: EXPONENT_LIMIT });
    }
    Ok(exponents.iter().map(|e| e.exp()).collect())
}

/// `max_{π_s ∈ Δ} Σ_a π_sa y_sa − ‖π_s − ν_s‖²/(2b)` with
/// `y_sa = r_sa + λ min_{p ∈ U_sa} pᵀv`, in the closed form
/// `−(‖Proj(z) − z‖² + ‖ν_s‖² − ‖z‖²)/(2b)` for `z = ν_s + b·y_s`.
pub fn l2_regularized_bellman(rmdp: &Rmdp, baseline: &Policy, b: f64, v: &[f64]) -> Result<ValueVector> {
    baseline.validate(rmdp.n_states(), rmdp.n_actions())?;
    if !(b > 0.0) {
        return Err(RmdpError::DomainError(format!("regularisation strength {b} must be positive")));
    }
    let q = rmdp.robust_q(v)?.q;
    Ok(q.iter()
        .zip(&baseline.probs)
        .map(|(y, nu)| {
            let z: Vec<f64> = nu.iter().zip(y).map(|(n, yi)| n + b * yi).collect();
            let proj = project_simplex(&z);
            let dist: f64 = proj.iter().zip(&z).map(|(p, zi)| (p - zi).powi(2)).sum();
            -(dist + dot(nu, nu) - dot(&z, &z)) / (2.0 * b)
        })
        .collect())
}

/// `φ_b(v)_s = (b·v_s)²` on `v ≥ 0`.
pub fn phi_b(v: &[f64], b: f64) -> Result<Vec<f64>> {
    if let Some(i) = v.iter().position(|&x| !(x >= 0.0)) {
        return Err(RmdpError::DomainError(format!("φ_b needs v ≥ 0; v[{i}] = {}", v[i])));
    }
    Ok(v.iter().map(|x| (b * x).powi(2)).collect())
}

/// `φ_b⁻¹(x)_s = √x_s / b` on `x ≥ 0`.
pub fn phi_b_inv(x: &[f64], b: f64) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|&v| !(v >= 0.0)) {
        return Err(RmdpError::DomainError(format!("φ_b⁻¹ needs x ≥ 0; x[{i}] = {}", x[i])));
    }
    Ok(x.iter().map(|v| v.sqrt() / b).collect())
}

/// `φ_b⁻¹ ∘ T̃_ℓ2 ∘ φ_b`
pub fn l2_inner_substitution(rmdp: &Rmdp, baseline: &Policy, b: f64, b_phi: f64, z: &[f64]) -> Result<Vec<f64>> {
    let t = l2_regularized_bellman(rmdp, baseline, b, &phi_b(z, b_phi)?)?;
    phi_b_inv(&t, b_phi)
}

/// `φ_b ∘ T̃_ℓ2 ∘ φ_b⁻¹`
pub fn l2_outer_substitution(rmdp: &Rmdp, baseline: &Policy, b: f64, b_phi: f64, x: &[f64]) -> Result<Vec<f64>> {
    let t = l2_regularized_bellman(rmdp, baseline, b, &phi_b_inv(x, b_phi)?)?;
    phi_b(&t, b_phi)
}

/// `D(y) = −cᵀy − (1/b) log Σ_s p̂_s exp(−b(v_s + a_sᵀy))`, the dual
/// objective of `min_{p ∈ U} pᵀv + KL(p, p̂)/b`, and its gradient.
pub fn kl_dual_objective(
    v: &[f64],
    a: &[Vec<f64>],
    c: &[f64],
    nominal: &[f64],
    b: f64,
    y: &[f64],
) -> (f64, Vec<f64>) {
    let exps: Vec<f64> = (0..v.len())
        .map(|s| -b * (v[s] + a.iter().zip(y).map(|(row, yi)| row[s] * yi).sum::<f64>()))
        .collect();
    let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = nominal.iter().zip(&exps).map(|(p, e)| p * (e - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let value = -dot(c, y) - (top + total.ln()) / b;
    let grad = a
        .iter()
        .zip(c)
        .map(|(row, ci)| -ci + row.iter().zip(&weights).map(|(r, w)| r * w).sum::<f64>() / total)
        .collect();
    (value, grad)
}

/// `min_{p ∈ U} pᵀv + KL(p, p̂)/b`, computed through its dual
/// `max_{y ≥ 0} D(y)`. Each iteration tries a projected Newton step on the
/// multipliers that are free to move and falls back to a spectral projected
/// gradient step, both with Armijo backtracking. Stops once the projected
/// gradient `P(y + ∇D) − y` is at most `tol` in the max norm.
pub fn kl_transition_inner(v: &[f64], set: &UncertaintySet, nominal: &[f64], b: f64, tol: f64) -> Result<f64> {
    if nominal.len() != v.len() || nominal.iter().any(|&p| !(p > 0.0)) {
        return Err(RmdpError::DomainError("reference distribution must be positive".into()));
    }
    const MAX_ITERATIONS: usize = 100_000;
    let (a, c) = set.constraint_rows();
    let objective = |y: &[f64]| kl_dual_objective(v, &a, &c, nominal, b, y);
    let mut y = vec![0.0; c.len()];
    let (mut value, mut grad) = objective(&y);
    let mut spectral = 1.0 / b.max(1.0);
    let mut stationarity = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        stationarity = y.iter().zip(&grad).fold(0.0f64, |m, (yi, gi)| m.max(((yi + gi).max(0.0) - yi).abs()));
        if stationarity <= tol {
            return Ok(value);
        }
        let newton = newton_direction(v, &a, nominal, b, &y, &grad);
        let gradient: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| (yi + spectral * gi).max(0.0) - yi).collect();
        let step = newton
            .and_then(|d| armijo(&objective, &y, value, &grad, &d))
            .or_else(|| armijo(&objective, &y, value, &grad, &gradient));
        let Some((trial, tv, tg)) = step else {
            return Ok(value);
        };
        let s: Vec<f64> = trial.iter().zip(&y).map(|(n, o)| n - o).collect();
        let d: Vec<f64> = tg.iter().zip(&grad).map(|(n, o)| o - n).collect();
        let curvature = dot(&s, &d);
        spectral = if curvature > 0.0 { (dot(&s, &s) / curvature).clamp(1e-12, 1e12) } else { 1e12 };
        y = trial;
        value = tv;
        grad = tg;
    }
    Err(RmdpError::NonConvergence { rounds: MAX_ITERATIONS, residual: stationarity, gap: f64::NAN })
}

type Trial = (Vec<f64>, f64, Vec<f64>);

fn armijo(objective: &impl Fn(&[f64]) -> (f64, Vec<f64>), y: &[f64], value: f64, grad: &[f64], dir: &[f64]) -> Option<Trial> {
    let mut t = 1.0;
    for _ in 0..60 {
        let trial: Vec<f64> = y.iter().zip(dir).map(|(yi, d)| (yi + t * d).max(0.0)).collect();
        let moved: Vec<f64> = trial.iter().zip(y).map(|(n, o)| n - o).collect();
        let slope = dot(grad, &moved);
        if slope <= 0.0 {
            return None;
        }
        let (tv, tg) = objective(&trial);
        if tv >= value + 1e-4 * slope {
            return Some((trial, tv, tg));
        }
        t *= 0.5;
    }
    None
}

/// Newton direction `(b·Cov + δI)⁻¹ ∇D` on the multipliers that are
/// positive or have a positive gradient; zero on the rest.
fn newton_direction(v: &[f64], a: &[Vec<f64>], nominal: &[f64], b: f64, y: &[f64], grad: &[f64]) -> Option<Vec<f64>> {
    let free: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0 || grad[i] > 0.0).collect();
    if free.is_empty() {
        return None;
    }
    let exps: Vec<f64> = (0..v.len())
        .map(|s| -b * (v[s] + a.iter().zip(y).map(|(row, yi)| row[s] * yi).sum::<f64>()))
        .collect();
    let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = nominal.iter().zip(&exps).map(|(p, e)| p * (e - top).exp()).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|w| *w /= total);
    let mean: Vec<f64> = free.iter().map(|&i| dot(&a[i], &q)).collect();
    let mut h: Vec<Vec<f64>> = free
        .iter()
        .enumerate()
        .map(|(fi, &i)| {
            free.iter()
                .enumerate()
                .map(|(fj, &j)| {
                    let second: f64 = (0..q.len()).map(|s| a[i][s] * a[j][s] * q[s]).sum();
                    b * (second - mean[fi] * mean[fj])
                })
                .collect()
        })
        .collect();
    let shift = 1e-10 * h.iter().enumerate().fold(1.0f64, |m, (k, row)| m.max(row[k]));
    for (k, row) in h.iter_mut().enumerate() {
        row[k] += shift;
    }
    let rhs: Vec<f64> = free.iter().map(|&i| grad[i]).collect();
    let step = solve_linear_system(&h, &rhs).ok()?;
    let mut dir = vec![0.0; y.len()];
    for (k, &i) in free.iter().enumerate() {
        dir[i] = step[k];
    }
    dir.iter().all(|d| d.is_finite()).then_some(dir)
}

/// `T̃(v)_s = max_a r_sa + λ·min_{p ∈ U_sa} (pᵀv + KL(p, P̂_sa)/b)`, with
/// the nominal transitions of the model as the reference kernel.
pub fn kl_transition_regularized_bellman(rmdp: &Rmdp, b: f64, v: &[f64], tol: f64) -> Result<ValueVector> {
    let sets = rmdp.sa_sets()?;
    let lambda = rmdp.discount();
    let mut out = Vec::with_capacity(sets.len());
    for (s, row) in sets.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for (a, set) in row.iter().enumerate() {
            let inner = kl_transition_inner(v, set, &rmdp.base.transitions[s][a], b, tol)?;
            best = best.max(rmdp.base.rewards[s][a] + lambda * inner);
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Mdp;
    use crate::numerics::kl_divergence;
    use crate::regularized::exp_b;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example() -> Rmdp {
        let m = Mdp::new(
            vec![vec![2.0, 11.0, 10.0], vec![1.0, 1.0, 1.0]],
            vec![
                vec![vec![0.1, 0.9], vec![0.25, 0.75], vec![0.4, 0.6]],
                vec![vec![0.5, 0.5]; 3],
            ],
            0.8,
            vec![0.5, 0.5],
        )
        .unwrap();
        Rmdp::with_box_factors(m, 0.95, 1.05).unwrap()
    }

    #[test]
    fn t_operator_is_exp_of_robust_bellman() {
        let rmdp = example();
        let b = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| 1.0 + rng.gen::<f64>() * 100.0).collect();
            let t = t_operator(&rmdp, b, &x).unwrap();
            let v: Vec<f64> = x.iter().map(|xi| xi.ln() / b).collect();
            let direct = exp_b(&rmdp.robust_bellman(&v).unwrap(), b).unwrap();
            for (a, d) in t.iter().zip(&direct) {
                assert!((a - d).abs() <= 1e-9 * d);
            }
        }
        let ones = t_operator(&rmdp, b, &[1.0, 1.0]).unwrap();
        assert!((ones[0] - (b * 11.0f64).exp()).abs() < 1e-9 * ones[0]);
    }

    #[test]
    fn l2_closed_form_matches_grid_maximisation() {
        let rmdp = example();
        let nu = Policy::uniform(2, 3);
        let v = [3.0, 1.5];
        let b = 0.05;
        let closed = l2_regularized_bellman(&rmdp, &nu, b, &v).unwrap();
        let q = rmdp.robust_q(&v).unwrap().q;
        let k = 400;
        for s in 0..2 {
            let mut best = f64::NEG_INFINITY;
            for i in 0..=k {
                for j in 0..=(k - i) {
                    let pi = [i as f64 / k as f64, j as f64 / k as f64, (k - i - j) as f64 / k as f64];
                    let pen: f64 = pi.iter().zip(&nu.probs[s]).map(|(p, n)| (p - n).powi(2)).sum();
                    best = best.max(dot(&pi, &q[s]) - pen / (2.0 * b));
                }
            }
            assert!(closed[s] >= best - 1e-12);
            assert!(closed[s] - best <= 1e-3, "{} vs {best}", closed[s]);
        }
    }

    #[test]
    fn l2_limits() {
        let rmdp = example();
        let nu = Policy::uniform(2, 3);
        let v = [4.0, 2.0];
        let q = rmdp.robust_q(&v).unwrap().q;
        let small = l2_regularized_bellman(&rmdp, &nu, 1e-8, &v).unwrap();
        let large = l2_regularized_bellman(&rmdp, &nu, 1e3, &v).unwrap();
        let t = rmdp.robust_bellman(&v).unwrap();
        for s in 0..2 {
            assert!((small[s] - dot(&nu.probs[s], &q[s])).abs() < 1e-6);
            assert!((large[s] - t[s]).abs() < 1e-2);
        }
    }

    #[test]
    fn substitutions_invert() {
        let v = [0.3, 7.0];
        let back = phi_b_inv(&phi_b(&v, 0.1).unwrap(), 0.1).unwrap();
        assert!((back[0] - v[0]).abs() < 1e-12 && (back[1] - v[1]).abs() < 1e-12);
        assert!(phi_b(&[-1.0], 1.0).is_err());
    }

    #[test]
    fn kl_inner_full_simplex_is_entropic() {
        let full = UncertaintySet::box_simplex(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let v = [1.0, -0.5, 2.0];
        let nominal = [0.2, 0.5, 0.3];
        let b = 2.0;
        let value = kl_transition_inner(&v, &full, &nominal, b, 1e-12).unwrap();
        let expected = -(nominal.iter().zip(&v).map(|(p, x)| p * (-b * x).exp()).sum::<f64>()).ln() / b;
        assert!((value - expected).abs() < 1e-10);
        let zero = kl_transition_inner(&[0.0; 3], &full, &nominal, b, 1e-12).unwrap();
        assert!(zero.abs() < 1e-12);
    }

    #[test]
    fn kl_inner_matches_grid_on_a_box() {
        let nominal = [0.25, 0.75];
        let set = UncertaintySet::box_from_nominal(&nominal, 0.95, 1.05).unwrap();
        let (lo, hi) = (0.2375, 0.2625);
        for (v, b) in [([3.0, 1.0], 1.0), ([0.5, 4.0], 5.0), ([2.0, 2.5], 0.3)] {
            let value = kl_transition_inner(&v, &set, &nominal, b, 1e-12).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..10_000 {
                let p0 = lo + (hi - lo) * i as f64 / 9_999.0;
                let p = [p0, 1.0 - p0];
                best = best.min(dot(&p, &v) + kl_divergence(&p, &nominal) / b);
            }
            assert!((value - best).abs() < 1e-4, "{value} vs {best}");
            assert!(value <= best + 1e-9);
        }
    }

    #[test]
    fn kl_weak_duality() {
        let nominal = [0.4, 0.6];
        let set = UncertaintySet::box_from_nominal(&nominal, 0.95, 1.05).unwrap();
        let (a, c) = set.constraint_rows();
        let v = [1.0, 3.0];
        let primal = kl_transition_inner(&v, &set, &nominal, 2.0, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let y: Vec<f64> = (0..c.len()).map(|_| rng.gen::<f64>() * 5.0).collect();
            assert!(kl_dual_objective(&v, &a, &c, &nominal, 2.0, &y).0 <= primal + 1e-9);
        }
    }

    #[test]
    fn kl_operator_approaches_robust_bellman() {
        let rmdp = example();
        let v = [4.0, 2.0];
        let t = rmdp.robust_bellman(&v).unwrap();
        let kl = kl_transition_regularized_bellman(&rmdp, 1e3, &v, 1e-12).unwrap();
        for s in 0..2 {
            assert!(kl[s] >= t[s] - 1e-9);
            assert!(kl[s] - t[s] < 1e-2);
        }
    }
}
