//! Polyhedral sets `U = {p ∈ Δ : A p ≤ c}`: the conjugate of
//! `f(p) = Π_{s'} x_{s'}^{λ p_{s'}}`, the dual of `min_{p ∈ U} f(p)`, and
//! the concise convex program built from it.

use std::time::Instant;

use crate::convex::{maximize_sum_cutting_plane, solution_box, transformed_report, OracleOutput, PenaltyOptions};
use crate::error::{Result, RmdpError};
use crate::numerics::{dot, solve_lp, LinearProgram, LpStatus, Sense};
use crate::regularized::{RegularizationConfig, EXPONENT_LIMIT};
use crate::report::{Certificate, SolveReport};
use crate::robust::{Rectangularity, Rmdp};
use crate::uncertainty::UncertaintySet;

/// Absolute residual allowed when testing `y ∈ cone{log x}`.
pub const RAY_TOL: f64 = 1e-9;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// An sa-rectangular robust MDP whose sets are all given by `(A_sa, c_sa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralRmdp {
    rmdp: Rmdp,
}

impl PolyhedralRmdp {
    /// Rewrites every set of an sa-rectangular model in polyhedral form.
    pub fn from_rmdp(rmdp: &Rmdp) -> Result<Self> {
        Ok(PolyhedralRmdp { rmdp: rmdp.to_polyhedral()? })
    }

    pub fn rmdp(&self) -> &Rmdp {
        &self.rmdp
    }

    /// `(A_sa, c_sa)` for the pair `(s, a)`.
    pub fn rows(&self, s: usize, a: usize) -> (&[Vec<f64>], &[f64]) {
        match &self.rmdp.uncertainty {
            Rectangularity::Sa { sets } => match &sets[s][a] {
                UncertaintySet::Polyhedral { a, c } => (a, c),
                _ => unreachable!("sets are converted on construction"),
            },
            Rectangularity::S { .. } => unreachable!("only sa-rectangular models are accepted"),
        }
    }

    fn set(&self, s: usize, a: usize) -> &UncertaintySet {
        match &self.rmdp.uncertainty {
            Rectangularity::Sa { sets } => &sets[s][a],
            Rectangularity::S { .. } => unreachable!("only sa-rectangular models are accepted"),
        }
    }
}

/// Multipliers of the dual of each inner problem, indexed `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub gamma: Vec<Vec<Vec<f64>>>,
    pub alpha: Vec<Vec<f64>>,
    /// Multipliers of `p ≥ 0`, when recovered.
    pub mu: Option<Vec<Vec<Vec<f64>>>>,
    /// Multipliers of `Σ p = 1`, when recovered.
    pub theta: Option<Vec<Vec<f64>>>,
}

impl DualVariables {
    pub fn is_nonnegative(&self) -> bool {
        self.gamma.iter().flatten().flatten().all(|&g| g >= 0.0)
            && self.alpha.iter().flatten().all(|&a| a >= 0.0)
    }
}

fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// Conjugate `f*(y) = sup_p yᵀp − Π x^{λp}`: finite only on the ray
/// `y = α·log x`, `α ≥ 0`, where it equals `(α/λ)log(α/λ) − α/λ`.
pub fn conjugate_f(x: &[f64], y: &[f64], lambda: f64) -> f64 {
    let ell: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let norm2 = dot(&ell, &ell);
    let alpha = if norm2 == 0.0 {
        if y.iter().all(|v| v.abs() <= RAY_TOL) {
            return -1.0;
        }
        return f64::INFINITY;
    } else {
        dot(&ell, y) / norm2
    };
    let residual = y.iter().zip(&ell).map(|(yi, li)| (yi - alpha * li).abs()).fold(0.0, f64::max);
    if residual > RAY_TOL || alpha < -1e-12 {
        return f64::INFINITY;
    }
    let r = alpha.max(0.0) / lambda;
    xlogx(r) - r
}

/// `g₁(α, x_{s'}) = α·log(x_{s'}/α)`, the perspective of `log`.
pub fn g1(alpha: f64, x_sp: f64) -> f64 {
    if alpha == 0.0 {
        0.0
    } else {
        alpha * (x_sp / alpha).ln()
    }
}

/// `g₂(α) = α log α − (α/λ) log(α/λ)`
pub fn g2(alpha: f64, lambda: f64) -> f64 {
    xlogx(alpha) - xlogx(alpha / lambda)
}

/// `h_{s'}(α, x) = α log x_{s'} − (α/λ) log(α/λ)`
pub fn perspective_h(s_prime: usize, alpha: f64, x: &[f64], lambda: f64) -> f64 {
    alpha * x[s_prime].ln() - xlogx(alpha / lambda)
}

/// Objective of the dual of `min_{p ∈ U} Π x^{λp}` after eliminating
/// `(μ, θ)`:
/// `−cᵀγ + min_{s'} (α log x_{s'} + [Aᵀγ]_{s'}) − (α/λ)log(α/λ) + α/λ`.
pub fn dual_objective(x: &[f64], a: &[Vec<f64>], c: &[f64], lambda: f64, gamma: &[f64], alpha: f64) -> f64 {
    let inner = (0..x.len())
        .map(|sp| alpha * x[sp].ln() + column_dot(a, sp, gamma))
        .fold(f64::INFINITY, f64::min);
    -dot(c, gamma) + inner - xlogx(alpha / lambda) + alpha / lambda
}

/// Objective `−cᵀγ + θ − f*(−Aᵀγ + μ + θe)` of the dual with explicit
/// `(μ, θ)`; `−∞` when the argument of `f*` leaves its domain.
pub fn dual_objective_explicit(
    x: &[f64],
    a: &[Vec<f64>],
    c: &[f64],
    lambda: f64,
    gamma: &[f64],
    mu: &[f64],
    theta: f64,
) -> f64 {
    let y: Vec<f64> = (0..x.len()).map(|sp| -column_dot(a, sp, gamma) + mu[sp] + theta).collect();
    -dot(c, gamma) + theta - conjugate_f(x, &y, lambda)
}

fn column_dot(a: &[Vec<f64>], col: usize, gamma: &[f64]) -> f64 {
    a.iter().zip(gamma).map(|(row, g)| row[col] * g).sum()
}

/// Optimal dual multipliers of one inner problem and the primal minimiser
/// read off the dual.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerDual {
    pub value: f64,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub theta: f64,
    pub mu: Vec<f64>,
    /// Multipliers of the rows `θ − [Aᵀγ]_{s'} ≤ α log x_{s'}`, a minimiser
    /// of `pᵀ log x` over the set.
    pub p: Vec<f64>,
}

/// Solves the dual of `min_{p ∈ U} Π x^{λp}`.
///
/// For fixed `α` the problem in `(γ, θ)` is a linear program whose value is
/// positively homogeneous in `α`, so one LP at `α = 1` is solved and the
/// remaining concave scalar problem in `α` is maximised by golden-section
/// search to width `tol`.
pub fn dual_inner_value(x: &[f64], set: &UncertaintySet, lambda: f64, tol: f64) -> Result<InnerDual> {
    if let Some(i) = x.iter().position(|&v| !(v >= 1.0)) {
        return Err(RmdpError::DomainError(format!("dual needs x ≥ 1; x[{i}] = {}", x[i])));
    }
    if x.len() != set.dim() {
        return Err(RmdpError::DomainError(format!(
            "point has {} entries, set has dimension {}",
            x.len(),
            set.dim()
        )));
    }
    let (a, c) = set.constraint_rows();
    let (n, m) = (x.len(), c.len());
    let ell: Vec<f64> = x.iter().map(|v| v.ln()).collect();

    let mut cost: Vec<f64> = c.iter().map(|ci| -ci).collect();
    cost.push(1.0);
    let mut lp = LinearProgram::new(Sense::Maximize, cost);
    for sp in 0..n {
        let mut row: Vec<f64> = a.iter().map(|r| -r[sp]).collect();
        row.push(1.0);
        lp.add_ub(row, ell[sp]);
    }
    lp.set_bounds(m, f64::NEG_INFINITY, f64::INFINITY);
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => return Err(RmdpError::EmptySet),
        LpStatus::Infeasible => {
            return Err(RmdpError::NumericalBreakdown("dual inner program is infeasible".into()))
        }
    }
    let slope = sol.value;
    let phi = |alpha: f64| alpha * slope - xlogx(alpha / lambda) + alpha / lambda;

    let (mut lo, mut hi) = (0.0, 2.0 * lambda * (lambda * slope.max(0.0)).exp() + 1.0);
    let width = tol.max(f64::EPSILON) * hi;
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    let mut rounds = 0;
    while hi - lo > width {
        rounds += 1;
        if rounds > 400 {
            return Err(RmdpError::NonConvergence { rounds, residual: hi - lo, gap: f64::NAN });
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = phi(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = phi(x1);
        }
    }
    let alpha = 0.5 * (lo + hi);
    let gamma: Vec<f64> = sol.point[..m].iter().map(|g| alpha * g.max(0.0)).collect();
    let value = dual_objective(x, &a, &c, lambda, &gamma, alpha);
    let theta = (0..n)
        .map(|sp| alpha * ell[sp] + column_dot(&a, sp, &gamma))
        .fold(f64::INFINITY, f64::min);
    let mu = (0..n)
        .map(|sp| (alpha * ell[sp] + column_dot(&a, sp, &gamma) - theta).max(0.0))
        .collect();
    let p: Vec<f64> = sol.ub_duals.iter().map(|d| d.max(0.0)).collect();
    Ok(InnerDual { value, gamma, alpha, theta, mu, p })
}

/// Right-hand side of the coupled constraint for `(s, s')`:
/// `Σ_a ν_sa exp_b(r_sa)·(−c_saᵀγ_sa + h_{s'}(α_sa, x) + [A_saᵀγ_sa]_{s'} + α_sa/λ)`.
pub fn coupled_rhs(
    prmdp: &PolyhedralRmdp,
    cfg: &RegularizationConfig,
    duals: &DualVariables,
    x: &[f64],
    s: usize,
    s_prime: usize,
) -> f64 {
    let rmdp = prmdp.rmdp();
    (0..rmdp.n_actions())
        .map(|a| {
            let w = cfg.baseline.probs[s][a] * (cfg.b * rmdp.base.rewards[s][a]).exp();
            w * action_rhs(prmdp, rmdp.discount(), duals, x, s, a, s_prime)
        })
        .sum()
}

/// `−c_saᵀγ_sa + h_{s'}(α_sa, x) + [A_saᵀγ_sa]_{s'} + α_sa/λ`
pub fn action_rhs(
    prmdp: &PolyhedralRmdp,
    lambda: f64,
    duals: &DualVariables,
    x: &[f64],
    s: usize,
    a: usize,
    s_prime: usize,
) -> f64 {
    let (rows, c) = prmdp.rows(s, a);
    let gamma = &duals.gamma[s][a];
    let alpha = duals.alpha[s][a];
    -dot(c, gamma) + perspective_h(s_prime, alpha, x, lambda) + column_dot(rows, s_prime, gamma) + alpha / lambda
}

/// Constraint values `Σ_a ν_sa exp_b(r_sa)·min_{s'}(…)` at the given duals,
/// one per state.
pub fn epigraph_values(
    prmdp: &PolyhedralRmdp,
    cfg: &RegularizationConfig,
    duals: &DualVariables,
    x: &[f64],
) -> Vec<f64> {
    let rmdp = prmdp.rmdp();
    let (ns, na, lambda) = (rmdp.n_states(), rmdp.n_actions(), rmdp.discount());
    (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let w = cfg.baseline.probs[s][a] * (cfg.b * rmdp.base.rewards[s][a]).exp();
                    let z = (0..ns)
                        .map(|sp| action_rhs(prmdp, lambda, duals, x, s, a, sp))
                        .fold(f64::INFINITY, f64::min);
                    w * z
                })
                .sum()
        })
        .collect()
}

/// Optimal duals of every inner problem at `x`, with the constraint values
/// and supergradient rows they induce.
pub fn dual_oracle(
    prmdp: &PolyhedralRmdp,
    cfg: &RegularizationConfig,
    x: &[f64],
    tol: f64,
) -> Result<(OracleOutput, DualVariables)> {
    let rmdp = prmdp.rmdp();
    let (ns, na, lambda) = (rmdp.n_states(), rmdp.n_actions(), rmdp.discount());
    let guard = cfg.b * rmdp.base.max_reward() + lambda * x.iter().map(|v| v.ln()).fold(0.0, f64::max);
    if guard > EXPONENT_LIMIT {
        return Err(RmdpError::OverflowRisk { exponent: guard, limit: EXPONENT_LIMIT });
    }
    let mut values = vec![0.0; ns];
    let mut grads = vec![vec![0.0; ns]; ns];
    let mut duals = DualVariables {
        gamma: vec![Vec::with_capacity(na); ns],
        alpha: vec![Vec::with_capacity(na); ns],
        mu: Some(vec![Vec::with_capacity(na); ns]),
        theta: Some(vec![Vec::with_capacity(na); ns]),
    };
    for s in 0..ns {
        for a in 0..na {
            let inner = dual_inner_value(x, prmdp.set(s, a), lambda, tol)?;
            let w = cfg.baseline.probs[s][a] * (cfg.b * rmdp.base.rewards[s][a]).exp();
            values[s] += w * inner.value;
            for sp in 0..ns {
                grads[s][sp] += w * inner.value * lambda * inner.p[sp] / x[sp];
            }
            duals.gamma[s].push(inner.gamma);
            duals.alpha[s].push(inner.alpha);
            duals.mu.as_mut().unwrap()[s].push(inner.mu);
            duals.theta.as_mut().unwrap()[s].push(inner.theta);
        }
    }
    Ok(((values, grads), duals))
}

/// Solves the concise program: maximise `Σ x_s` over `x ≥ 1` subject to
/// `x_s ≤ Σ_a ν_sa exp_b(r_sa) z_sa` and `z_sa ≤ −c_saᵀγ_sa + h_{s'}(α_sa, x)
/// + [A_saᵀγ_sa]_{s'} + α_sa/λ` for every `s'`, with `γ, α ≥ 0`.
///
/// For fixed `x` the best `(γ, α)` are found by `dual_inner_value`, so the
/// program reduces to the cutting-plane scheme in `x` alone.
pub fn solve_concise_program(
    prmdp: &PolyhedralRmdp,
    cfg: &RegularizationConfig,
    opts: &PenaltyOptions,
) -> Result<(Vec<f64>, DualVariables, SolveReport)> {
    let start = Instant::now();
    let rmdp = prmdp.rmdp();
    cfg.validate()?;
    let cap = solution_box(rmdp, cfg)?;
    let upper = vec![cap; rmdp.n_states()];
    let tol = 1e-13;
    let outcome = maximize_sum_cutting_plane(|x| Ok(dual_oracle(prmdp, cfg, x, tol)?.0), &upper, opts)?;
    let (_, duals) = dual_oracle(prmdp, cfg, &outcome.x, tol)?;
    let constraint = epigraph_values(prmdp, cfg, &duals, &outcome.x);
    let residual = outcome
        .x
        .iter()
        .zip(&constraint)
        .map(|(x, t)| (x - t).max(0.0))
        .fold(0.0, f64::max);
    let mut report = transformed_report("cvx-poly", rmdp, cfg, &outcome, opts, start)?;
    report.residual = residual;
    report.certificates[0] = Certificate::at_most("feasibility_residual", residual, opts.feasibility_tol);
    Ok((outcome.x, duals, report))
}
