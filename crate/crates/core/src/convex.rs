//! The convex program `max Σ x_s s.t. x ≤ t̃(x), x ≥ 1` and the
//! contraction-program checks for monotone contractions.
//!
//! The program is solved through the exact-penalty objective
//! `Σ x_s − ρ·Σ (x_s − t̃(x)_s)₊`, weighted per state by the current best
//! point, with a cutting-plane model built from supergradients of `t̃`.
//! Because `t̃` is monotone the optimum is the greatest feasible point, so
//! the weighting does not move it. Model solutions are pulled back to the
//! feasible set by bisection and the model value certifies how far the
//! best point is from the optimum.

use std::time::Instant;

use crate::error::{Result, RmdpError};
use crate::mdp::ValueVector;
use crate::numerics::{dot, solve_lp, LinearProgram, LpStatus, Sense};
use crate::regularized::{
    log_b, t_tilde_exponents, t_tilde_srect_with_minimizers, RegularizationConfig, EXPONENT_LIMIT,
};
use crate::report::{Certificate, SolveReport, SolveStatus};
use crate::robust::Rmdp;

/// Bisection steps used to restore feasibility along a segment.
const RESTORATION_STEPS: usize = 60;

/// Largest ratio between the model box and the current scale.
const TRUST_RATIO: f64 = 1e3;
const MIN_RADIUS: f64 = 1e-12;
/// Relative violation of `x ≤ F(x)` attributed to rounding in `F`.
const ACCEPT_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOptions {
    /// Initial penalty `ρ₀`; `None` selects `10·|S|`.
    pub initial_penalty: Option<f64>,
    pub growth: f64,
    pub max_rounds: usize,
    pub max_inner_iterations: usize,
    /// Absolute tolerance on `max_s (x_s − t̃(x)_s)₊`.
    pub feasibility_tol: f64,
    /// Relative tolerance on the gap between the model bound and `Σ x_s`.
    pub objective_tol: f64,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        PenaltyOptions {
            initial_penalty: None,
            growth: 10.0,
            max_rounds: 8,
            max_inner_iterations: 2000,
            feasibility_tol: 1e-6,
            objective_tol: 1e-9,
        }
    }
}

impl PenaltyOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(rho) = self.initial_penalty {
            if !(rho > 0.0) {
                return Err(RmdpError::Validation(format!("initial penalty {rho} must be positive")));
            }
        }
        if !(self.growth > 1.0) {
            return Err(RmdpError::Validation(format!("penalty growth {} must exceed 1", self.growth)));
        }
        if self.max_rounds == 0 || self.max_inner_iterations == 0 {
            return Err(RmdpError::Validation("iteration limits must be positive".into()));
        }
        if !(self.feasibility_tol > 0.0) || !(self.objective_tol > 0.0) {
            return Err(RmdpError::Validation("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn penalty_for(&self, n_states: usize) -> f64 {
        self.initial_penalty.unwrap_or(10.0 * n_states as f64)
    }
}

/// Values of a concave map together with one supergradient row per
/// component.
pub type OracleOutput = (Vec<f64>, Vec<Vec<f64>>);

/// `t̃(x)` and its supergradient rows
/// `∂t̃_s/∂x_{s'} = Σ_a ν_sa·exp(b r_sa + λ p*ᵀ log x)·λ p*_{s'} / x_{s'}`
/// evaluated at the inner minimisers `p*`.
pub fn t_tilde_with_supergradient(
    rmdp: &Rmdp,
    cfg: &RegularizationConfig,
    x: &[f64],
) -> Result<OracleOutput> {
    let lambda = rmdp.discount();
    let n = rmdp.n_states();
    let (values, terms) = if rmdp.is_s_rectangular() {
        let (values, minimizers) = t_tilde_srect_with_minimizers(rmdp, cfg, x)?;
        let log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let terms: Vec<Vec<(f64, Vec<f64>)>> = minimizers
            .into_iter()
            .enumerate()
            .map(|(s, ps)| {
                ps.into_iter()
                    .enumerate()
                    .map(|(a, p)| {
                        let e = cfg.b * rmdp.base.rewards[s][a] + lambda * dot(&p, &log_x);
                        (cfg.baseline.probs[s][a] * e.exp(), p)
                    })
                    .collect()
            })
            .collect();
        (values, terms)
    } else {
        let (exps, minimizers) = t_tilde_exponents(rmdp, cfg, x)?;
        let terms: Vec<Vec<(f64, Vec<f64>)>> = exps
            .iter()
            .zip(minimizers)
            .enumerate()
            .map(|(s, (es, ps))| {
                es.iter()
                    .zip(ps)
                    .enumerate()
                    .map(|(a, (e, p))| (cfg.baseline.probs[s][a] * e.exp(), p))
                    .collect()
            })
            .collect();
        let values = terms.iter().map(|ts| ts.iter().map(|(w, _)| w).sum()).collect();
        (values, terms)
    };
    let grads = terms
        .iter()
        .map(|ts| {
            let mut g = vec![0.0; n];
            for (w, p) in ts {
                for (sp, gi) in g.iter_mut().enumerate() {
                    *gi += w * lambda * p[sp] / x[sp];
                }
            }
            g
        })
        .collect();
    Ok((values, grads))
}

pub fn supergradient_t_tilde(
    rmdp: &Rmdp,
    cfg: &RegularizationConfig,
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    Ok(t_tilde_with_supergradient(rmdp, cfg, x)?.1)
}

/// `Σ x_s − ρ·Σ (x_s − t̃(x)_s)₊`
pub fn penalty_objective(rmdp: &Rmdp, cfg: &RegularizationConfig, x: &[f64], rho: f64) -> Result<f64> {
    let t = crate::regularized::t_tilde(rmdp, cfg, x)?;
    Ok(penalized(x, &t, rho))
}

fn penalized(x: &[f64], t: &[f64], rho: f64) -> f64 {
    x.iter().sum::<f64>() - rho * violations(x, t).iter().sum::<f64>()
}

fn violations(x: &[f64], t: &[f64]) -> Vec<f64> {
    x.iter().zip(t).map(|(xi, ti)| (xi - ti).max(0.0)).collect()
}

/// `max_s (x_s − t_s)₊ / x_s`.
fn relative_violation(x: &[f64], t: &[f64]) -> f64 {
    x.iter().zip(t).map(|(xi, ti)| (xi - ti).max(0.0) / xi).fold(0.0, f64::max)
}

fn is_feasible(x: &[f64], t: &[f64]) -> bool {
    relative_violation(x, t) <= ACCEPT_REL
}

/// Upper end `exp(b·r_max/(1−λ))` of the box containing the solution.
pub fn solution_box(rmdp: &Rmdp, cfg: &RegularizationConfig) -> Result<f64> {
    let exponent = cfg.b * rmdp.base.max_reward() / (1.0 - rmdp.discount());
    if exponent > EXPONENT_LIMIT {
        return Err(RmdpError::OverflowRisk { exponent, limit: EXPONENT_LIMIT });
    }
    Ok(exponent.exp())
}

/// Result of the cutting-plane engine.
#[derive(Debug, Clone, PartialEq)]
pub struct CutOutcome {
    /// Best feasible point found.
    pub x: Vec<f64>,
    /// Certified bound on `max_s (x*_s − x_s)/x_s` for the optimum `x*`;
    /// infinite when no usable model bound was obtained.
    pub gap: f64,
    /// `max_s (x_s − F(x)_s)₊ / x_s` at `x`.
    pub residual: f64,
    pub iterations: usize,
    pub penalty: f64,
    pub converged: bool,
}

impl CutOutcome {
    pub fn objective(&self) -> f64 {
        self.x.iter().sum()
    }

    /// Componentwise relative distance to the optimum, as certified.
    pub fn relative_gap(&self) -> f64 {
        self.gap
    }
}

struct Cut {
    state: usize,
    grad: Vec<f64>,
    /// Point the cut was taken at.
    at: Vec<f64>,
    /// `F(at)_state`
    value: f64,
}

/// Maximises `Σ x_s` over `{1 ≤ x ≤ upper, x ≤ F(x)}` for a concave,
/// monotone, componentwise map `F` given by `oracle`. `x = 1` must be
/// feasible.
///
/// For monotone `F` the feasible set is closed under componentwise maxima
/// and has a greatest element `x*`, which maximises every positively
/// weighted sum and dominates every feasible point. Each iteration writes
/// `x = σ ⊙ (1 + δ·d)` with `σ` the best feasible point and `d ∈ [0, 1]`,
/// and maximises the cutting-plane model of
/// `Σ_s (x_s − ρ·(x_s − F(x)_s)₊)/σ_s`. When the trust radius `δ` is not
/// binding, the model value `|S| + g` certifies `x*_s ≤ (1 + g)·σ_s`, and
/// `g` becomes the next radius.
pub fn maximize_sum_cutting_plane<O>(mut oracle: O, upper: &[f64], opts: &PenaltyOptions) -> Result<CutOutcome>
where
    O: FnMut(&[f64]) -> Result<OracleOutput>,
{
    opts.validate()?;
    let n = upper.len();
    let size = n as f64;
    let mut rho = opts.penalty_for(n);
    let mut cuts: Vec<Cut> = Vec::new();
    let add_cuts = |cuts: &mut Vec<Cut>, x: &[f64], out: &OracleOutput| {
        for (s, (t, g)) in out.0.iter().zip(&out.1).enumerate() {
            cuts.push(Cut { state: s, grad: g.clone(), at: x.to_vec(), value: *t });
        }
    };

    let mut best = vec![1.0; n];
    let first = oracle(&best)?;
    if !is_feasible(&best, &first.0) {
        return Err(RmdpError::DomainError("x = 1 is not feasible for x ≤ F(x)".into()));
    }
    add_cuts(&mut cuts, &best, &first);
    let mut gap = f64::INFINITY;
    let mut radius: f64 = 1.0;
    let mut rounds = 0;

    for it in 1..=opts.max_inner_iterations {
        let scale = best.clone();
        let reach: Vec<f64> = upper.iter().zip(&scale).map(|(u, s)| radius.min(u / s - 1.0).max(0.0)).collect();
        let (x_lp, model) = solve_model(&cuts, &scale, radius, &reach, rho)?;
        let capped = (0..n).any(|j| reach[j] == radius && x_lp[j] >= scale[j] * (1.0 + radius * (1.0 - 1e-9)));
        let excess = (model - size).max(0.0);
        if capped {
            radius = (radius * 10.0).min(TRUST_RATIO);
        } else {
            gap = excess;
            if gap <= opts.objective_tol {
                let (x, t) = tighten(&mut oracle, best)?;
                return Ok(CutOutcome {
                    residual: relative_violation(&x, &t),
                    x,
                    gap,
                    iterations: it,
                    penalty: rho,
                    converged: true,
                });
            }
            radius = (2.0 * gap).clamp(MIN_RADIUS, TRUST_RATIO);
        }

        let out = oracle(&x_lp)?;
        add_cuts(&mut cuts, &x_lp, &out);
        let worst = relative_violation(&x_lp, &out.0);
        let candidate = if worst <= ACCEPT_REL { x_lp.clone() } else { restore(&mut oracle, &best, &x_lp)? };
        best = improve(&mut oracle, &best, candidate)?;

        let value_at_lp: f64 = x_lp
            .iter()
            .zip(&out.0)
            .zip(&scale)
            .map(|((x, t), s)| (x - rho * (x - t).max(0.0)) / s)
            .sum();
        let model_error = model - value_at_lp;
        if worst > ACCEPT_REL && model_error <= 1e-3 * excess {
            rounds += 1;
            if rounds > opts.max_rounds {
                break;
            }
            rho *= opts.growth;
        }
    }
    let t = oracle(&best)?.0;
    let residual = relative_violation(&best, &t);
    Err(RmdpError::NonConvergence { rounds, residual, gap })
}

/// Pulls a point accepted within rounding towards `1` until `x ≤ F(x)`
/// holds exactly, returning it with `F(x)`.
fn tighten<O>(oracle: &mut O, x: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)>
where
    O: FnMut(&[f64]) -> Result<OracleOutput>,
{
    let mut shrink = 0.0;
    for _ in 0..30 {
        let y: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) * (1.0 - shrink)).collect();
        let t = oracle(&y)?.0;
        if y.iter().zip(&t).all(|(a, b)| a <= b) {
            return Ok((y, t));
        }
        shrink = if shrink == 0.0 { ACCEPT_REL } else { 2.0 * shrink };
    }
    let t = oracle(&x)?.0;
    Ok((x, t))
}

/// The componentwise maximum of two feasible points is feasible for a
/// monotone map; falls back to whichever point has the larger sum when
/// rounding breaks that.
fn improve<O>(oracle: &mut O, best: &[f64], candidate: Vec<f64>) -> Result<Vec<f64>>
where
    O: FnMut(&[f64]) -> Result<OracleOutput>,
{
    let joined: Vec<f64> = best.iter().zip(&candidate).map(|(a, b)| a.max(*b)).collect();
    if joined.as_slice() == best {
        return Ok(joined);
    }
    if is_feasible(&joined, &oracle(&joined)?.0) {
        return Ok(joined);
    }
    let weighted: f64 = candidate.iter().zip(best).map(|(c, b)| c / b).sum();
    Ok(if weighted > best.len() as f64 { candidate } else { best.to_vec() })
}

/// Solves the penalised cutting-plane model in local variables
/// `x = scale ⊙ (1 + δ·d)` and `z = δ·scale ⊙ ω`, maximising `Σ d − ρ Σ ω`
/// over `0 ≤ d_j ≤ reach_j/δ`. Returns the maximiser in `x` units and the
/// model value of `Σ_s (x_s − ρ z_s)/scale_s`. Cuts slack everywhere on
/// the box are left out, and repeated rows keep only their tightest
/// right-hand side.
fn solve_model(cuts: &[Cut], scale: &[f64], radius: f64, reach: &[f64], rho: f64) -> Result<(Vec<f64>, f64)> {
    let n = scale.len();
    let mut cost = vec![1.0; n];
    cost.extend(std::iter::repeat(-rho).take(n));
    let mut lp = LinearProgram::new(Sense::Maximize, cost);
    for j in 0..n {
        lp.set_bounds(j, 0.0, reach[j] / radius);
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for cut in cuts {
        // x_s − gᵀx − z_s ≤ F(at)_s − gᵀat, measured from x = scale.
        let s = cut.state;
        let mut row = vec![0.0; 2 * n];
        for j in 0..n {
            row[j] = -cut.grad[j] * scale[j];
        }
        row[s] += scale[s];
        row[n + s] = -scale[s];
        let slack = cut.value - scale[s]
            + (0..n).map(|j| cut.grad[j] * (scale[j] - cut.at[j])).sum::<f64>();
        let norm = row.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let row: Vec<f64> = row.iter().map(|c| c / norm).collect();
        let rhs = slack / (norm * radius);
        let most: f64 = (0..n).map(|j| row[j].max(0.0) * lp.upper[j]).sum();
        if rhs > most {
            continue;
        }
        match rows.iter_mut().find(|(r, _)| r == &row) {
            Some(kept) => kept.1 = kept.1.min(rhs),
            None => rows.push((row, rhs)),
        }
    }
    for (row, rhs) in rows {
        lp.add_ub(row, rhs);
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(RmdpError::NumericalBreakdown(format!("cutting-plane model is {:?}", sol.status)));
    }
    let x: Vec<f64> = (0..n)
        .map(|j| scale[j] * (1.0 + radius * sol.point[j].clamp(0.0, lp.upper[j])))
        .collect();
    Ok((x, n as f64 + radius * sol.value))
}

/// Largest feasible point on the segment from the feasible `from` to `to`.
fn restore<O>(oracle: &mut O, from: &[f64], to: &[f64]) -> Result<Vec<f64>>
where
    O: FnMut(&[f64]) -> Result<OracleOutput>,
{
    let point = |tau: f64| -> Vec<f64> {
        from.iter().zip(to).map(|(a, b)| (a + tau * (b - a)).max(1.0)).collect()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..RESTORATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let x = point(mid);
        if is_feasible(&x, &oracle(&x)?.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(point(lo))
}

/// Solves `max Σ x_s s.t. x ≤ t̃(x), x ≥ 1`. The report carries
/// `log_b(x)` as its value vector.
pub fn solve_convex_program(
    rmdp: &Rmdp,
    cfg: &RegularizationConfig,
    opts: &PenaltyOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    cfg.validate()?;
    let cap = solution_box(rmdp, cfg)?;
    let upper = vec![cap; rmdp.n_states()];
    let outcome = maximize_sum_cutting_plane(|x| t_tilde_with_supergradient(rmdp, cfg, x), &upper, opts)?;
    let report = transformed_report("cvx", rmdp, cfg, &outcome, opts, start)?;
    Ok((outcome.x, report))
}

pub(crate) fn transformed_report(
    method: &str,
    rmdp: &Rmdp,
    cfg: &RegularizationConfig,
    outcome: &CutOutcome,
    opts: &PenaltyOptions,
    start: Instant,
) -> Result<SolveReport> {
    let v = log_b(&outcome.x, cfg.b)?;
    let objective = dot(&rmdp.base.initial, &v);
    let mut report = SolveReport::new(method, v.clone(), objective);
    report.policy = Some(rmdp.robust_greedy_policy(&v)?);
    report.iterations = outcome.iterations;
    report.residual = outcome.residual;
    report.status = if outcome.converged { SolveStatus::Converged } else { SolveStatus::NotConverged };
    report.certificates.push(Certificate::at_most("feasibility_residual", outcome.residual, opts.feasibility_tol));
    report.certificates.push(Certificate::at_most(
        "relative_optimality_gap",
        outcome.relative_gap(),
        opts.objective_tol,
    ));
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Outcome of checking the contraction programs at a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCheck {
    /// Samples with `v ≥ F(v)`.
    pub upper_samples: usize,
    /// Samples with `v ≤ F(v)`.
    pub lower_samples: usize,
    /// Samples in neither set.
    pub skipped: usize,
    /// Samples on which `g` beats `g(v*)` beyond the tolerance.
    pub violations: usize,
    /// Largest amount by which a sample beat `g(v*)`, or the most negative
    /// slack when none did.
    pub worst_margin: f64,
}

impl ContractionCheck {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// For a monotone contraction `F` with fixed point `v*` and an increasing
/// `g`, checks `g(v) ≥ g(v*)` whenever `v ≥ F(v)` and `g(v) ≤ g(v*)`
/// whenever `v ≤ F(v)`.
pub fn contraction_program_check<F, G>(
    mut op: F,
    g: G,
    v_star: &[f64],
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<ContractionCheck>
where
    F: FnMut(&[f64]) -> Result<ValueVector>,
    G: Fn(&[f64]) -> f64,
{
    let fv = op(v_star)?;
    let residual = crate::numerics::inf_dist(v_star, &fv);
    if residual > 1e-9 * v_star.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
        return Err(RmdpError::NotFixedPoint(residual));
    }
    let g_star = g(v_star);
    let slack = tol * g_star.abs().max(1.0);
    let mut check = ContractionCheck {
        upper_samples: 0,
        lower_samples: 0,
        skipped: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for v in samples {
        let f = op(v)?;
        let above = v.iter().zip(&f).all(|(a, b)| a >= b);
        let below = v.iter().zip(&f).all(|(a, b)| a <= b);
        let gv = g(v);
        let mut margins = Vec::new();
        if above {
            check.upper_samples += 1;
            margins.push(g_star - gv);
        }
        if below {
            check.lower_samples += 1;
            margins.push(gv - g_star);
        }
        if margins.is_empty() {
            check.skipped += 1;
        }
        for m in margins {
            check.worst_margin = check.worst_margin.max(m);
            if m > slack {
                check.violations += 1;
            }
        }
    }
    Ok(check)
}

/// Samples `v* ± c·e` for the given shifts plus random perturbations
/// `v* ± d` with `d ∈ [0, c_max]^S`, keeping only points in
/// `{v ≥ F(v)}` or `{v ≤ F(v)}` until `per_side` of each are found.
pub fn contraction_samples<F, R>(
    mut op: F,
    v_star: &[f64],
    shifts: &[f64],
    per_side: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<ValueVector>,
    R: rand::Rng,
{
    let mut out = Vec::new();
    for &c in shifts {
        out.push(v_star.iter().map(|v| v + c).collect());
        out.push(v_star.iter().map(|v| v - c).collect());
    }
    let c_max = shifts.iter().cloned().fold(1.0f64, f64::max);
    let (mut above, mut below) = (0, 0);
    let max_attempts = 200 * per_side.max(1);
    for _ in 0..max_attempts {
        if above >= per_side && below >= per_side {
            break;
        }
        let sign = if above < per_side && (below >= per_side || rng.gen_bool(0.5)) { 1.0 } else { -1.0 };
        let v: Vec<f64> = v_star.iter().map(|x| x + sign * rng.gen_range(0.0..c_max)).collect();
        let f = op(&v)?;
        if sign > 0.0 && v.iter().zip(&f).all(|(a, b)| a >= b) {
            above += 1;
            out.push(v);
        } else if sign < 0.0 && v.iter().zip(&f).all(|(a, b)| a <= b) {
            below += 1;
            out.push(v);
        }
    }
    Ok(out)
}
