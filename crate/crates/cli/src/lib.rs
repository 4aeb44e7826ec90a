//! Commands behind the `rmdp` binary, usable as a library.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rmdp_core::convex::{
    contraction_program_check, contraction_samples, solve_convex_program, PenaltyOptions,
};
use rmdp_core::curvature::{classify_curvature, probe_operator, CurvatureReport, ProbeOperator, DEFAULT_CURVATURE_TOL};
use rmdp_core::instance::{auto_strength, Instance};
use rmdp_core::numerics::{dot, inf_dist, solve_lp};
use rmdp_core::polyhedral::{solve_concise_program, PolyhedralRmdp};
use rmdp_core::regularized::{
    choose_b, regularized_bellman, regularized_fixed_point, sandwich_margins, RegularizationConfig, EXPONENT_LIMIT,
};
use rmdp_core::{Certificate, Policy, Result, RmdpError, SolveReport, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vi,
    Pi,
    LpPrimal,
    LpDual,
    Rvi,
    Rpi,
    RegFp,
    Cvx,
    CvxPoly,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Vi,
        Method::Pi,
        Method::LpPrimal,
        Method::LpDual,
        Method::Rvi,
        Method::Rpi,
        Method::RegFp,
        Method::Cvx,
        Method::CvxPoly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vi => "vi",
            Method::Pi => "pi",
            Method::LpPrimal => "lp-primal",
            Method::LpDual => "lp-dual",
            Method::Rvi => "rvi",
            Method::Rpi => "rpi",
            Method::RegFp => "reg-fp",
            Method::Cvx => "cvx",
            Method::CvxPoly => "cvx-poly",
        }
    }

    pub fn needs_regularization(self) -> bool {
        matches!(self, Method::RegFp | Method::Cvx | Method::CvxPoly)
    }
}

impl FromStr for Method {
    type Err = RmdpError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| RmdpError::Unsupported(format!("unknown method '{s}'")))
    }
}

/// `--b` takes a number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrengthArg {
    Value(f64),
    Auto,
}

impl FromStr for StrengthArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(StrengthArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(b) if b > 0.0 && b.is_finite() => Ok(StrengthArg::Value(b)),
            _ => Err(format!("expected a positive number or 'auto', got '{s}'")),
        }
    }
}

/// Regularization for a command: the instance's own unless `b` or
/// `epsilon` override it. Overrides keep the instance baseline and fall
/// back to the uniform one.
pub fn regularization_for(
    inst: &Instance,
    b: Option<StrengthArg>,
    epsilon: Option<f64>,
) -> Result<Option<RegularizationConfig>> {
    let rmdp = &inst.rmdp;
    let (ns, na) = (rmdp.n_states(), rmdp.n_actions());
    let baseline = inst
        .regularization
        .as_ref()
        .map_or_else(|| Policy::uniform(ns, na), |cfg| cfg.baseline.clone());
    let strength = match (b, epsilon) {
        (Some(StrengthArg::Value(b)), _) => b,
        (Some(StrengthArg::Auto), Some(eps)) | (None, Some(eps)) => auto_strength(eps, rmdp.discount(), na)?,
        (Some(StrengthArg::Auto), None) => {
            let eps = inst.document.regularization.as_ref().and_then(|r| r.epsilon).ok_or_else(|| {
                RmdpError::Validation("'--b auto' needs --epsilon or an epsilon in the instance".into())
            })?;
            auto_strength(eps, rmdp.discount(), na)?
        }
        (None, None) => return Ok(inst.regularization.clone()),
    };
    Ok(Some(RegularizationConfig::new(baseline, strength)?))
}

fn require(cfg: Option<&RegularizationConfig>, method: Method) -> Result<&RegularizationConfig> {
    cfg.ok_or_else(|| {
        RmdpError::Validation(format!(
            "method '{}' needs a regularization block in the instance or --b/--epsilon",
            method.name()
        ))
    })
}

fn finish(mut report: SolveReport, start: Instant, tol: f64) -> SolveReport {
    report.wall_time_s = start.elapsed().as_secs_f64();
    if report.residual > tol {
        report.status = SolveStatus::NotConverged;
    }
    report
}

/// Runs one solver and reports its value vector, policy and certificates.
pub fn cmd_solve(inst: &Instance, method: Method, tol: f64, cfg: Option<&RegularizationConfig>) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(RmdpError::Validation(format!("tolerance must be positive, got {tol}")));
    }
    let start = Instant::now();
    let rmdp = &inst.rmdp;
    let base = &rmdp.base;
    let report = match method {
        Method::Vi => {
            let fp = base.value_iteration(None, tol)?;
            let mut r = SolveReport::new("vi", fp.value.clone(), dot(&base.initial, &fp.value));
            r.policy = Some(base.greedy_policy(&fp.value));
            r.iterations = fp.iterations;
            r.residual = fp.residual;
            finish(r, start, tol)
        }
        Method::Pi => {
            let (policy, v, iterations) = base.policy_iteration()?;
            let mut r = SolveReport::new("pi", v.clone(), dot(&base.initial, &v));
            r.residual = inf_dist(&base.bellman(&v), &v);
            r.policy = Some(policy);
            r.iterations = iterations;
            finish(r, start, tol)
        }
        Method::LpPrimal => {
            let sol = solve_lp(&base.build_primal_lp())?;
            lp_status(&sol.status)?;
            let v = sol.point.clone();
            let mut r = SolveReport::new("lp-primal", v.clone(), sol.value);
            r.residual = inf_dist(&base.bellman(&v), &v);
            r.policy = Some(base.greedy_policy(&v));
            finish(r, start, tol)
        }
        Method::LpDual => {
            let sol = solve_lp(&base.build_dual_lp())?;
            lp_status(&sol.status)?;
            let na = base.n_actions;
            let mu: Vec<&[f64]> = sol.point.chunks(na).collect();
            let v_guess = base.value_iteration(None, tol)?.value;
            let greedy = base.greedy_policy(&v_guess).actions();
            let actions: Vec<usize> = mu
                .iter()
                .zip(&greedy)
                .map(|(row, &g)| {
                    if row.iter().sum::<f64>() > 1e-12 {
                        rmdp_core::mdp::argmax_lowest(row)
                    } else {
                        g
                    }
                })
                .collect();
            let policy = Policy::deterministic(&actions, na);
            let v = base.policy_evaluation(&policy)?;
            let mut r = SolveReport::new("lp-dual", v.clone(), sol.value);
            r.residual = inf_dist(&base.bellman(&v), &v);
            let mass: f64 = sol.point.iter().sum();
            r.certificates.push(Certificate::at_most(
                "occupancy_mass_error",
                (mass - 1.0 / (1.0 - base.discount)).abs(),
                1e-8,
            ));
            r.policy = Some(policy);
            finish(r, start, tol)
        }
        Method::Rvi => {
            let fp = rmdp.robust_value_iteration(tol)?;
            let mut r = SolveReport::new("rvi", fp.value.clone(), dot(&base.initial, &fp.value));
            r.policy = Some(rmdp.robust_greedy_policy(&fp.value)?);
            r.iterations = fp.iterations;
            r.residual = fp.residual;
            finish(r, start, tol)
        }
        Method::Rpi => {
            let (policy, fp) = rmdp.robust_policy_iteration(tol)?;
            let mut r = SolveReport::new("rpi", fp.value.clone(), dot(&base.initial, &fp.value));
            r.residual = inf_dist(&rmdp.robust_bellman(&fp.value)?, &fp.value);
            r.policy = Some(policy);
            r.iterations = fp.iterations;
            finish(r, start, tol)
        }
        Method::RegFp => {
            let cfg = require(cfg, method)?;
            let fp = regularized_fixed_point(rmdp, cfg, tol)?;
            let mut r = SolveReport::new("reg-fp", fp.value.clone(), dot(&base.initial, &fp.value));
            r.policy = Some(rmdp.robust_greedy_policy(&fp.value)?);
            r.iterations = fp.iterations;
            r.residual = fp.residual;
            let (below, above) = sandwich_margins(rmdp, cfg, &fp.value)?;
            r.certificates.push(Certificate::at_most("sandwich_lower_violation", -below, 1e-9));
            r.certificates.push(Certificate::at_most("sandwich_upper_violation", -above, 1e-9));
            finish(r, start, tol)
        }
        Method::Cvx => {
            let cfg = require(cfg, method)?;
            solve_convex_program(rmdp, cfg, &PenaltyOptions::default())?.1
        }
        Method::CvxPoly => {
            let cfg = require(cfg, method)?;
            let prmdp = PolyhedralRmdp::from_rmdp(rmdp)
                .map_err(|e| RmdpError::Unsupported(format!("cvx-poly needs (s,a)-rectangular sets: {e}")))?;
            solve_concise_program(&prmdp, cfg, &PenaltyOptions::default())?.2
        }
    };
    Ok(report)
}

fn lp_status(status: &rmdp_core::numerics::LpStatus) -> Result<()> {
    match status {
        rmdp_core::numerics::LpStatus::Optimal => Ok(()),
        other => Err(RmdpError::NumericalBreakdown(format!("LP returned {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub holds: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, limit, holds: value <= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub methods: Vec<SolveReport>,
    pub checks: Vec<Check>,
    /// Checks that could not run, with the reason.
    pub skipped: Vec<String>,
}

impl ValidationReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Runs every applicable method and cross-checks the results.
pub fn cmd_validate(
    inst: &Instance,
    tol: f64,
    cfg: Option<&RegularizationConfig>,
    seed: u64,
) -> Result<ValidationReport> {
    let rmdp = &inst.rmdp;
    let mut report = ValidationReport { methods: Vec::new(), checks: Vec::new(), skipped: Vec::new() };
    let agree = 1e-6_f64.max(100.0 * tol);
    let run = |m: Method, report: &mut ValidationReport| -> Result<Option<SolveReport>> {
        match cmd_solve(inst, m, tol, cfg) {
            Ok(r) => {
                report.methods.push(r.clone());
                Ok(Some(r))
            }
            Err(e @ (RmdpError::Unsupported(_) | RmdpError::OverflowRisk { .. })) => {
                report.skipped.push(format!("{}: {e}", m.name()));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    let nominal: Vec<SolveReport> = [Method::Vi, Method::Pi, Method::LpPrimal, Method::LpDual]
        .into_iter()
        .map(|m| run(m, &mut report))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for r in &nominal[1..] {
        report.checks.push(Check::at_most(format!("vi_vs_{}", r.method), inf_dist(&nominal[0].value, &r.value), agree));
    }
    let lp_gap = (nominal[2].objective - nominal[3].objective).abs();
    report.checks.push(Check::at_most("lp_primal_vs_dual_objective", lp_gap, agree));

    let rvi = run(Method::Rvi, &mut report)?.expect("robust value iteration always applies");
    if let Some(rpi) = run(Method::Rpi, &mut report)? {
        report.checks.push(Check::at_most("rvi_vs_rpi", inf_dist(&rvi.value, &rpi.value), agree));
    }
    let pessimism = rvi.value.iter().zip(&nominal[0].value).map(|(r, n)| r - n).fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check::at_most("robust_below_nominal", pessimism, agree));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts = [0.5, 1.0, 5.0];
    let robust_op = |v: &[f64]| rmdp.robust_bellman(v);
    let v_star = rmdp.robust_value_iteration(1e-12)?.value;
    let samples = contraction_samples(robust_op, &v_star, &shifts, 100, &mut rng)?;
    let linear = |v: &[f64]| dot(&rmdp.base.initial, v);
    let check = contraction_program_check(robust_op, linear, &v_star, &samples, 1e-9)?;
    report.checks.push(Check::at_most("contraction_program_violations", check.violations as f64, 0.0));

    let Some(cfg) = cfg else {
        report.skipped.push("regularized checks: no regularization configured".into());
        return Ok(report);
    };
    let Some(reg) = run(Method::RegFp, &mut report)? else {
        return Ok(report);
    };
    let (below, above) = sandwich_margins(rmdp, cfg, &reg.value)?;
    report.checks.push(Check::at_most("sandwich_lower_violation", -below, 1e-9));
    report.checks.push(Check::at_most("sandwich_upper_violation", -above, 1e-9));
    let na = rmdp.n_actions();
    let bound = (na as f64).ln() / (cfg.b * (1.0 - rmdp.discount()));
    report.checks.push(Check::at_most("value_gap_bound", inf_dist(&rvi.value, &reg.value), bound + agree));
    let above_robust = reg.value.iter().zip(&rvi.value).map(|(r, v)| r - v).fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check::at_most("regularized_below_robust", above_robust, agree));
    if na == 1 {
        let t = rmdp.robust_bellman(&reg.value)?;
        let tt = regularized_bellman(rmdp, cfg, &reg.value)?;
        report.checks.push(Check::at_most("single_action_equality", inf_dist(&t, &tt), 1e-9));
    }

    let scale = reg.value.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let cvx = run(Method::Cvx, &mut report)?;
    if let Some(cvx) = &cvx {
        report.checks.push(Check::at_most("reg_fp_vs_cvx", inf_dist(&reg.value, &cvx.value) / scale, 1e-4));
        report.checks.push(Check::at_most("cvx_feasibility", cvx.residual, 1e-6));
    }
    if let Some(poly) = run(Method::CvxPoly, &mut report)? {
        report.checks.push(Check::at_most("reg_fp_vs_cvx_poly", inf_dist(&reg.value, &poly.value) / scale, 1e-3));
    }
    Ok(report)
}

/// Parses `v1;v2` where each endpoint is a comma-separated vector.
pub fn parse_endpoints(text: &str, n_states: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let parts: Vec<&str> = text.split(';').collect();
    if parts.len() != 2 {
        return Err(RmdpError::Validation(format!("endpoints must look like 'v1;v2', got '{text}'")));
    }
    let parse = |p: &str| -> Result<Vec<f64>> {
        let v = p
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| RmdpError::Validation(format!("bad endpoint entry '{}'", x.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != n_states {
            return Err(RmdpError::Validation(format!(
                "endpoint '{p}' has {} entries, the instance has {n_states} states",
                v.len()
            )));
        }
        Ok(v)
    };
    Ok((parse(parts[0])?, parse(parts[1])?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub operator: ProbeOperator,
    pub state: usize,
    pub samples: usize,
    /// Endpoints in value space, before any change of variables.
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub curvature: CurvatureReport,
    pub csv: PathBuf,
}

/// Path of the JSON verdict written next to a probe CSV.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Samples `operator` along the segment, writes `theta,value` rows to `out`
/// and the curvature verdict to [`sidecar_path`]. Without explicit
/// endpoints the segment runs from the robust value function to its
/// reversal.
pub fn cmd_probe(
    inst: &Instance,
    operator: ProbeOperator,
    state: usize,
    endpoints: Option<(Vec<f64>, Vec<f64>)>,
    n: usize,
    out: &Path,
) -> Result<ProbeSummary> {
    let rmdp = &inst.rmdp;
    let (v1, v2) = match endpoints {
        Some(e) => e,
        None => {
            let v = rmdp.robust_value_iteration(1e-10)?.value;
            let rev = v.iter().rev().cloned().collect();
            (v, rev)
        }
    };
    let (x1, x2) = (operator.transform_point(&v1)?, operator.transform_point(&v2)?);
    let samples = probe_operator(rmdp, &operator, state, &x1, &x2, n)?;
    let curvature = classify_curvature(&samples, DEFAULT_CURVATURE_TOL)?;
    let mut csv = String::from("theta,value\n");
    for s in &samples {
        if !s.value.is_finite() {
            return Err(RmdpError::NumericalBreakdown(format!("non-finite sample at theta {}", s.theta)));
        }
        writeln!(csv, "{:.16e},{:.16e}", s.theta, s.value).expect("writing to a String");
    }
    fs::write(out, csv).map_err(|e| RmdpError::Io(format!("{}: {e}", out.display())))?;
    let summary = ProbeSummary { operator, state, samples: n, v1, v2, curvature, csv: out.to_path_buf() };
    let side = sidecar_path(out);
    let json = serde_json::to_string_pretty(&summary).expect("probe summaries serialise");
    fs::write(&side, json).map_err(|e| RmdpError::Io(format!("{}: {e}", side.display())))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverflowWarning {
    pub exponent: f64,
    pub limit: f64,
    pub suggestion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub b: f64,
    pub epsilon: Option<f64>,
    /// `log|A| / (b(1−λ))`
    pub predicted_bound: f64,
    /// `‖v* − ṽ*‖∞`; absent when the guard trips.
    pub measured_gap: Option<f64>,
    /// `b·max r`, the largest exponent in the regularized terms.
    pub reward_exponent: f64,
    /// `b·max r/(1−λ)`, the largest exponent in the transformed program.
    pub value_exponent: f64,
    pub overflow: Option<OverflowWarning>,
}

/// Strength, predicted and measured approximation gap, and the overflow
/// guard. `b` wins over `epsilon`; with neither the instance's own
/// strength is used.
pub fn cmd_bounds(inst: &Instance, epsilon: Option<f64>, b: Option<f64>, tol: f64) -> Result<BoundsReport> {
    let rmdp = &inst.rmdp;
    let (lambda, na) = (rmdp.discount(), rmdp.n_actions());
    let b = match (b, epsilon) {
        (Some(b), _) => b,
        (None, Some(eps)) => auto_strength(eps, lambda, na)?,
        (None, None) => {
            inst.regularization
                .as_ref()
                .ok_or_else(|| RmdpError::Validation("bounds need --epsilon, --b or a regularized instance".into()))?
                .b
        }
    };
    if let Some(eps) = epsilon {
        choose_b(eps, lambda, na)?;
    }
    let r_max = rmdp.base.max_reward();
    let reward_exponent = b * r_max;
    let value_exponent = reward_exponent / (1.0 - lambda);
    let predicted_bound = (na as f64).ln() / (b * (1.0 - lambda));
    let overflow = (reward_exponent > EXPONENT_LIMIT).then(|| OverflowWarning {
        exponent: reward_exponent,
        limit: EXPONENT_LIMIT,
        suggestion: format!(
            "divide rewards by {r_max} (the bundled example1-rescaled does this) or use b ≤ {:.6}",
            EXPONENT_LIMIT / r_max
        ),
    });
    let measured_gap = if overflow.is_some() {
        None
    } else {
        let baseline = inst
            .regularization
            .as_ref()
            .map_or_else(|| Policy::uniform(rmdp.n_states(), na), |c| c.baseline.clone());
        let cfg = RegularizationConfig::new(baseline, b)?;
        let v = rmdp.robust_value_iteration(tol)?.value;
        let vt = regularized_fixed_point(rmdp, &cfg, tol)?.value;
        Some(inf_dist(&v, &vt))
    };
    Ok(BoundsReport { b, epsilon, predicted_bound, measured_gap, reward_exponent, value_exponent, overflow })
}
