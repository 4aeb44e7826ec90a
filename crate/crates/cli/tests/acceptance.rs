use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmdp_cli::cmd_bounds;
use rmdp_core::convex::{
    contraction_program_check, contraction_samples, solve_convex_program, supergradient_t_tilde, PenaltyOptions,
};
use rmdp_core::curvature::{classify_curvature, probe_operator, Curvature, CurvatureReport, ProbeOperator};
use rmdp_core::instance::bundled;
use rmdp_core::numerics::{dot, inf_dist, kl_divergence, scaled_log_sum_exp, softmax_weights, solve_lp};
use rmdp_core::polyhedral::{conjugate_f, dual_inner_value, solve_concise_program, PolyhedralRmdp};
use rmdp_core::probes::kl_transition_inner;
use rmdp_core::regularized::{choose_b, exp_b, regularized_bellman, regularized_fixed_point, t_tilde, RegularizationConfig};
use rmdp_core::{Rmdp, RmdpError, UncertaintySet};

type Outcome = Result<String, String>;

const V1: [f64; 2] = [10.5, 0.85];
const V2: [f64; 2] = [0.5, 4.0];

fn example() -> Rmdp {
    bundled("example1").unwrap().rmdp
}

fn rescaled() -> Rmdp {
    bundled("example1-rescaled").unwrap().rmdp
}

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: RmdpError) -> String {
    e.to_string()
}

fn probe(rmdp: &Rmdp, op: ProbeOperator, s: usize, v1: &[f64], v2: &[f64]) -> Result<CurvatureReport, String> {
    let x1 = op.transform_point(v1).map_err(err)?;
    let x2 = op.transform_point(v2).map_err(err)?;
    let samples = probe_operator(rmdp, &op, s, &x1, &x2, 201).map_err(err)?;
    classify_curvature(&samples, 1e-7).map_err(err)
}

fn strictly_neither(r: &CurvatureReport) -> bool {
    r.verdict == Curvature::Neither && r.convex_violation > 1e-6 && r.concave_violation > 1e-6
}

fn describe(r: &CurvatureReport) -> String {
    format!("{} (margins {:.2e}, {:.2e})", r.verdict.as_str(), r.convex_violation, r.concave_violation)
}

fn robust_probe_is_neither() -> Outcome {
    let r = probe(&example(), ProbeOperator::Robust, 0, &V1, &V2)?;
    ensure(strictly_neither(&r), describe(&r))
}

fn regularized_probe_is_neither() -> Outcome {
    let mut out = Vec::new();
    let mut ok = true;
    for b in [5.0, 10.0] {
        let r = probe(&example(), ProbeOperator::Regularized { b }, 0, &V1, &V2)?;
        ok &= strictly_neither(&r);
        out.push(format!("b={b}: {}", describe(&r)));
    }
    ensure(ok, out.join("; "))
}

fn transformed_probe_is_concave() -> Outcome {
    let rmdp = example();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    let mut ok = true;
    for b in [5.0, 10.0] {
        for s in 0..2 {
            let r = probe(&rmdp, ProbeOperator::Transformed { b }, s, &V1, &V2)?;
            ok &= r.verdict == Curvature::Concave;
            out.push(format!("b={b} s={s}: {}", r.verdict.as_str()));
        }
        let cfg = RegularizationConfig::uniform(2, 3, b).map_err(err)?;
        let mut violations = 0;
        for _ in 0..500 {
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..50.0)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..50.0)).collect();
            let (x, y) = (exp_b(&v, b).map_err(err)?, exp_b(&w, b).map_err(err)?);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, c)| 0.5 * (a + c)).collect();
            let (tx, ty, tm) = (
                t_tilde(&rmdp, &cfg, &x).map_err(err)?,
                t_tilde(&rmdp, &cfg, &y).map_err(err)?,
                t_tilde(&rmdp, &cfg, &mid).map_err(err)?,
            );
            for s in 0..2 {
                let scale = tx[s].abs().max(ty[s].abs()).max(tm[s].abs());
                if 0.5 * (tx[s] + ty[s]) - tm[s] > 1e-9 * scale {
                    violations += 1;
                }
            }
        }
        ok &= violations == 0;
        out.push(format!("b={b}: {violations} midpoint violations in 500 pairs"));
    }
    ensure(ok, out.join("; "))
}

fn sandwich_holds() -> Outcome {
    let rmdp = example();
    let cfg = RegularizationConfig::uniform(2, 3, 5.0).map_err(err)?;
    let gap = 3f64.ln() / 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100 {
        let v: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..60.0)).collect();
        let t = rmdp.robust_bellman(&v).map_err(err)?;
        let tt = regularized_bellman(&rmdp, &cfg, &v).map_err(err)?;
        for s in 0..2 {
            lo = lo.min(t[s] - tt[s]);
            hi = hi.max(t[s] - tt[s]);
        }
    }
    ensure(lo >= 0.0 && hi <= gap + 1e-9, format!("T - T~ in [{lo:.3e}, {hi:.6}], bound {gap:.6}"))
}

fn value_gap_within_epsilon() -> Outcome {
    let rmdp = rescaled();
    let b = choose_b(0.05, 0.8, 3).map_err(err)?;
    let cfg = RegularizationConfig::uniform(2, 3, b).map_err(err)?;
    let v = rmdp.robust_value_iteration(1e-10).map_err(err)?.value;
    let vt = regularized_fixed_point(&rmdp, &cfg, 1e-10).map_err(err)?.value;
    let gap = inf_dist(&v, &vt);
    let below = vt.iter().zip(&v).all(|(a, c)| *a <= c + 1e-9);
    ensure(gap <= 0.05 && below, format!("b = {b:.3}, gap {gap:.3e}, regularized below robust: {below}"))
}

fn cvx_target() -> Result<(Vec<f64>, Vec<f64>, f64), String> {
    let rmdp = rescaled();
    let cfg = RegularizationConfig::uniform(2, 3, 10.0).map_err(err)?;
    let fp = regularized_fixed_point(&rmdp, &cfg, 1e-12).map_err(err)?;
    let target = exp_b(&fp.value, 10.0).map_err(err)?;
    let (x, report) = solve_convex_program(&rmdp, &cfg, &PenaltyOptions::default()).map_err(err)?;
    Ok((x, target, report.residual))
}

fn convex_program_matches_fixed_point() -> Outcome {
    let (x, target, residual) = cvx_target()?;
    let scale = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = inf_dist(&x, &target) / scale;
    ensure(rel <= 1e-4 && residual <= 1e-6, format!("relative error {rel:.3e}, residual {residual:.3e}"))
}

fn concise_program_matches_convex_program() -> Outcome {
    let (x, _, _) = cvx_target()?;
    let rmdp = rescaled();
    let cfg = RegularizationConfig::uniform(2, 3, 10.0).map_err(err)?;
    let prmdp = PolyhedralRmdp::from_rmdp(&rmdp).map_err(err)?;
    let (xp, duals, _) = solve_concise_program(&prmdp, &cfg, &PenaltyOptions::default()).map_err(err)?;
    let (a, c): (f64, f64) = (x.iter().sum(), xp.iter().sum());
    let rel = (a - c).abs() / a;
    ensure(
        rel <= 1e-3 && duals.is_nonnegative(),
        format!("sum x {a:.8} vs {c:.8}, relative {rel:.3e}, duals nonnegative: {}", duals.is_nonnegative()),
    )
}

fn strong_duality_on_polyhedral_sets() -> Outcome {
    let rmdp = example().to_polyhedral().map_err(err)?;
    let sets = rmdp.sa_sets().map_err(err)?.clone();
    let lambda = rmdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(1.0..30.0)).collect();
        let set: &UncertaintySet = &sets[k % 2][(k / 2) % 3];
        let log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let (lp_min, _) = set.inner_min(&log_x).map_err(err)?;
        let primal = (lambda * lp_min).exp();
        let dual = dual_inner_value(&x, set, lambda, 1e-12).map_err(err)?.value;
        worst = worst.max((primal - dual).abs() / primal.max(1.0));
    }
    ensure(worst <= 1e-6, format!("largest relative difference {worst:.3e} over 50 points"))
}

fn conjugate_closed_form() -> Outcome {
    let lambda = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_closed = 0.0f64;
    let mut worst_sample = f64::NEG_INFINITY;
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(1.1..20.0)).collect();
        let ell: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        for alpha in [0.0, lambda, 2.0 * lambda] {
            let y: Vec<f64> = ell.iter().map(|l| alpha * l).collect();
            let r: f64 = alpha / lambda;
            let closed = if r == 0.0 { 0.0 } else { r * r.ln() } - r;
            let value = conjugate_f(&x, &y, lambda);
            worst_closed = worst_closed.max((value - closed).abs());
            for _ in 0..200 {
                let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let lower = dot(&y, &p) - (lambda * dot(&ell, &p)).exp();
                worst_sample = worst_sample.max(lower - value);
            }
        }
        let off_ray: Vec<f64> = ell.iter().enumerate().map(|(i, l)| l + if i == 0 { 0.5 } else { 0.0 }).collect();
        if conjugate_f(&x, &off_ray, lambda) != f64::INFINITY {
            return Err("an off-ray point has a finite conjugate".into());
        }
    }
    ensure(
        worst_closed <= 1e-12 && worst_sample <= 1e-7,
        format!("closed-form error {worst_closed:.3e}, sampled excess {worst_sample:.3e}, off-ray +inf"),
    )
}

fn log_sum_exp_is_the_entropy_supremum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut excess, mut attained) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..20 {
        let n = rng.gen_range(2..=4);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b = rng.gen_range(0.2..10.0);
        let value = scaled_log_sum_exp(&w, &y, b).map_err(err)?;
        let entropy = |q: &[f64]| dot(q, &y) - kl_divergence(q, &w) / b;
        for _ in 0..10_000 {
            let e: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-12f64..1.0).ln()).collect();
            let s: f64 = e.iter().sum();
            let q: Vec<f64> = e.iter().map(|v| v / s).collect();
            excess = excess.max(entropy(&q) - value);
        }
        let q_star = softmax_weights(&w, &y, b).map_err(err)?;
        attained = attained.max((entropy(&q_star) - value).abs());
    }
    ensure(
        excess <= 1e-9 && attained <= 1e-9,
        format!("sampled excess {excess:.3e}, maximiser error {attained:.3e}"),
    )
}

fn mdp_lp_duality() -> Outcome {
    let mdp = example().base;
    let v = mdp.value_iteration(None, 1e-10).map_err(err)?.value;
    let target = dot(&mdp.initial, &v);
    let primal = solve_lp(&mdp.build_primal_lp()).map_err(err)?;
    let dual = solve_lp(&mdp.build_dual_lp()).map_err(err)?;
    let mass: f64 = dual.point.iter().sum();
    let ok = (primal.value - target).abs() <= 1e-8
        && (dual.value - target).abs() <= 1e-8
        && (mass - 5.0).abs() <= 1e-8;
    ensure(
        ok,
        format!("primal {:.10}, dual {:.10}, alpha'v* {target:.10}, occupancy mass {mass:.10}", primal.value, dual.value),
    )
}

fn contraction_programs_hold() -> Outcome {
    let rmdp = example();
    let b = 5.0;
    let cfg = RegularizationConfig::uniform(2, 3, b).map_err(err)?;
    let initial = rmdp.base.initial.clone();
    let linear = |v: &[f64]| dot(&initial, v);
    let exponential = |v: &[f64]| v.iter().map(|x| (b * x).exp()).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shifts = [0.5, 1.0, 5.0];
    let mut lines = Vec::new();
    let mut total = 0;

    let nominal = |v: &[f64]| Ok(rmdp.base.bellman(v));
    let robust = |v: &[f64]| rmdp.robust_bellman(v);
    let regularized = |v: &[f64]| regularized_bellman(&rmdp, &cfg, v);
    let fixed = [
        rmdp.base.value_iteration(None, 1e-13).map_err(err)?.value,
        rmdp.robust_value_iteration(1e-13).map_err(err)?.value,
        regularized_fixed_point(&rmdp, &cfg, 1e-13).map_err(err)?.value,
    ];
    let ops: [(&str, &dyn Fn(&[f64]) -> rmdp_core::Result<Vec<f64>>); 3] =
        [("nominal", &nominal), ("robust", &robust), ("regularized", &regularized)];
    for ((name, op), v_star) in ops.iter().zip(&fixed) {
        let samples = contraction_samples(op, v_star, &shifts, 100, &mut rng).map_err(err)?;
        for (g_name, g) in [("linear", &linear as &dyn Fn(&[f64]) -> f64), ("exp", &exponential)] {
            let check = contraction_program_check(op, g, v_star, &samples, 1e-9).map_err(err)?;
            total += check.violations;
            lines.push(format!(
                "{name}/{g_name}: {}+{} samples, {} violations",
                check.upper_samples, check.lower_samples, check.violations
            ));
        }
    }
    ensure(total == 0, lines.join("; "))
}

fn robust_methods_agree() -> Outcome {
    let rmdp = example();
    let rvi = rmdp.robust_value_iteration(1e-10).map_err(err)?.value;
    let (policy, rpi) = rmdp.robust_policy_iteration(1e-10).map_err(err)?;
    let greedy = rmdp.robust_greedy_policy(&rvi).map_err(err)?;
    let eval = rmdp.robust_policy_evaluation(&greedy, 1e-10).map_err(err)?.value;
    let worst = inf_dist(&rvi, &rpi.value).max(inf_dist(&rvi, &eval));
    ensure(
        worst <= 1e-6 && policy.actions() == greedy.actions(),
        format!("rvi {rvi:.6?}, largest difference {worst:.3e}"),
    )
}

fn kl_grid(v: &[f64], set: &UncertaintySet, nominal: &[f64], b: f64) -> f64 {
    let (a, c) = set.constraint_rows();
    let n = 10_000;
    (0..=n)
        .map(|k| {
            let p0 = k as f64 / n as f64;
            [p0, 1.0 - p0]
        })
        .filter(|p| a.iter().zip(&c).all(|(row, ci)| dot(row, p) <= ci + 1e-12))
        .map(|p| dot(&p, v) + kl_divergence(&p, nominal) / b)
        .fold(f64::INFINITY, f64::min)
}

fn alternative_operators() -> Outcome {
    let rmdp = example();
    let mut lines = Vec::new();
    let mut ok = true;
    let cases = [
        ("t at b=0.01", ProbeOperator::Exponentiated { b: 0.01 }, V1.to_vec(), V2.to_vec()),
        ("l2 T~ at b=5", ProbeOperator::L2 { b: 5.0 }, V1.to_vec(), V2.to_vec()),
        ("inner substitution", ProbeOperator::L2Inner { b: 10.0, b_phi: 1.0 }, V1.to_vec(), V2.to_vec()),
        ("outer substitution", ProbeOperator::L2Outer { b: 10.0, b_phi: 0.1 }, vec![1.1, 11.6], vec![15.0, 2.2]),
    ];
    for (name, op, v1, v2) in cases {
        let r = probe(&rmdp, op, 0, &v1, &v2)?;
        ok &= strictly_neither(&r);
        lines.push(format!("{name}: {}", describe(&r)));
    }

    let kl = bundled("tiny-kl").unwrap().rmdp;
    let sets = kl.sa_sets().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let v: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..10.0)).collect();
        let b = rng.gen_range(0.5..5.0);
        for s in 0..2 {
            for a in 0..2 {
                let nominal = &kl.base.transitions[s][a];
                let value = kl_transition_inner(&v, &sets[s][a], nominal, b, 1e-12).map_err(err)?;
                let grid = kl_grid(&v, &sets[s][a], nominal, b);
                worst = worst.max((value - grid).abs());
            }
        }
    }
    ok &= worst <= 1e-4;
    lines.push(format!("KL inner vs grid: {worst:.3e}"));
    ensure(ok, lines.join("; "))
}

fn optimistic_probe_is_convex() -> Outcome {
    let rmdp = example();
    let mut lines = Vec::new();
    let mut ok = true;
    for s in 0..2 {
        let r = probe(&rmdp, ProbeOperator::Optimistic, s, &V1, &V2)?;
        ok &= matches!(r.verdict, Curvature::Convex | Curvature::Affine);
        lines.push(format!("s={s}: {}", r.verdict.as_str()));
    }
    ensure(ok, lines.join("; "))
}

fn supergradient_matches_differences() -> Outcome {
    let rmdp = rescaled();
    let cfg = RegularizationConfig::uniform(2, 3, 4.0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(1.5..40.0)).collect();
        let g = supergradient_t_tilde(&rmdp, &cfg, &x).map_err(err)?;
        for j in 0..2 {
            let h = 1e-6 * x[j];
            let (mut up, mut down) = (x.clone(), x.clone());
            up[j] += h;
            down[j] -= h;
            let (tu, td) = (t_tilde(&rmdp, &cfg, &up).map_err(err)?, t_tilde(&rmdp, &cfg, &down).map_err(err)?);
            for s in 0..2 {
                let fd = (tu[s] - td[s]) / (2.0 * h);
                worst = worst.max((fd - g[s][j]).abs() / fd.abs().max(1e-12));
            }
        }
    }
    ensure(worst <= 1e-4, format!("largest relative error {worst:.3e} over 20 points"))
}

fn overflow_guard_trips() -> Outcome {
    let inst = bundled("example1").unwrap();
    let report = cmd_bounds(&inst, None, Some(110.0), 1e-10).map_err(err)?;
    let Some(w) = &report.overflow else {
        return Err("no overflow warning at b = 110".into());
    };
    let finite = [report.b, report.predicted_bound, report.reward_exponent, report.value_exponent, w.exponent]
        .iter()
        .all(|v| v.is_finite());
    let cfg = RegularizationConfig::uniform(2, 3, 110.0).map_err(err)?;
    let refused = matches!(
        solve_convex_program(&inst.rmdp, &cfg, &PenaltyOptions::default()),
        Err(RmdpError::OverflowRisk { .. })
    );
    ensure(
        (w.exponent - 1210.0).abs() < 1e-9 && finite && report.measured_gap.is_none() && refused,
        format!("exponent {} > {}, report finite: {finite}, convex program refused: {refused}", w.exponent, w.limit),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 17] = [
        ("robust operator probe is neither convex nor concave", robust_probe_is_neither),
        ("regularized operator probe is neither convex nor concave", regularized_probe_is_neither),
        ("transformed operator is concave", transformed_probe_is_concave),
        ("regularized operator is sandwiched below the robust one", sandwich_holds),
        ("regularized values are within epsilon", value_gap_within_epsilon),
        ("convex program recovers the regularized values", convex_program_matches_fixed_point),
        ("concise program matches the convex program", concise_program_matches_convex_program),
        ("strong duality on polyhedral sets", strong_duality_on_polyhedral_sets),
        ("conjugate closed form", conjugate_closed_form),
        ("log-sum-exp is the entropy-regularized supremum", log_sum_exp_is_the_entropy_supremum),
        ("MDP primal and dual linear programs agree", mdp_lp_duality),
        ("fixed points solve the contraction programs", contraction_programs_hold),
        ("robust value and policy iteration agree", robust_methods_agree),
        ("alternative operators are not concave", alternative_operators),
        ("optimistic operator is convex", optimistic_probe_is_convex),
        ("supergradients match finite differences", supergradient_matches_differences),
        ("overflow guard trips before non-finite numbers", overflow_guard_trips),
    ];
    let start = Instant::now();
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let ms = t.elapsed().as_millis();
        match &outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({ms} ms)", k + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail} ({ms} ms)", k + 1);
                failed.push(k + 1);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!("{} of 17 criteria passed in {elapsed:.2} s", 17 - failed.len());
    if !failed.is_empty() || elapsed >= 60.0 {
        eprintln!("failed criteria: {failed:?}, elapsed {elapsed:.1} s");
        std::process::exit(1);
    }
}
