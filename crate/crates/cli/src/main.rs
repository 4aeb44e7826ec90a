use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use rmdp_cli::{
    cmd_bounds, cmd_probe, cmd_solve, cmd_validate, parse_endpoints, regularization_for, sidecar_path, Method,
    StrengthArg,
};
use rmdp_core::curvature::ProbeOperator;
use rmdp_core::instance::{bundled_names, load_instance, Instance};
use rmdp_core::RmdpError;

const EXIT_INPUT: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "rmdp", version, about = "Solve, cross-check and probe robust MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct InstanceArgs {
    /// Instance JSON file, or `bundled:NAME`.
    #[arg(long)]
    instance: String,
}

#[derive(clap::Args)]
struct StrengthArgs {
    /// Regularization strength, or `auto` to derive it from epsilon.
    #[arg(long)]
    b: Option<StrengthArg>,
    /// Target accuracy of the regularized value function.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and print its report as JSON.
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        /// vi, pi, lp-primal, lp-dual, rvi, rpi, reg-fp, cvx or cvx-poly.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        strength: StrengthArgs,
    },
    /// Run every applicable solver and check that they agree.
    Validate {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        strength: StrengthArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample one component of an operator along a segment.
    Probe {
        #[command(flatten)]
        instance: InstanceArgs,
        /// T, T-opt, T-tilde, t-tilde, t, T-l2, t-prime, t-double-prime, T-kl or T-kl-exp.
        #[arg(long)]
        operator: String,
        /// Zero-based state index.
        #[arg(long, default_value_t = 0)]
        state: usize,
        /// Value-space endpoints `v1;v2`, e.g. `10.5,0.85;0.5,4`.
        #[arg(long)]
        endpoints: Option<String>,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        strength: StrengthArgs,
        /// Scale of the quadratic change of variables.
        #[arg(long, default_value_t = 1.0)]
        b_phi: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report the regularization strength, gap bound and overflow guard.
    Bounds {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// List the bundled instances.
    List,
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialise"));
}

fn exit_code(err: &RmdpError) -> u8 {
    if err.is_convergence_failure() {
        EXIT_NONCONVERGENCE
    } else {
        EXIT_INPUT
    }
}

fn load(args: &InstanceArgs) -> Result<Instance, RmdpError> {
    load_instance(&args.instance)
}

fn run(cli: Cli) -> Result<u8, RmdpError> {
    match cli.command {
        Command::Solve { instance, method, tol, strength } => {
            let inst = load(&instance)?;
            let method: Method = method.parse()?;
            let cfg = regularization_for(&inst, strength.b, strength.epsilon)?;
            let report = cmd_solve(&inst, method, tol, cfg.as_ref())?;
            print_json(&report);
            Ok(if report.status == rmdp_core::SolveStatus::Converged { 0 } else { EXIT_NONCONVERGENCE })
        }
        Command::Validate { instance, tol, strength, seed } => {
            let inst = load(&instance)?;
            let cfg = regularization_for(&inst, strength.b, strength.epsilon)?;
            let report = cmd_validate(&inst, tol, cfg.as_ref(), seed)?;
            print_json(&report);
            for c in report.checks.iter().filter(|c| !c.holds) {
                eprintln!("FAILED {}: {:e} > {:e}", c.name, c.value, c.limit);
            }
            Ok(if report.all_hold() { 0 } else { EXIT_VALIDATION })
        }
        Command::Probe { instance, operator, state, endpoints, samples, out, strength, b_phi, seed: _ } => {
            let inst = load(&instance)?;
            let b = match strength.b {
                Some(StrengthArg::Value(b)) => b,
                _ => regularization_for(&inst, strength.b, strength.epsilon)?.map_or(1.0, |c| c.b),
            };
            let op = ProbeOperator::from_name(&operator, b, b_phi)?;
            let ends = endpoints.map(|e| parse_endpoints(&e, inst.rmdp.n_states())).transpose()?;
            let summary = cmd_probe(&inst, op, state, ends, samples, &out)?;
            println!(
                "{} (state {}, {} samples) -> {}; wrote {} and {}",
                operator,
                state,
                samples,
                summary.curvature.verdict.as_str(),
                out.display(),
                sidecar_path(&out).display()
            );
            Ok(0)
        }
        Command::Bounds { instance, epsilon, b, tol } => {
            let inst = load(&instance)?;
            let report = cmd_bounds(&inst, epsilon, b, tol)?;
            print_json(&report);
            if let Some(w) = &report.overflow {
                eprintln!("warning: overflow risk, exponent {:.3} exceeds {}; {}", w.exponent, w.limit, w.suggestion);
            }
            Ok(0)
        }
        Command::List => {
            for name in bundled_names() {
                println!("bundled:{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
