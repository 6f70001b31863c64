//! Command-line runner for the dynamic-accuracy trust-region method.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use trqda_harness::config::{read_pairs, RunSpec, StudyMode};
use trqda_harness::io::{write_history_file, write_json, write_rows};
use trqda_harness::study::{cost_savings_report, eps_scaling_study, execute, execute_all, seed_sweep, Execution};
use trqda_harness::{exit, HarnessError};

#[derive(Parser)]
#[command(name = "trqda")]
#[command(about = "Trust-region minimization with dynamically accurate evaluations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run once and write the iteration CSV and a JSON summary
    Run {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Sweep over tolerances (or seeds) and fit the evaluation growth
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Sweep over seeds at a fixed tolerance instead
        #[arg(long)]
        by_seed: bool,
    },
    /// Run and check the trajectory against the exact problem and the bounds
    Audit {
        #[command(flatten)]
        spec: SpecArgs,
        /// Audit the built-in suite of runs instead of a single spec
        #[arg(long)]
        suite: bool,
    },
    /// Compare the cost of dynamic accuracy with a fixed-accuracy baseline
    Compare {
        #[command(flatten)]
        spec: SpecArgs,
    },
}

/// Settings shared by every subcommand. Flags override the spec file.
#[derive(Args)]
struct SpecArgs {
    /// Spec file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem name: quadratic, rosenbrock, saddle, quartic, finite_sum_logistic
    #[arg(long)]
    problem: Option<String>,
    /// Problem dimension
    #[arg(long)]
    dim: Option<String>,
    /// Starting point, comma separated
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Model order
    #[arg(long)]
    q: Option<String>,
    /// Tolerances per order, comma separated (one value applies to all)
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    delta0: Option<String>,
    #[arg(long)]
    delta_max: Option<String>,
    #[arg(long)]
    vartheta: Option<String>,
    #[arg(long)]
    eta1: Option<String>,
    #[arg(long)]
    eta2: Option<String>,
    #[arg(long)]
    gamma1: Option<String>,
    #[arg(long)]
    gamma2: Option<String>,
    #[arg(long)]
    gamma3: Option<String>,
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    varsigma: Option<String>,
    #[arg(long)]
    gamma_zeta: Option<String>,
    #[arg(long)]
    kappa_zeta: Option<String>,
    #[arg(long)]
    zeta0: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    max_iterations: Option<String>,
    /// Upper limit on the accuracy of function values
    #[arg(long)]
    f_accuracy_cap: Option<String>,
    /// Oracle policy: none, adversarial, truncate, gaussian_clipped, subsample
    #[arg(long)]
    policy: Option<String>,
    /// Cost model: unit, log or power:<p>
    #[arg(long)]
    cost_model: Option<String>,
    /// Derivative orders evaluated exactly, comma separated
    #[arg(long)]
    exact_orders: Option<String>,
    /// Tolerance grid: comma list or `a..b` (three points per decade)
    #[arg(long)]
    eps_grid: Option<String>,
    /// Seeds of a sweep, comma separated
    #[arg(long)]
    seeds: Option<String>,
    /// Audit runs: true or false
    #[arg(long)]
    audit: Option<String>,
    /// Output directory (default: $TRQDA_OUTPUT_DIR or ./trqda_out)
    #[arg(long)]
    output_dir: Option<String>,
    /// Iteration CSV path
    #[arg(long)]
    csv: Option<String>,
    /// JSON summary path
    #[arg(long)]
    json: Option<String>,
    /// Any other setting, as KEY=VALUE
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

macro_rules! push_flags {
    ($args:expr, $out:ident; $($f:ident),* $(,)?) => {
        $( if let Some(v) = &$args.$f { $out.push((stringify!($f).to_string(), v.clone())); } )*
    };
}

impl SpecArgs {
    fn into_spec(self, mode: StudyMode) -> Result<RunSpec, HarnessError> {
        let mut pairs = match &self.config {
            Some(p) => read_pairs(p)?,
            None => Vec::new(),
        };
        push_flags!(self, pairs; problem, dim, x0, q, eps, delta0, delta_max, vartheta, eta1, eta2,
            gamma1, gamma2, gamma3, omega, varsigma, gamma_zeta, kappa_zeta, zeta0, seed,
            max_iterations, f_accuracy_cap, policy, cost_model, exact_orders, eps_grid, seeds,
            audit, output_dir, csv, json);
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut spec = RunSpec::from_pairs(&pairs)?;
        spec.mode = mode;
        spec.validate()?;
        Ok(spec)
    }
}

fn status(e: &Execution) -> i32 {
    if !e.result.terminated {
        exit::CAP_EXHAUSTED
    } else if e.audit_passed() == Some(false) {
        exit::AUDIT_VIOLATION
    } else {
        exit::SUCCESS
    }
}

fn print_audit(e: &Execution) {
    let Some(a) = &e.audit else { return };
    println!("audit of {} (L_f = {:.4e}{})", e.spec.stem(), a.l_f, if a.l_f_estimated { ", sampled" } else { "" });
    for c in &a.checks {
        let verdict = match c.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "n/a ",
        };
        println!("  {verdict}  {:<24} {}", c.name, c.detail);
    }
}

fn cmd_run(spec: RunSpec) -> Result<i32, HarnessError> {
    let e = execute(&spec)?;
    let csv = spec.csv_path();
    let json = spec.json_path();
    write_history_file(&csv, &e.result.history)?;
    write_json(&json, &e.summary())?;
    let s = e.summary();
    println!(
        "{}: terminated = {}, iterations = {}, f evaluations = {}, derivative evaluations = {}",
        spec.stem(),
        s.terminated,
        s.iterations,
        s.f_evals,
        s.deriv_evals
    );
    println!("x_eps = {:?}, delta_eps = {:.4e}, f = {:.6e}", s.x_eps, s.delta_eps, s.f_exact);
    if let Some(p) = s.audit_passed {
        println!("audit: {}", if p { "passed" } else { "VIOLATIONS" });
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(status(&e))
}

fn cmd_sweep(mut spec: RunSpec, by_seed: bool) -> Result<i32, HarnessError> {
    if !spec.explicit.contains("audit") {
        spec.audit = false;
    }
    let rows_path = spec.output_dir.join(format!("sweep_{}_q{}.csv", spec.problem, spec.config.q));
    let json_path = spec.output_dir.join(format!("sweep_{}_q{}.json", spec.problem, spec.config.q));
    let rows = if by_seed {
        let rows = seed_sweep(&spec, &spec.seeds)?;
        write_json(&json_path, &rows)?;
        rows
    } else {
        let rep = eps_scaling_study(&spec, &spec.eps_grid, &spec.seeds)?;
        write_json(&json_path, &rep)?;
        for x in &rep.excluded {
            println!("excluded: eps = {:e}, seed = {}: {}", x.eps, x.seed, x.reason);
        }
        match rep.slope {
            Some(s) => println!(
                "slope of log(evaluations) vs log(1/eps): {s:.3} (limit {:.2}): {}",
                rep.threshold,
                if rep.pass { "PASS" } else { "FAIL" }
            ),
            None => println!("slope: not enough terminated runs to fit"),
        }
        rep.rows
    };
    write_rows(&rows_path, &rows)?;
    println!("{:>10} {:>6} {:>10} {:>10} {:>12}", "eps", "seed", "iters", "evals", "cost");
    for r in &rows {
        println!("{:>10.3e} {:>6} {:>10} {:>10} {:>12.4e}", r.eps, r.seed, r.iterations, r.evaluations, r.total_cost);
    }
    println!("wrote {} and {}", rows_path.display(), json_path.display());
    let code = if rows.iter().any(|r| !r.terminated) {
        exit::CAP_EXHAUSTED
    } else if rows.iter().any(|r| r.audit_passed == Some(false)) {
        exit::AUDIT_VIOLATION
    } else {
        exit::SUCCESS
    };
    Ok(code)
}

fn cmd_audit(mut spec: RunSpec, suite: bool) -> Result<i32, HarnessError> {
    spec.audit = true;
    if !suite {
        let e = execute(&spec)?;
        write_json(&spec.json_path(), &e.summary())?;
        print_audit(&e);
        return Ok(status(&e));
    }
    let specs: Vec<RunSpec> = trqda_harness::study::standard_suite()
        .into_iter()
        .map(|mut s| {
            s.output_dir = spec.output_dir.clone();
            s
        })
        .collect();
    let mut code = exit::SUCCESS;
    let mut summaries = Vec::new();
    for res in execute_all(&specs) {
        let e = res?;
        let c = status(&e);
        println!(
            "{:<44} iterations {:>6}  audit {}",
            e.spec.stem(),
            e.result.iterations(),
            if c == exit::SUCCESS { "passed" } else { "FAILED" }
        );
        if c != exit::SUCCESS {
            print_audit(&e);
            code = code.max(c);
        }
        summaries.push(e.summary());
    }
    write_json(&spec.output_dir.join("audit_suite.json"), &summaries)?;
    Ok(code)
}

fn cmd_compare(spec: RunSpec) -> Result<i32, HarnessError> {
    let rep = cost_savings_report(&spec)?;
    let path = spec.output_dir.join(format!("compare_{}.json", spec.stem()));
    write_json(&path, &rep)?;
    println!("cost model {}", rep.cost_model);
    println!("dynamic:  {:>8} evaluations, cost {:.4e}", rep.dynamic.evaluations, rep.dynamic.total_cost);
    println!("baseline: {:>8} evaluations, cost {:.4e}", rep.baseline.evaluations, rep.baseline.total_cost);
    println!("cost ratio {:.4}, evaluation ratio {:.4}", rep.cost_ratio, rep.calls_ratio);
    println!("wrote {}", path.display());
    Ok(exit::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run { spec } => cmd_run(spec.into_spec(StudyMode::Single)?),
        Command::Sweep { spec, by_seed } => {
            let mode = if by_seed { StudyMode::SeedSweep } else { StudyMode::EpsSweep };
            cmd_sweep(spec.into_spec(mode)?, by_seed)
        }
        Command::Audit { spec, suite } => cmd_audit(spec.into_spec(StudyMode::Audit)?, suite),
        Command::Compare { spec } => cmd_compare(spec.into_spec(StudyMode::Single)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { exit::SUCCESS as u8 });
        }
    };
    let code = match dispatch(cli) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
