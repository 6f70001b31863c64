//! Single runs, sweeps over tolerances and seeds, and the cost comparison
//! against a fixed-accuracy baseline.

use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use trqda_core::{check_history, run, AuditOptions, AuditReport, BoundConstants, InexactOracle, Policy, Problem, RunResult, TrConfig};

use crate::config::RunSpec;
use crate::HarnessError;

/// A finished run with its audit.
pub struct Execution {
    pub spec: RunSpec,
    pub problem: Arc<dyn Problem>,
    pub result: RunResult,
    pub audit: Option<AuditReport>,
}

impl Execution {
    pub fn audit_passed(&self) -> Option<bool> {
        self.audit.as_ref().map(AuditReport::passed)
    }

    pub fn evaluations(&self) -> usize {
        self.result.f_evals + self.result.deriv_evals
    }

    pub fn summary(&self) -> RunSummary {
        let r = &self.result;
        let p = self.problem.as_ref();
        let grad_norm = p.derivative(&r.x_eps, 1).ok().and_then(|g| g.to_vector()).map(|g| g.norm());
        RunSummary {
            problem: self.spec.problem.clone(),
            policy: self.spec.policy,
            cost_model: self.spec.cost_model.to_string(),
            seed: self.spec.config.seed,
            terminated: r.terminated,
            iterations: r.iterations(),
            successes: r.successes(),
            x0: r.x0.iter().cloned().collect(),
            x_eps: r.x_eps.iter().cloned().collect(),
            delta_eps: r.delta_eps,
            f_exact: p.value(&r.x_eps),
            grad_norm,
            f_evals: r.f_evals,
            deriv_evals: r.deriv_evals,
            deriv_rounds: r.deriv_rounds,
            total_cost: r.total_cost,
            min_f_accuracy: r.min_f_accuracy,
            final_zetas: r.accuracy.zetas().to_vec(),
            i_zeta: r.accuracy.i_zeta(),
            bounds: self.audit.as_ref().and_then(|a| a.constants.clone()),
            audit_passed: self.audit_passed(),
            audit: self.audit.clone(),
            config: self.spec.config.clone(),
        }
    }

    pub fn row(&self) -> SweepRow {
        let r = &self.result;
        SweepRow {
            problem: self.spec.problem.clone(),
            q: self.spec.config.q,
            eps: self.spec.config.eps_min(),
            seed: self.spec.config.seed,
            policy: self.spec.policy.to_string(),
            terminated: r.terminated,
            iterations: r.iterations(),
            successes: r.successes(),
            f_evals: r.f_evals,
            deriv_evals: r.deriv_evals,
            deriv_rounds: r.deriv_rounds,
            evaluations: self.evaluations(),
            total_cost: r.total_cost,
            delta_eps: r.delta_eps,
            audit_passed: self.audit_passed(),
            error: String::new(),
        }
    }
}

/// JSON summary of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub policy: Policy,
    pub cost_model: String,
    pub seed: u64,
    pub terminated: bool,
    pub iterations: usize,
    pub successes: usize,
    pub x0: Vec<f64>,
    pub x_eps: Vec<f64>,
    pub delta_eps: f64,
    /// Exact objective at the final point.
    pub f_exact: f64,
    /// Exact gradient norm at the final point.
    pub grad_norm: Option<f64>,
    pub f_evals: usize,
    pub deriv_evals: usize,
    pub deriv_rounds: usize,
    pub total_cost: f64,
    pub min_f_accuracy: Option<f64>,
    pub final_zetas: Vec<f64>,
    pub i_zeta: usize,
    pub bounds: Option<BoundConstants>,
    pub audit_passed: Option<bool>,
    pub audit: Option<AuditReport>,
    pub config: TrConfig,
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub problem: String,
    pub q: usize,
    pub eps: f64,
    pub seed: u64,
    pub policy: String,
    pub terminated: bool,
    pub iterations: usize,
    pub successes: usize,
    pub f_evals: usize,
    pub deriv_evals: usize,
    pub deriv_rounds: usize,
    /// `f_evals + deriv_evals`.
    pub evaluations: usize,
    pub total_cost: f64,
    pub delta_eps: f64,
    pub audit_passed: Option<bool>,
    /// Empty unless the run failed.
    pub error: String,
}

impl SweepRow {
    fn failed(spec: &RunSpec, err: &HarnessError) -> Self {
        SweepRow {
            problem: spec.problem.clone(),
            q: spec.config.q,
            eps: spec.config.eps_min(),
            seed: spec.config.seed,
            policy: spec.policy.to_string(),
            terminated: false,
            iterations: 0,
            successes: 0,
            f_evals: 0,
            deriv_evals: 0,
            deriv_rounds: 0,
            evaluations: 0,
            total_cost: 0.0,
            delta_eps: 0.0,
            audit_passed: None,
            error: err.to_string(),
        }
    }
}

fn oracle_for(spec: &RunSpec, problem: Arc<dyn Problem>) -> Result<InexactOracle, HarnessError> {
    Ok(InexactOracle::new(problem, spec.policy, spec.config.seed)
        .with_exact_orders(&spec.exact_orders)?
        .with_cost_model(spec.cost_model))
}

/// Validates and runs `spec`, auditing the result when the spec asks for it.
pub fn execute(spec: &RunSpec) -> Result<Execution, HarnessError> {
    spec.validate()?;
    let problem = spec.build_problem()?;
    let x0 = spec.start(problem.as_ref());
    let mut oracle = oracle_for(spec, problem.clone())?;
    let result = run(&mut oracle, &x0, &spec.config)?;
    if !result.terminated {
        warn!("{}: no termination within {} iterations", spec.stem(), spec.config.max_iterations);
    }
    let audit = if spec.audit {
        let opts = AuditOptions {
            seed: spec.config.seed,
            ..AuditOptions::default()
        };
        Some(check_history(&result, problem.as_ref(), &spec.config, &opts)?)
    } else {
        None
    };
    info!(
        "{}: {} iterations, {} f evaluations, {} derivative evaluations",
        spec.stem(),
        result.iterations(),
        result.f_evals,
        result.deriv_evals
    );
    Ok(Execution {
        spec: spec.clone(),
        problem,
        result,
        audit,
    })
}

/// Runs every spec in parallel; results keep the input order.
pub fn execute_all(specs: &[RunSpec]) -> Vec<Result<Execution, HarnessError>> {
    specs.par_iter().map(execute).collect()
}

/// Least-squares slope and intercept of `y` against `x`; `None` without two
/// distinct abscissae.
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Exponent margin allowed above `q + 1` by the scaling check.
pub const SLOPE_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, Serialize)]
pub struct ExcludedRun {
    pub eps: f64,
    pub seed: u64,
    pub reason: String,
}

/// Evaluation counts over a tolerance grid and the fitted growth exponent.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub problem: String,
    pub q: usize,
    pub policy: String,
    pub rows: Vec<SweepRow>,
    /// Slope of `ln(evaluations)` against `ln(1/eps)` over terminated runs.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub threshold: f64,
    pub excluded: Vec<ExcludedRun>,
    pub pass: bool,
}

fn sweep(specs: Vec<RunSpec>) -> Vec<SweepRow> {
    specs
        .par_iter()
        .map(|s| match execute(s) {
            Ok(e) => e.row(),
            Err(err) => SweepRow::failed(s, &err),
        })
        .collect()
}

/// Runs `base` at every tolerance of `grid` for every seed and fits the
/// growth of the evaluation count. Runs that fail or do not terminate are
/// left out of the fit and listed.
pub fn eps_scaling_study(base: &RunSpec, grid: &[f64], seeds: &[u64]) -> Result<ScalingReport, HarnessError> {
    if grid.len() < 4 {
        return Err(HarnessError::Config(format!("an epsilon sweep needs at least 4 grid points, got {}", grid.len())));
    }
    let specs: Vec<RunSpec> = grid
        .iter()
        .flat_map(|&e| seeds.iter().map(move |&s| base.with_eps(e).with_seed(s)))
        .collect();
    for s in &specs {
        s.validate()?;
    }
    let rows = sweep(specs);
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for r in &rows {
        if r.terminated && r.evaluations > 0 {
            points.push(((1.0 / r.eps).ln(), (r.evaluations as f64).ln()));
        } else {
            let reason = if r.error.is_empty() { "no termination".to_string() } else { r.error.clone() };
            excluded.push(ExcludedRun {
                eps: r.eps,
                seed: r.seed,
                reason,
            });
        }
    }
    let fit = fit_line(&points);
    let threshold = base.config.q as f64 + 1.0 + SLOPE_MARGIN;
    Ok(ScalingReport {
        problem: base.problem.clone(),
        q: base.config.q,
        policy: base.policy.to_string(),
        rows,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        threshold,
        excluded,
        pass: fit.is_some_and(|(s, _)| s <= threshold),
    })
}

/// Runs `base` once per seed.
pub fn seed_sweep(base: &RunSpec, seeds: &[u64]) -> Result<Vec<SweepRow>, HarnessError> {
    let specs: Vec<RunSpec> = seeds.iter().map(|&s| base.with_seed(s)).collect();
    for s in &specs {
        s.validate()?;
    }
    Ok(sweep(specs))
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub problem: String,
    pub cost_model: String,
    pub dynamic: SweepRow,
    pub baseline: SweepRow,
    /// Derivative accuracies the baseline starts from.
    pub baseline_zeta0: Vec<f64>,
    /// Accuracy cap on every baseline function value.
    pub baseline_f_cap: Option<f64>,
    /// Dynamic cost over baseline cost.
    pub cost_ratio: f64,
    /// Dynamic over baseline evaluation count.
    pub calls_ratio: f64,
}

/// Compares a dynamic-accuracy run with a baseline that requests, from the
/// start, the final accuracies the dynamic run ended with.
pub fn cost_savings_report(spec: &RunSpec) -> Result<CostReport, HarnessError> {
    let mut dyn_spec = spec.clone();
    dyn_spec.audit = false;
    let dynamic = execute(&dyn_spec)?;
    let mut base = dyn_spec.clone();
    base.config.zeta0 = dynamic.result.accuracy.zetas().to_vec();
    base.config.f_accuracy_cap = dynamic.result.min_f_accuracy;
    let baseline = execute(&base)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 1.0 };
    Ok(CostReport {
        problem: spec.problem.clone(),
        cost_model: spec.cost_model.to_string(),
        cost_ratio: ratio(dynamic.result.total_cost, baseline.result.total_cost),
        calls_ratio: ratio(dynamic.evaluations() as f64, baseline.evaluations() as f64),
        baseline_zeta0: base.config.zeta0.clone(),
        baseline_f_cap: base.config.f_accuracy_cap,
        dynamic: dynamic.row(),
        baseline: baseline.row(),
    })
}

/// The fixed collection of audited runs used to check the method's
/// guarantees: every registered problem at orders one and two under the
/// corrupting policies, plus third-order smoke runs.
pub fn standard_suite() -> Vec<RunSpec> {
    let mut out = Vec::new();
    let problems: [(&str, &[(&str, &str)]); 6] = [
        ("quadratic", &[("dim", "2"), ("cond", "10")]),
        ("quadratic", &[("dim", "3"), ("cond", "100")]),
        ("rosenbrock", &[]),
        ("saddle", &[]),
        ("quartic", &[("dim", "3")]),
        ("finite_sum_logistic", &[("dim", "3"), ("terms", "100")]),
    ];
    for (name, extra) in problems {
        let policies: &[&str] = if name == "finite_sum_logistic" {
            &["subsample", "adversarial", "gaussian_clipped"]
        } else {
            &["adversarial", "gaussian_clipped", "truncate"]
        };
        for q in 1..=2 {
            for policy in policies {
                for seed in 0..3u64 {
                    let eps = if name == "rosenbrock" && q == 1 { "1e-2" } else { "1e-3" };
                    let mut pairs: Vec<(String, String)> = vec![
                        ("problem".into(), name.into()),
                        ("q".into(), q.to_string()),
                        ("eps".into(), eps.into()),
                        ("policy".into(), policy.to_string()),
                        ("seed".into(), seed.to_string()),
                    ];
                    pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
                    out.push(RunSpec::from_pairs(&pairs).expect("suite spec is well formed"));
                }
            }
        }
    }
    for (name, dim) in [("quadratic", "2"), ("quartic", "2"), ("saddle", "2")] {
        for seed in 0..2u64 {
            let pairs: Vec<(String, String)> = [
                ("problem", name),
                ("dim", dim),
                ("q", "3"),
                ("eps", "1e-2"),
                ("policy", "adversarial"),
                ("seed", &seed.to_string()),
            ]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
            out.push(RunSpec::from_pairs(&pairs).expect("suite spec is well formed"));
        }
    }
    out
}
