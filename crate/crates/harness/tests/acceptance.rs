//! Acceptance suite. Runs every criterion at its pinned tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trqda_core::audit::phi_estimate;
use trqda_core::model::{factorial, taylor_decrement};
use trqda_core::optimality::{certified_decrement, max_decrement, CertifyParams, DerivativeCache};
use trqda_core::problems::{Quadratic, Rosenbrock, Saddle};
use trqda_core::reference::{phi_reference_bundle, GridSpec};
use trqda_core::verify::check_verify_guarantees;
use trqda_core::{run, AccuracyLedger, DerivativeBundle, InexactOracle, Policy, Problem, SymTensor, TrConfig, Vector, VerifyOutcome};
use trqda_harness::config::RunSpec;
use trqda_harness::study::{eps_scaling_study, execute_all, standard_suite, Execution};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(v: Verdict, elapsed: Duration, limit: Duration) -> Verdict {
    if elapsed <= limit {
        Verdict::new(v.pass, format!("{}, {:.2}s", v.detail, elapsed.as_secs_f64()))
    } else {
        Verdict::new(false, format!("{}, took {:.2}s > {}s", v.detail, elapsed.as_secs_f64(), limit.as_secs()))
    }
}

fn random_tensor(rng: &mut impl Rng, order: usize, n: usize, scale: f64) -> SymTensor {
    SymTensor::from_fn(order, n, |_| scale * rng.random_range(-1.0..1.0)).unwrap()
}

/// `exact` moved by perturbations of operator norm at most `zetas[i]`.
fn perturbed(rng: &mut impl Rng, exact: &DerivativeBundle, zetas: &[f64]) -> DerivativeBundle {
    let n = exact.dim();
    let ts = exact
        .tensors()
        .iter()
        .zip(zetas)
        .map(|(t, &z)| {
            let e = random_tensor(rng, t.order(), n, 1.0);
            let frac = rng.random_range(0.0..=1.0);
            let e = e.scaled((1.0 - 1e-9) * frac * z / e.operator_norm().max(1e-300));
            t + &e
        })
        .collect();
    DerivativeBundle::new(exact.x().clone(), ts, zetas.to_vec()).unwrap()
}

/// VERIFY guarantees on random instances with constructed tensor errors.
fn verify_guarantees() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut outcomes = [0usize; 3];
    for k in 0..200 {
        let n = 1 + k % 4;
        let r = 1 + (k / 4) % 2;
        let ts = (1..=r).map(|i| random_tensor(&mut rng, i, n, 1.0)).collect();
        let exact = DerivativeBundle::exact(Vector::zeros(n), ts).unwrap();
        let level = 10f64.powf(-rng.random_range(0.0..5.0));
        let zetas: Vec<f64> = (0..r).map(|_| level * rng.random_range(0.1..1.0)).collect();
        let inexact = perturbed(&mut rng, &exact, &zetas);
        let delta = rng.random_range(0.05..1.5);
        // The test applies to nonnegative decrements only.
        let best = max_decrement(&inexact, r, delta, 1.0).unwrap().d;
        let v = if k % 2 == 0 {
            best
        } else {
            let w = trqda_core::verify::sample_ball(&mut rng, n, delta, false);
            let dt = |v: &Vector| taylor_decrement(&inexact, v, r).unwrap();
            if dt(&w) >= 0.0 {
                w
            } else if dt(&-&w) >= 0.0 {
                -w
            } else {
                best
            }
        };
        let omega = rng.random_range(0.01..0.5);
        let xi = rng.random_range(0.01..1.0);
        let rep = check_verify_guarantees(&exact, &inexact, delta, &v, omega, xi, 100, &mut rng).unwrap();
        violations += rep.violations();
        outcomes[match rep.outcome.unwrap() {
            VerifyOutcome::Relative => 0,
            VerifyOutcome::Absolute => 1,
            VerifyOutcome::Insufficient => 2,
        }] += 1;
    }
    Verdict::new(
        violations == 0,
        format!(
            "200 instances x 100 points, {violations} violations; relative {} absolute {} insufficient {}",
            outcomes[0], outcomes[1], outcomes[2]
        ),
    )
}

/// Exact optimality measure: closed form at order one, the global ball
/// solver at order two after agreeing with the dense reference.
fn phi_exact(p: &dyn Problem, x: &Vector, j: usize, delta: f64) -> Result<f64, String> {
    let g = p.derivative(x, 1).unwrap();
    if j == 1 {
        return Ok(delta * g.to_vector().unwrap().norm());
    }
    let b = DerivativeBundle::exact(x.clone(), vec![g, p.derivative(x, 2).unwrap()]).unwrap();
    let solver = max_decrement(&b, 2, delta, 1.0).unwrap().dt;
    let (grid, _) = phi_reference_bundle(&b, 2, delta, &GridSpec::default()).unwrap();
    if (solver - grid).abs() > 1e-6 * solver.max(1.0) {
        return Err(format!("ball solver {solver:e} and reference {grid:e} disagree"));
    }
    Ok(solver)
}

/// Certified decrements at points near and far from stationarity, checked
/// against the exact optimality measure.
fn certified_soundness() -> Verdict {
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
    let center = Vector::from_vec(vec![0.5, -0.5, 0.2]);
    let problems: Vec<(Arc<dyn Problem>, Vector)> = vec![
        (Arc::new(Quadratic::from_matrix(a, center.clone()).unwrap()), center),
        (Arc::new(Rosenbrock::default()), Vector::from_vec(vec![1.0, 1.0])),
        (Arc::new(Saddle::default()), Vector::from_vec(vec![0.0, 1.0])),
    ];
    let params = CertifyParams {
        varsigma: 0.99,
        omega: 0.0225,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut absolute, mut relative, mut violations) = (0, 0, 0);
    let mut first = String::new();
    for k in 0..50 {
        let (p, star) = &problems[k % 3];
        let n = p.dim();
        let offset = [0.0, 1e-6, 1e-4, 1e-2, 0.3, 1.0][(k / 3) % 6];
        let x = star + trqda_core::verify::sample_ball(&mut rng, n, offset, true);
        let j = 1 + (k / 2) % 2;
        let eps = [1e-1, 1e-2, 1e-3][k % 3];
        let delta = [0.1, 0.5, 1.0][(k / 5) % 3];
        let mut o = InexactOracle::new(p.clone(), Policy::Adversarial, k as u64);
        let mut l = AccuracyLedger::new(&vec![0.1; j], 0.1, 0.1, &[]).unwrap();
        let mut c = DerivativeCache::new();
        let cert = certified_decrement(&x, j, delta, eps, params, &mut o, &mut l, &mut c).unwrap();
        let phi = match phi_exact(p.as_ref(), &x, j, delta) {
            Ok(v) => v,
            Err(e) => {
                violations += 1;
                note(&mut first, e);
                continue;
            }
        };
        let w = params.omega;
        let ok = match cert.outcome {
            VerifyOutcome::Absolute => {
                absolute += 1;
                phi <= eps * delta.powi(j as i32) / factorial(j) + 1e-6
            }
            VerifyOutcome::Relative => {
                relative += 1;
                (1.0 - w) * cert.dt <= phi + 1e-6 && phi <= (1.0 + w) * cert.dt + 1e-6
            }
            VerifyOutcome::Insufficient => false,
        };
        if !ok {
            violations += 1;
            note(&mut first, format!("config {k}: {:?} dt = {:e}, phi = {phi:e}", cert.outcome, cert.dt));
        }
    }
    let mixed = absolute > 0 && relative > 0;
    Verdict::new(
        violations == 0 && mixed,
        format!("50 configurations, absolute {absolute} relative {relative}, {violations} violations{first}"),
    )
}

/// Keeps the first failure message.
fn note(first: &mut String, msg: String) {
    if first.is_empty() {
        *first = format!(" (first: {msg})");
    }
}

fn step2_no_absolute(runs: &[Execution]) -> Verdict {
    let mut absolute = 0;
    let mut over_cap = 0;
    let mut step2 = 0;
    for e in runs {
        for r in &e.result.history {
            absolute += r.step2_absolute;
            if let Some(cap) = r.step2_cap {
                step2 += 1;
                if r.step2_tightenings > cap {
                    over_cap += 1;
                }
            }
        }
    }
    Verdict::new(
        absolute == 0 && over_cap == 0 && runs.len() >= 100,
        format!("{} runs, {step2} full-region steps, {absolute} absolute outcomes, {over_cap} over the tightening cap", runs.len()),
    )
}

fn termination_soundness(runs: &[Execution]) -> Verdict {
    let mut checked = 0;
    let mut violations = 0;
    let mut first = String::new();
    for e in runs.iter().filter(|e| e.result.terminated && e.spec.config.q <= 2) {
        let r = &e.result;
        let p = e.problem.as_ref();
        let cfg = &e.spec.config;
        for j in 1..=cfg.q {
            let phi = phi_estimate(p, &r.x_eps, j, r.delta_eps).unwrap();
            let bound = cfg.eps[j - 1] * r.delta_eps.powi(j as i32) / factorial(j) + 1e-8;
            checked += 1;
            if phi > bound {
                violations += 1;
                note(&mut first, format!("{} order {j}: phi {phi:e} > {bound:e}", e.spec.stem()));
            }
        }
        let g = p.derivative(&r.x_eps, 1).unwrap().to_vector().unwrap().norm();
        if g > cfg.eps[0] + 1e-8 {
            violations += 1;
            note(&mut first, format!("{}: |g| = {g:e}", e.spec.stem()));
        }
    }
    Verdict::new(violations == 0 && checked > 0, format!("{checked} final measures checked, {violations} violations{first}"))
}

/// Audit checks `names` over every run: passes when no run fails any.
fn audit_checks(runs: &[Execution], names: &[&str]) -> Verdict {
    let mut failures = Vec::new();
    let mut applied = 0;
    for e in runs {
        let audit = e.audit.as_ref().expect("suite runs are audited");
        for name in names {
            match audit.check(name).map(|c| c.passed) {
                Some(Some(true)) => applied += 1,
                Some(None) => {}
                Some(Some(false)) => failures.push(format!("{} {name}: {}", e.spec.stem(), audit.check(name).unwrap().detail)),
                None => failures.push(format!("{} {name}: missing", e.spec.stem())),
            }
        }
    }
    let detail = match failures.first() {
        None => format!("{applied} checks over {} runs, 0 violations", runs.len()),
        Some(f) => format!("{} violations (first: {f})", failures.len()),
    };
    Verdict::new(failures.is_empty() && applied > 0, detail)
}

fn eps_scaling() -> Verdict {
    let grid = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let seeds: Vec<u64> = (0..5).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for (problem, q) in [("rosenbrock", 1), ("saddle", 2)] {
        let mut base = RunSpec::new(problem, q, 1e-1);
        base.policy = Policy::Adversarial;
        base.audit = false;
        let rep = eps_scaling_study(&base, &grid, &seeds).unwrap();
        pass &= rep.pass && rep.excluded.is_empty();
        parts.push(format!(
            "{problem} q={q} slope {:.3} <= {:.2}, {} excluded",
            rep.slope.unwrap_or(f64::NAN),
            rep.threshold,
            rep.excluded.len()
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

/// Textbook first-order trust region: a step of length `Δ` along the
/// negative gradient, ratio test, and the usual radius update.
fn classical_tr(a: &DMatrix<f64>, c: &Vector, x0: &Vector, cfg: &TrConfig, steps: usize) -> Vec<Vector> {
    let f = |x: &Vector| {
        let r = x - c;
        0.5 * r.dot(&(a * &r))
    };
    let mut x = x0.clone();
    let mut radius = cfg.delta0;
    let mut out = vec![x.clone()];
    for _ in 0..steps {
        let g = a * (&x - c);
        let gn = g.norm();
        let s = &g * (-radius / gn);
        let rho = (f(&x) - f(&(&x + &s))) / (radius * gn);
        if rho >= cfg.eta1 {
            x += &s;
        }
        radius = if rho < cfg.eta1 {
            cfg.gamma2 * radius
        } else if rho < cfg.eta2 {
            radius
        } else {
            (cfg.gamma3 * radius).min(cfg.delta_max)
        };
        out.push(x.clone());
    }
    out
}

fn exact_mode_regression() -> Verdict {
    let a = DMatrix::from_row_slice(3, 3, &[5.0, 1.0, 0.0, 1.0, 2.0, 0.3, 0.0, 0.3, 0.5]);
    let c = Vector::from_vec(vec![1.0, -1.0, 0.5]);
    let p: Arc<dyn Problem> = Arc::new(Quadratic::from_matrix(a.clone(), c.clone()).unwrap());
    let x0 = Vector::from_vec(vec![6.0, 4.0, -5.0]);
    let mut cfg = TrConfig::new(1, vec![1e-8]);
    cfg.zeta0 = vec![1e-14];
    let mut o = InexactOracle::new(p, Policy::None, 0);
    let r = run(&mut o, &x0, &cfg).unwrap();
    let steps = 20;
    if r.history.len() < steps {
        return Verdict::new(false, format!("only {} iterations", r.history.len()));
    }
    let reference = classical_tr(&a, &c, &x0, &cfg, steps);
    let mut worst = 0.0f64;
    for k in 0..steps {
        let xk = if k + 1 < r.history.len() {
            Vector::from_column_slice(&r.history[k + 1].x)
        } else {
            r.x_eps.clone()
        };
        worst = worst.max((&xk - &reference[k + 1]).norm());
        worst = worst.max((Vector::from_column_slice(&r.history[k].x) - &reference[k]).norm());
    }
    Verdict::new(worst <= 1e-10, format!("{steps} iterates, largest deviation {worst:e}"))
}

fn report(n: usize, name: &str, v: Verdict) -> bool {
    println!("criterion {n} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v.pass
}

fn main() -> ExitCode {
    let mut all = true;

    let t = Instant::now();
    let v = verify_guarantees();
    all &= report(1, "accuracy test guarantees", within(v, t.elapsed(), Duration::from_secs(10)));

    let t = Instant::now();
    let v = certified_soundness();
    all &= report(2, "certified decrement soundness", within(v, t.elapsed(), Duration::from_secs(30)));

    let t = Instant::now();
    let specs = standard_suite();
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (s, res) in specs.iter().zip(execute_all(&specs)) {
        match res {
            Ok(e) => runs.push(e),
            Err(e) => failed.push(format!("{}: {e}", s.stem())),
        }
    }
    println!("suite: {} runs in {:.2}s, {} failed {:?}", specs.len(), t.elapsed().as_secs_f64(), failed.len(), failed);
    let suite_ok = |v: Verdict| if failed.is_empty() { v } else { Verdict::new(false, format!("{}; failed runs: {}", v.detail, failed.len())) };

    all &= report(3, "full-region steps never absolute", suite_ok(step2_no_absolute(&runs)));
    all &= report(4, "termination soundness", suite_ok(termination_soundness(&runs)));
    all &= report(5, "decrease floor", suite_ok(audit_checks(&runs, &["decrease_floor"])));
    all &= report(
        6,
        "radius floor and iteration bounds",
        suite_ok(audit_checks(&runs, &["radius_floor", "iteration_bound", "successes_bound", "eval_bound_f", "eval_bound_d"])),
    );

    let t = Instant::now();
    let v = eps_scaling();
    all &= report(7, "epsilon scaling", within(v, t.elapsed(), Duration::from_secs(300)));

    all &= report(8, "exact-mode regression", exact_mode_regression());
    all &= report(9, "accuracy floor", suite_ok(audit_checks(&runs, &["accuracy_floor"])));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
