//! Post-run audit of a trajectory against exact function values and the
//! complexity bounds.

use serde::{Deserialize, Serialize};

use crate::bounds::{compute_bounds, BoundConstants};
use crate::driver::{RunResult, TrConfig};
use crate::error::Result;
use crate::model::{factorial, taylor_decrement, DerivativeBundle, Vector};
use crate::optimality::max_decrement;
use crate::oracle::Problem;
use crate::reference::{lipschitz_estimate, phi_reference_bundle, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub lipschitz_samples: usize,
    pub lipschitz_safety: f64,
    pub seed: u64,
    /// Largest dimension for which the final point is checked with the
    /// reference optimality measure.
    pub reference_max_dim: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            lipschitz_samples: 2000,
            lipschitz_safety: 1.5,
            seed: 0,
            reference_max_dim: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    /// `None` when the check does not apply (e.g. no finite lower bound).
    pub passed: Option<bool>,
    pub violations: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub l_f: f64,
    pub l_f_estimated: bool,
    pub constants: Option<BoundConstants>,
    pub checks: Vec<AuditCheck>,
    /// Smallest derivative accuracy requested, per order.
    pub min_zeta: Vec<f64>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Bounding box of every point the run evaluated, widened by 10% plus a
/// small absolute margin.
pub fn trajectory_box(result: &RunResult) -> (Vec<f64>, Vec<f64>) {
    let n = result.x0.len();
    let mut lo = result.x0.iter().cloned().collect::<Vec<_>>();
    let mut hi = lo.clone();
    let mut take = |p: &[f64]| {
        for i in 0..n {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    };
    for r in &result.history {
        take(&r.x);
        let trial: Vec<f64> = r.x.iter().zip(&r.step).map(|(a, b)| a + b).collect();
        take(&trial);
    }
    take(result.x_eps.as_slice());
    for i in 0..n {
        let pad = 0.1 * (hi[i] - lo[i]) + 0.1;
        lo[i] -= pad;
        hi[i] += pad;
    }
    (lo, hi)
}

fn exact_bundle(p: &dyn Problem, x: &Vector, j: usize) -> Result<DerivativeBundle> {
    let ts = (1..=j).map(|i| p.derivative(x, i)).collect::<Result<Vec<_>>>()?;
    DerivativeBundle::exact(x.clone(), ts)
}

/// Upper estimate of the exact optimality measure: the better of the
/// reference sampler and the global order-1/2 solver.
pub fn phi_estimate(p: &dyn Problem, x: &Vector, j: usize, delta: f64) -> Result<f64> {
    let b = exact_bundle(p, x, j)?;
    let solver = max_decrement(&b, j, delta, 1.0)?.dt;
    if x.len() <= crate::reference::MAX_REFERENCE_DIM {
        let (r, _) = phi_reference_bundle(&b, j, delta, &GridSpec::default())?;
        Ok(r.max(solver))
    } else {
        Ok(solver)
    }
}

struct Tally {
    name: &'static str,
    violations: usize,
    worst: String,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            violations: 0,
            worst: String::new(),
        }
    }

    fn fail(&mut self, msg: String) {
        if self.violations == 0 {
            self.worst = msg;
        }
        self.violations += 1;
    }

    fn finish(self, ok_detail: String) -> AuditCheck {
        AuditCheck {
            name: self.name.to_string(),
            passed: Some(self.violations == 0),
            violations: self.violations,
            detail: if self.violations == 0 { ok_detail } else { self.worst },
        }
    }
}

fn not_applicable(name: &str, why: &str) -> AuditCheck {
    AuditCheck {
        name: name.to_string(),
        passed: None,
        violations: 0,
        detail: why.to_string(),
    }
}

/// Audits a completed run of `cfg` on `problem`.
pub fn check_history(result: &RunResult, problem: &dyn Problem, cfg: &TrConfig, opts: &AuditOptions) -> Result<AuditReport> {
    let q = cfg.q;
    let (l_f, estimated) = match problem.lipschitz() {
        Some(ls) => (ls.iter().take(q).cloned().fold(1.0, f64::max), false),
        None => {
            let (lo, hi) = trajectory_box(result);
            let mut l = 1.0f64;
            for j in 1..=q {
                l = l.max(lipschitz_estimate(problem, &lo, &hi, j, opts.lipschitz_samples, opts.seed + j as u64, opts.lipschitz_safety)?);
            }
            (l, true)
        }
    };
    let x0 = &result.x0;
    let f0 = problem.value(x0);
    let norms = (1..=q).map(|i| problem.derivative(x0, i).map(|t| t.operator_norm())).collect::<Result<Vec<_>>>()?;
    let f_low = problem.f_low();
    let constants = if f_low.is_finite() {
        Some(compute_bounds(cfg, l_f, f0, f_low, &norms)?)
    } else {
        // Constants not involving f_low are still useful.
        Some(compute_bounds(cfg, l_f, f0, f0, &norms)?)
    };
    let c = constants.as_ref().expect("constants computed above");
    let mut checks = Vec::new();
    let hist = &result.history;
    let successes = result.successes();

    // Exact decrease on successful iterations.
    let mut t = Tally::new("decrease_floor");
    let mut mono = Tally::new("monotone_exact_f");
    let mut f_honest = Tally::new("f_accuracy");
    let mut rel = Tally::new("step_relative_accuracy");
    for r in hist {
        let x = Vector::from_column_slice(&r.x);
        let s = Vector::from_column_slice(&r.step);
        let fx = problem.value(&x);
        let fxs = problem.value(&(&x + &s));
        if (r.f_new - fxs).abs() > r.f_acc * (1.0 + 1e-12) {
            f_honest.fail(format!("k = {}: |fbar(x+s) - f(x+s)| = {:e} > {:e}", r.k, (r.f_new - fxs).abs(), r.f_acc));
        }
        if (r.f_old - fx).abs() > r.f_old_acc * (1.0 + 1e-12) {
            f_honest.fail(format!("k = {}: |fbar(x) - f(x)| = {:e} > {:e}", r.k, (r.f_old - fx).abs(), r.f_old_acc));
        }
        let b = exact_bundle(problem, &x, r.j)?;
        let exact_dt = taylor_decrement(&b, &s, r.j)?;
        let gap = (exact_dt - r.dt_s).abs();
        if gap > cfg.omega * r.dt_s * (1.0 + 1e-9) + 1e-14 * exact_dt.abs() {
            rel.fail(format!("k = {}: |dT - dT_exact| = {gap:e} > omega dT = {:e}", r.k, cfg.omega * r.dt_s));
        }
        if r.successful {
            let dec = fx - fxs;
            let slack = 1e-13 * fx.abs().max(1.0);
            if dec + slack < c.decrease_floor {
                t.fail(format!("k = {}: decrease {dec:e} < floor {:e}", r.k, c.decrease_floor));
            }
            if !(dec > -slack) {
                mono.fail(format!("k = {}: exact f increased by {:e}", r.k, -dec));
            }
        }
    }
    checks.push(t.finish(format!("floor {:e}", c.decrease_floor)));
    checks.push(mono.finish("exact f decreased on every accepted step".into()));
    checks.push(f_honest.finish("all f values within requested accuracy".into()));
    checks.push(rel.finish("all model decreases relatively accurate".into()));

    let mut t = Tally::new("radius_floor");
    for r in hist {
        if r.big_delta < c.delta_min {
            t.fail(format!("k = {}: Delta = {:e} < {:e}", r.k, r.big_delta, c.delta_min));
        }
    }
    checks.push(t.finish(format!("Delta_min = {:e}", c.delta_min)));

    let mut t = Tally::new("iteration_bound");
    let it_bound = c.iteration_bound(cfg, successes);
    if hist.len() as f64 > it_bound {
        t.fail(format!("{} iterations > bound {it_bound:.3}", hist.len()));
    }
    checks.push(t.finish(format!("{} iterations <= {it_bound:.3}", hist.len())));

    if f_low.is_finite() {
        let mut t = Tally::new("successes_bound");
        if successes as f64 > c.successes_bound {
            t.fail(format!("{successes} successes > {:e}", c.successes_bound));
        }
        checks.push(t.finish(format!("{successes} <= {:e}", c.successes_bound)));
        let mut t = Tally::new("eval_bound_f");
        if result.f_evals as f64 > c.eval_bound_f {
            t.fail(format!("{} f evaluations > {:e}", result.f_evals, c.eval_bound_f));
        }
        checks.push(t.finish(format!("{} <= {:e}", result.f_evals, c.eval_bound_f)));
        let mut t = Tally::new("eval_bound_d");
        if result.deriv_rounds as f64 > c.eval_bound_d {
            t.fail(format!("{} derivative rounds > {:e}", result.deriv_rounds, c.eval_bound_d));
        }
        checks.push(t.finish(format!("{} <= {:e}", result.deriv_rounds, c.eval_bound_d)));
        let mut t = Tally::new("eval_bound_d_proof");
        if result.deriv_rounds as f64 > c.eval_bound_d_proof {
            t.fail(format!("{} derivative rounds > {:e}", result.deriv_rounds, c.eval_bound_d_proof));
        }
        checks.push(t.finish(format!("{} <= {:e}", result.deriv_rounds, c.eval_bound_d_proof)));
    } else {
        for name in ["successes_bound", "eval_bound_f", "eval_bound_d", "eval_bound_d_proof"] {
            checks.push(not_applicable(name, "objective has no finite lower bound"));
        }
    }

    let mut t = Tally::new("i_zeta_bound");
    if result.accuracy.i_zeta() as i64 > c.i_zeta_min.max(0) {
        t.fail(format!("i_zeta = {} > {}", result.accuracy.i_zeta(), c.i_zeta_min));
    }
    checks.push(t.finish(format!("i_zeta = {} <= {}", result.accuracy.i_zeta(), c.i_zeta_min)));

    let mut t = Tally::new("accuracy_floor");
    for e in result.accuracy.events() {
        let m = e.zetas_after[..e.j].iter().cloned().fold(0.0, f64::max);
        let floor = c.accuracy_floor(cfg, e.j);
        if m < floor {
            t.fail(format!("order {} tightened to {m:e} < floor {floor:e}", e.j));
        }
    }
    checks.push(t.finish(format!("{} tightenings above floor", result.accuracy.events().len())));

    let mut t = Tally::new("step2_no_absolute");
    let mut cap = Tally::new("step2_tightening_cap");
    for r in hist {
        if r.step2_absolute > 0 || r.step2_outcome != crate::verify::VerifyOutcome::Relative {
            t.fail(format!("k = {}: {} absolute outcomes, final {:?}", r.k, r.step2_absolute, r.step2_outcome));
        }
        if let Some(cp) = r.step2_cap {
            if r.step2_tightenings > cp {
                cap.fail(format!("k = {}: {} tightenings > cap {cp}", r.k, r.step2_tightenings));
            }
        }
        if r.dt_s < r.dt_d {
            cap.fail(format!("k = {}: step decrement below the certified displacement's", r.k));
        }
    }
    checks.push(t.finish("no absolute outcome in step computation".into()));
    checks.push(cap.finish("tightenings within cap".into()));

    if result.terminated && q <= 2 && x0.len() <= opts.reference_max_dim {
        let mut t = Tally::new("termination_soundness");
        for j in 1..=q {
            let phi = phi_estimate(problem, &result.x_eps, j, result.delta_eps)?;
            let lim = cfg.eps[j - 1] * result.delta_eps.powi(j as i32) / factorial(j);
            if phi > lim + 1e-8 {
                t.fail(format!("order {j}: phi = {phi:e} > {lim:e}"));
            }
        }
        checks.push(t.finish("final point is an approximate minimizer".into()));
    } else {
        checks.push(not_applicable("termination_soundness", "not terminated, q > 2 or dimension too large"));
    }

    let mut min_zeta = result.accuracy.initial().to_vec();
    for e in result.accuracy.events() {
        for (m, z) in min_zeta.iter_mut().zip(&e.zetas_after) {
            *m = m.min(*z);
        }
    }
    Ok(AuditReport {
        l_f,
        l_f_estimated: estimated,
        constants: if f_low.is_finite() { constants } else { None },
        checks,
        min_zeta,
    })
}
