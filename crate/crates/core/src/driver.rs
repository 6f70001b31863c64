//! The trust-region main loop with dynamic accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Vector, MAX_ORDER};
use crate::optimality::{termination_test, AccuracyLedger, CertifiedDecrement, CertifyParams, DerivativeCache, Step1Outcome};
use crate::oracle::{EvalKind, Oracle};
use crate::step::{compute_step, StepParams};
use crate::verify::VerifyOutcome;

/// Algorithm constants. Build with [`TrConfig::new`] and adjust fields; every
/// run validates the configuration first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrConfig {
    pub q: usize,
    pub eps: Vec<f64>,
    pub delta0: f64,
    pub delta_max: f64,
    pub vartheta: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub omega: f64,
    pub varsigma: f64,
    pub gamma_zeta: f64,
    pub kappa_zeta: f64,
    pub zeta0: Vec<f64>,
    pub seed: u64,
    pub max_iterations: usize,
    /// Upper limit on the accuracy of every `f` request. Used to run a
    /// fixed-accuracy baseline; `None` for the dynamic method.
    pub f_accuracy_cap: Option<f64>,
}

/// `min(½η1, ¼(1-η2))`, the exclusive upper limit on `ω`.
pub fn omega_limit(eta1: f64, eta2: f64) -> f64 {
    (0.5 * eta1).min(0.25 * (1.0 - eta2))
}

impl TrConfig {
    /// Default constants for order `q` and tolerances `eps`.
    pub fn new(q: usize, eps: Vec<f64>) -> Self {
        let eta1 = 0.05;
        let eta2 = 0.9;
        let eps_min = eps.iter().cloned().fold(f64::INFINITY, f64::min);
        Self {
            q,
            vartheta: eps_min.max(0.5),
            eps,
            delta0: 1.0,
            delta_max: 100.0,
            eta1,
            eta2,
            gamma1: 0.25,
            gamma2: 0.5,
            gamma3: 2.0,
            omega: 0.9 * omega_limit(eta1, eta2),
            varsigma: 0.99,
            gamma_zeta: 0.1,
            kappa_zeta: 0.1,
            zeta0: vec![0.1; q],
            seed: 0,
            max_iterations: 1_000_000,
            f_accuracy_cap: None,
        }
    }

    pub fn eps_min(&self) -> f64 {
        self.eps.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Checks every constraint on the constants; the error names the first
    /// one violated.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.q == 0 || self.q > MAX_ORDER {
            return fail(format!("q must lie in 1..={MAX_ORDER}, got {}", self.q));
        }
        if self.eps.len() != self.q {
            return fail(format!("eps needs {} entries, got {}", self.q, self.eps.len()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return fail(format!("eps_j must lie in (0, 1], got {e}"));
        }
        let eps_min = self.eps_min();
        if !(self.vartheta >= eps_min && self.vartheta <= 1.0) {
            return fail(format!("vartheta must lie in [min eps = {eps_min}, 1], got {}", self.vartheta));
        }
        if !(self.delta0 > 0.0) {
            return fail(format!("delta0 must be positive, got {}", self.delta0));
        }
        if !(self.delta0 <= self.delta_max) {
            return fail(format!("delta0 = {} must not exceed delta_max = {}", self.delta0, self.delta_max));
        }
        if !(0.0 < self.eta1 && self.eta1 <= self.eta2 && self.eta2 < 1.0) {
            return fail(format!("need 0 < eta1 <= eta2 < 1, got eta1 = {}, eta2 = {}", self.eta1, self.eta2));
        }
        if !(0.0 < self.gamma1 && self.gamma1 < self.gamma2 && self.gamma2 < 1.0 && 1.0 < self.gamma3) {
            return fail(format!(
                "need 0 < gamma1 < gamma2 < 1 < gamma3, got {}, {}, {}",
                self.gamma1, self.gamma2, self.gamma3
            ));
        }
        if !(self.varsigma > 0.0 && self.varsigma <= 1.0) {
            return fail(format!("varsigma must lie in (0, 1], got {}", self.varsigma));
        }
        let limit = omega_limit(self.eta1, self.eta2);
        if !(self.omega > 0.0 && self.omega < limit) {
            return fail(format!(
                "omega must lie in (0, min(eta1/2, (1-eta2)/4) = {limit}), got {}",
                self.omega
            ));
        }
        if !(self.gamma_zeta > 0.0 && self.gamma_zeta < 1.0) {
            return fail(format!("gamma_zeta must lie in (0, 1), got {}", self.gamma_zeta));
        }
        if !(self.kappa_zeta > 0.0) {
            return fail(format!("kappa_zeta must be positive, got {}", self.kappa_zeta));
        }
        if self.zeta0.len() != self.q {
            return fail(format!("zeta0 needs {} entries, got {}", self.q, self.zeta0.len()));
        }
        if let Some(z) = self.zeta0.iter().find(|z| !(**z > 0.0 && **z <= self.kappa_zeta)) {
            return fail(format!("zeta0_j must lie in (0, kappa_zeta = {}], got {z}", self.kappa_zeta));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be positive".into());
        }
        if let Some(c) = self.f_accuracy_cap {
            if !(c > 0.0) {
                return fail(format!("f accuracy cap must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// One iteration of the main loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub big_delta: f64,
    pub delta: f64,
    pub j: usize,
    pub rho: f64,
    pub successful: bool,
    pub dt_s: f64,
    pub dt_d: f64,
    pub f_old: f64,
    pub f_new: f64,
    /// Accuracy requested for `f(x_k + s_k)`.
    pub f_acc: f64,
    /// Accuracy of the `f(x_k)` value used in the ratio.
    pub f_old_acc: f64,
    pub f_old_recomputed: bool,
    pub step1_skipped: bool,
    pub step1_tightenings: usize,
    pub step2_tightenings: usize,
    pub step2_cap: Option<usize>,
    pub step2_outcome: VerifyOutcome,
    pub step2_absolute: usize,
    pub i_zeta: usize,
    pub zetas: Vec<f64>,
    pub f_evals: usize,
    pub deriv_evals: usize,
    pub deriv_rounds: usize,
    pub x: Vec<f64>,
    pub step: Vec<f64>,
    pub step_norm: f64,
    pub big_delta_next: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub x0: Vector,
    pub x_eps: Vector,
    pub delta_eps: f64,
    pub terminated: bool,
    pub history: Vec<IterationRecord>,
    pub accuracy: AccuracyLedger,
    /// Certificates of the final, successful termination test.
    pub final_certificates: Vec<CertifiedDecrement>,
    pub f_evals: usize,
    pub deriv_evals: usize,
    pub deriv_rounds: usize,
    pub total_cost: f64,
    /// Smallest accuracy requested for `f`.
    pub min_f_accuracy: Option<f64>,
}

impl RunResult {
    pub fn successes(&self) -> usize {
        self.history.iter().filter(|r| r.successful).count()
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

pub fn run(oracle: &mut dyn Oracle, x0: &Vector, cfg: &TrConfig) -> Result<RunResult> {
    run_with_sink(oracle, x0, cfg, &mut |_| {})
}

/// Runs the method from `x0`, handing every iteration record to `sink`.
pub fn run_with_sink(oracle: &mut dyn Oracle, x0: &Vector, cfg: &TrConfig, sink: &mut dyn FnMut(&IterationRecord)) -> Result<RunResult> {
    cfg.validate()?;
    if x0.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            got: x0.len(),
        });
    }
    if cfg.q > oracle.max_order() {
        return Err(Error::UnsupportedOrder {
            order: cfg.q,
            max: oracle.max_order(),
        });
    }
    let exact: Vec<bool> = (1..=cfg.q).map(|i| oracle.is_exact_order(i)).collect();
    let mut ledger = AccuracyLedger::new(&cfg.zeta0, cfg.gamma_zeta, cfg.kappa_zeta, &exact)?;
    let mut cache = DerivativeCache::new();
    let certify = CertifyParams {
        varsigma: cfg.varsigma,
        omega: cfg.omega,
    };
    let step_params = StepParams {
        vartheta: cfg.vartheta,
        omega: cfg.omega,
        declared_varsigma: cfg.varsigma,
    };

    let mut x = x0.clone();
    let mut big_delta = cfg.delta0;
    // Latest value of f at x and the accuracy it was obtained to.
    let mut f_cur: Option<(f64, f64)> = None;
    let mut pending: Option<CertifiedDecrement> = None;
    let mut history = Vec::new();

    let finish = |oracle: &dyn Oracle,
                  x: Vector,
                  delta_eps: f64,
                  terminated: bool,
                  history: Vec<IterationRecord>,
                  ledger: AccuracyLedger,
                  cache: &DerivativeCache,
                  final_certificates: Vec<CertifiedDecrement>| {
        let evals = oracle.ledger();
        RunResult {
            x0: x0.clone(),
            x_eps: x,
            delta_eps,
            terminated,
            history,
            accuracy: ledger,
            final_certificates,
            f_evals: evals.f_evals(),
            deriv_evals: evals.total_deriv_evals(),
            deriv_rounds: cache.rounds(),
            total_cost: evals.total_cost(),
            min_f_accuracy: evals.min_accuracy(EvalKind::Value),
        }
    };

    for k in 0..cfg.max_iterations {
        let delta_k = big_delta.min(cfg.vartheta);
        let i_zeta_start = ledger.i_zeta();
        let skipped = pending.is_some();
        let cert = match pending.take() {
            Some(c) => c,
            None => match termination_test(&x, delta_k, &cfg.eps, certify, oracle, &mut ledger, &mut cache)? {
                Step1Outcome::Terminated { delta, certificates } => {
                    return Ok(finish(oracle, x, delta, true, history, ledger, &cache, certificates));
                }
                Step1Outcome::Continue { cert } => cert,
            },
        };
        let step1_tightenings = ledger.i_zeta() - i_zeta_start;
        let j = cert.j;
        let eps_j = cfg.eps[j - 1];
        let step = compute_step(&x, big_delta, &cert, eps_j, step_params, oracle, &mut ledger, &mut cache)?;
        if !(step.dt_s > 0.0) {
            return Err(Error::Internal(format!("non-positive model decrease {} at iteration {k}", step.dt_s)));
        }

        let mut f_acc = cfg.omega * step.dt_s;
        if let Some(cap) = cfg.f_accuracy_cap {
            f_acc = f_acc.min(cap);
        }
        let trial = &x + &step.s;
        let f_new = oracle.eval_f(&trial, f_acc)?;
        let (f_old, f_old_acc, recomputed) = match f_cur {
            Some((v, a)) if a <= f_acc => (v, a, false),
            _ => (oracle.eval_f(&x, f_acc)?, f_acc, true),
        };
        let rho = (f_old - f_new) / step.dt_s;
        let successful = rho >= cfg.eta1;
        let next_delta = if !successful {
            cfg.gamma2 * big_delta
        } else if rho < cfg.eta2 {
            big_delta
        } else {
            cfg.delta_max.min(cfg.gamma3 * big_delta)
        };

        let evals = oracle.ledger();
        let record = IterationRecord {
            k,
            big_delta,
            delta: delta_k,
            j,
            rho,
            successful,
            dt_s: step.dt_s,
            dt_d: step.dt_d,
            f_old,
            f_new,
            f_acc,
            f_old_acc,
            f_old_recomputed: recomputed,
            step1_skipped: skipped,
            step1_tightenings,
            step2_tightenings: step.tighten_count,
            step2_cap: step.cap,
            step2_outcome: step.outcome,
            step2_absolute: step.absolute_events,
            i_zeta: ledger.i_zeta(),
            zetas: ledger.zetas().to_vec(),
            f_evals: evals.f_evals(),
            deriv_evals: evals.total_deriv_evals(),
            deriv_rounds: cache.rounds(),
            x: x.iter().cloned().collect(),
            step: step.s.iter().cloned().collect(),
            step_norm: step.s.norm(),
            big_delta_next: next_delta,
        };
        sink(&record);
        history.push(record);

        if successful {
            x = trial;
            f_cur = Some((f_new, f_acc));
        } else {
            f_cur = Some((f_old, f_old_acc));
            if next_delta >= cfg.vartheta {
                pending = Some(cert);
            }
        }
        big_delta = next_delta;
    }
    let delta = big_delta.min(cfg.vartheta);
    Ok(finish(oracle, x, delta, false, history, ledger, &cache, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{InexactOracle, Policy};
    use crate::problems::Quadratic;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    #[test]
    fn defaults_are_valid() {
        for q in 1..=3 {
            let c = TrConfig::new(q, vec![1e-3; q]);
            c.validate().unwrap();
            assert!((c.omega - 0.0225).abs() < 1e-15);
            assert_eq!(c.vartheta, 0.5);
        }
    }

    #[test]
    fn omega_violation_names_constraint() {
        let mut c = TrConfig::new(1, vec![1e-3]);
        c.eta1 = 0.5;
        c.omega = 0.3;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("omega"), "{err}");
    }

    #[test]
    fn other_violations() {
        let base = TrConfig::new(2, vec![1e-2, 1e-3]);
        let mut c = base.clone();
        c.vartheta = 1e-4;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.delta0 = 200.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.gamma1 = 0.6;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.zeta0 = vec![0.2, 0.1];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.eps = vec![1e-2];
        assert!(c.validate().is_err());
        let mut c = base;
        c.varsigma = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn one_dimensional_quadratic() {
        let q = Quadratic::from_matrix(DMatrix::from_element(1, 1, 1.0), Vector::zeros(1)).unwrap();
        let mut o = InexactOracle::new(Arc::new(q), Policy::None, 0);
        let cfg = TrConfig::new(1, vec![1e-4]);
        let r = run(&mut o, &Vector::from_vec(vec![1.0]), &cfg).unwrap();
        assert!(r.terminated);
        assert!(r.x_eps[0].abs() <= 1e-4);
        for rec in &r.history {
            assert_eq!(rec.successful, rec.rho >= cfg.eta1);
            assert_eq!(rec.delta, rec.big_delta.min(cfg.vartheta));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let q = Quadratic::new(2, 2.0).unwrap();
        let mut o = InexactOracle::new(Arc::new(q), Policy::None, 0);
        assert!(run(&mut o, &Vector::zeros(3), &TrConfig::new(1, vec![1e-3])).is_err());
    }

    #[test]
    fn safety_cap_marks_run_unterminated() {
        let q = Quadratic::new(2, 100.0).unwrap();
        let mut o = InexactOracle::new(Arc::new(q), Policy::None, 0);
        let mut cfg = TrConfig::new(1, vec![1e-6]);
        cfg.max_iterations = 2;
        let r = run(&mut o, &Vector::from_vec(vec![5.0, 5.0]), &cfg).unwrap();
        assert!(!r.terminated);
        assert_eq!(r.history.len(), 2);
    }

    #[test]
    fn sink_sees_every_record() {
        let q = Quadratic::new(3, 10.0).unwrap();
        let mut o = InexactOracle::new(Arc::new(q), Policy::Adversarial, 2);
        let cfg = TrConfig::new(2, vec![1e-3, 1e-3]);
        let mut seen = 0;
        let r = run_with_sink(&mut o, &Vector::from_vec(vec![1.0, -2.0, 0.5]), &cfg, &mut |_| seen += 1).unwrap();
        assert!(r.terminated);
        assert_eq!(seen, r.history.len());
    }
}
