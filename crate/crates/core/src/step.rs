//! Step computation. Inside the optimality radius the certified displacement
//! is used as the step; for larger trust regions a step over the whole region
//! is computed and its decrement certified to relative accuracy.

use log::warn;

use crate::error::{Error, Result};
use crate::model::{decrement_error_bound, factorial, taylor_decrement, DerivativeBundle, Vector};
use crate::optimality::{max_decrement, tightenings_needed, AccuracyLedger, CertifiedDecrement, DerivativeCache, Phase, MAX_TIGHTENINGS};
use crate::oracle::Oracle;
use crate::verify::{verify, VerifyOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub s: Vector,
    pub dt_s: f64,
    pub outcome: VerifyOutcome,
    pub tighten_count: usize,
    /// Tightenings after which a relative outcome is guaranteed; `None` on the
    /// pass-through branch.
    pub cap: Option<usize>,
    /// Last `ξ` handed to the accuracy test.
    pub xi: Option<f64>,
    /// Decrement of the certified displacement under the final bundle.
    pub dt_d: f64,
    /// Absolute outcomes met (and tightened through) along the way.
    pub absolute_events: usize,
    pub used_fallback: bool,
}

/// Maximizer of the degree-`j` decrement over the ball of radius `radius`.
pub fn step_solver(b: &DerivativeBundle, j: usize, radius: f64, declared_varsigma: f64) -> Result<Vector> {
    Ok(max_decrement(b, j, radius, declared_varsigma)?.d)
}

/// `ξ = ε_j/(4(1+ω)) · (ϑ/max(ϑ, ||s||))^j`.
pub fn step2_xi(eps_j: f64, omega: f64, vartheta: f64, step_norm: f64, j: usize) -> f64 {
    eps_j / (4.0 * (1.0 + omega)) * (vartheta / vartheta.max(step_norm)).powi(j as i32)
}

/// Tightenings after which the relative test must succeed, starting from
/// accuracies `zetas` with a trust region of radius `big_delta > vartheta`.
///
/// The model error over the region, `Σ ζ_i R^i/i!` with `R = max(ϑ, Δ)`, must
/// drop to `ω ε_j ϑ^j / (4(1+ω) j!)`.
pub fn step2_tightening_cap(zetas: &[f64], j: usize, big_delta: f64, vartheta: f64, eps_j: f64, omega: f64, gamma: f64) -> usize {
    let r = vartheta.max(big_delta);
    let start = decrement_error_bound(&zetas[..j], r);
    let target = omega * eps_j * vartheta.powi(j as i32) / (4.0 * (1.0 + omega) * factorial(j));
    tightenings_needed(start, target, gamma)
}

/// Parameters of [`compute_step`] fixed for the whole run.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub vartheta: f64,
    pub omega: f64,
    pub declared_varsigma: f64,
}

pub fn compute_step(
    x: &Vector,
    big_delta: f64,
    cert: &CertifiedDecrement,
    eps_j: f64,
    params: StepParams,
    oracle: &mut dyn Oracle,
    ledger: &mut AccuracyLedger,
    cache: &mut DerivativeCache,
) -> Result<StepResult> {
    let j = cert.j;
    if big_delta <= params.vartheta {
        return Ok(StepResult {
            s: cert.d.clone(),
            dt_s: cert.dt,
            outcome: cert.outcome,
            tighten_count: 0,
            cap: None,
            xi: None,
            dt_d: cert.dt,
            absolute_events: 0,
            used_fallback: true,
        });
    }
    let cap = step2_tightening_cap(ledger.zetas(), j, big_delta, params.vartheta, eps_j, params.omega, ledger.gamma_zeta());
    let mut tighten_count = 0;
    let mut absolute_events = 0;
    loop {
        let bundle = cache.bundle(oracle, x, j, ledger)?;
        let trial = step_solver(&bundle, j, big_delta, params.declared_varsigma)?;
        let dt_trial = taylor_decrement(&bundle, &trial, j)?;
        let dt_d = taylor_decrement(&bundle, &cert.d, j)?;
        let (s, dt_s, used_fallback) = if dt_trial >= dt_d {
            (trial, dt_trial, false)
        } else {
            (cert.d.clone(), dt_d, true)
        };
        let norm = s.norm();
        let mut xi = None;
        let outcome = if dt_s > 0.0 && norm > 0.0 {
            let x_i = step2_xi(eps_j, params.omega, params.vartheta, norm, j);
            xi = Some(x_i);
            verify(norm, dt_s, bundle.error_bounds(), x_i, params.omega)?
        } else {
            VerifyOutcome::Insufficient
        };
        match outcome {
            VerifyOutcome::Relative => {
                return Ok(StepResult {
                    s,
                    dt_s,
                    outcome,
                    tighten_count,
                    cap: Some(cap),
                    xi,
                    dt_d,
                    absolute_events,
                    used_fallback,
                });
            }
            VerifyOutcome::Absolute => {
                absolute_events += 1;
                warn!("step accuracy test returned absolute (order {j}, {tighten_count} tightenings); tightening");
                if tighten_count > cap {
                    return Err(Error::Internal(format!(
                        "absolute outcome in step computation after {tighten_count} tightenings (cap {cap})"
                    )));
                }
            }
            VerifyOutcome::Insufficient => {}
        }
        if tighten_count >= MAX_TIGHTENINGS || ledger.max_zeta(j) < 1e-300 {
            return Err(Error::AccuracyExhausted {
                order: j,
                tightenings: tighten_count,
            });
        }
        ledger.tighten(j, Phase::Step2);
        tighten_count += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SymTensor;
    use crate::optimality::{certified_decrement, CertifyParams};
    use crate::oracle::{InexactOracle, Policy, Problem};
    use crate::problems::{Quadratic, Saddle};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn params(vartheta: f64) -> StepParams {
        StepParams {
            vartheta,
            omega: 0.01,
            declared_varsigma: 0.99,
        }
    }

    fn setup(problem: Arc<dyn Problem>, policy: Policy, q: usize) -> (InexactOracle, AccuracyLedger, DerivativeCache) {
        (
            InexactOracle::new(problem, policy, 5),
            AccuracyLedger::new(&vec![0.1; q], 0.1, 0.1, &[]).unwrap(),
            DerivativeCache::new(),
        )
    }

    #[test]
    fn pass_through_inside_optimality_radius() {
        let (mut o, mut l, mut c) = setup(Arc::new(Quadratic::new(2, 3.0).unwrap()), Policy::None, 1);
        let x = Vector::from_vec(vec![1.0, 1.0]);
        let cp = CertifyParams { varsigma: 0.99, omega: 0.01 };
        let cert = certified_decrement(&x, 1, 0.05, 1e-3, cp, &mut o, &mut l, &mut c).unwrap();
        let calls = o.ledger().len();
        let r = compute_step(&x, 0.05, &cert, 1e-3, params(0.1), &mut o, &mut l, &mut c).unwrap();
        assert_eq!(r.s, cert.d);
        assert_eq!(r.dt_s, cert.dt);
        assert_eq!(r.tighten_count, 0);
        assert_eq!(o.ledger().len(), calls);
    }

    #[test]
    fn larger_region_gives_ball_minimizer() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let q = Quadratic::from_matrix(a, Vector::zeros(2)).unwrap();
        let (mut o, mut l, mut c) = setup(Arc::new(q), Policy::None, 2);
        let x = Vector::from_vec(vec![3.0, -3.0]);
        let cp = CertifyParams { varsigma: 0.99, omega: 0.01 };
        let cert = certified_decrement(&x, 2, 1.0, 1e-3, cp, &mut o, &mut l, &mut c).unwrap();
        let r = compute_step(&x, 2.0, &cert, 1e-3, params(1.0), &mut o, &mut l, &mut c).unwrap();
        assert!(r.s.norm() <= 2.0 + 1e-12);
        assert!(r.dt_s >= cert.dt);
        // Brute force over the radius-2 disk.
        let mut best = 0.0f64;
        for a in 0..720 {
            let th = a as f64 * std::f64::consts::PI / 360.0;
            for rad in [2.0, 1.5, 1.0] {
                let d = Vector::from_vec(vec![rad * th.cos(), rad * th.sin()]);
                let b = &cert.bundle;
                best = best.max(taylor_decrement(b, &d, 2).unwrap());
            }
        }
        assert!(r.dt_s >= best - 1e-9);
        assert_eq!(r.outcome, VerifyOutcome::Relative);
    }

    #[test]
    fn adversarial_step_is_relatively_accurate() {
        let q = Arc::new(Saddle::default());
        for seed in 0..5 {
            let mut o = InexactOracle::new(q.clone(), Policy::Adversarial, seed);
            let mut l = AccuracyLedger::new(&[0.1, 0.1], 0.1, 0.1, &[]).unwrap();
            let mut c = DerivativeCache::new();
            let x = Vector::from_vec(vec![0.3, 0.05]);
            let cp = CertifyParams { varsigma: 0.99, omega: 0.01 };
            let cert = certified_decrement(&x, 1, 0.5, 1e-2, cp, &mut o, &mut l, &mut c).unwrap();
            let cap = step2_tightening_cap(l.zetas(), 1, 3.0, 0.5, 1e-2, 0.01, 0.1);
            let r = compute_step(&x, 3.0, &cert, 1e-2, params(0.5), &mut o, &mut l, &mut c).unwrap();
            assert_eq!(r.outcome, VerifyOutcome::Relative);
            assert!(r.tighten_count <= cap);
            let exact = DerivativeBundle::exact(x.clone(), vec![q.derivative(&x, 1).unwrap()]).unwrap();
            let true_dt = taylor_decrement(&exact, &r.s, 1).unwrap();
            assert!((r.dt_s - true_dt).abs() <= 0.01 * r.dt_s + 1e-15);
            assert!(r.dt_s >= r.dt_d);
        }
    }

    #[test]
    fn solver_examples() {
        let g = SymTensor::from_vector(&Vector::from_vec(vec![1.0, 0.0])).unwrap();
        let b = DerivativeBundle::exact(Vector::zeros(2), vec![g]).unwrap();
        let s = step_solver(&b, 1, 3.0, 1.0).unwrap();
        assert_relative_eq!(s[0], -3.0);
        assert_relative_eq!(s[1], 0.0);
        let g = SymTensor::from_vector(&Vector::zeros(2)).unwrap();
        let h = SymTensor::from_matrix(&DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0])).unwrap();
        let b = DerivativeBundle::exact(Vector::zeros(2), vec![g, h]).unwrap();
        let s = step_solver(&b, 2, 2.0, 1.0).unwrap();
        assert_relative_eq!(s[0].abs(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn xi_floor() {
        let xi = step2_xi(1e-2, 0.02, 0.5, 100.0, 2);
        assert_relative_eq!(xi, 1e-2 / (4.0 * 1.02) * (0.005f64).powi(2));
        assert_relative_eq!(step2_xi(1e-2, 0.02, 0.5, 0.1, 2), 1e-2 / (4.0 * 1.02));
    }
}
