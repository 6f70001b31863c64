//! Complexity constants of the dynamic-accuracy trust-region method and the
//! evaluation bounds built from them.

use serde::{Deserialize, Serialize};

use crate::driver::TrConfig;
use crate::error::{Error, Result};
use crate::model::factorial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `max(1, max_j L_{f,j})`.
    pub l_f: f64,
    pub eps_min: f64,
    pub kappa_big_delta: f64,
    pub kappa_delta: f64,
    pub kappa_s: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub kappa_c: f64,
    pub kappa_d: f64,
    pub kappa_e: f64,
    pub kappa_f: f64,
    pub kappa_acc: f64,
    /// Tightenings after which no further accuracy can be requested.
    pub i_zeta_min: i64,
    /// Bound on inexact evaluations of `f`.
    pub eval_bound_f: f64,
    /// Bound on derivative evaluation rounds.
    pub eval_bound_d: f64,
    /// `|S| bound + i_zeta_min + 1`, the count used inside the proof.
    pub eval_bound_d_proof: f64,
    /// Bound on successful iterations.
    pub successes_bound: f64,
    /// `κ_δ ε_min`, the radius floor.
    pub delta_min: f64,
    /// Exact decrease guaranteed by each successful iteration.
    pub decrease_floor: f64,
}

impl BoundConstants {
    /// Iteration bound when `successes` iterations succeeded.
    pub fn iteration_bound(&self, cfg: &TrConfig, successes: usize) -> f64 {
        iteration_bound(successes, cfg.gamma2, cfg.gamma3, self.delta_min, cfg.delta0) + 1.0
    }

    /// Lowest accuracy any order-`j` request can need, one tightening past
    /// the level at which every accuracy test is guaranteed to pass.
    pub fn accuracy_floor(&self, cfg: &TrConfig, j: usize) -> f64 {
        let eps_j = cfg.eps[j - 1];
        cfg.gamma_zeta * cfg.varsigma * cfg.omega / (8.0 * (1.0 + cfg.omega)) * eps_j * (self.kappa_delta * self.eps_min).powi(j as i32 - 1)
            / factorial(j)
    }
}

/// `|S|(1 + log γ3/|log γ2|) + |log(Δ_min/Δ_0)|/|log γ2|`.
pub fn iteration_bound(successes: usize, gamma2: f64, gamma3: f64, delta_min: f64, delta0: f64) -> f64 {
    let lg2 = gamma2.ln().abs();
    successes as f64 * (1.0 + gamma3.ln() / lg2) + (delta_min / delta0).ln().abs() / lg2
}

/// `κ_Δ = γ1(1-η2)/max(1, L_f) · min[ϑ, Δ0 min_j δ0^j / (2q(max_i ||∇^i f(x0)|| + κ_ζ))]`
/// with `δ0 = min(Δ0, ϑ)`.
pub fn kappa_big_delta(cfg: &TrConfig, l_f: f64, max_deriv_norm_x0: f64) -> f64 {
    let delta0 = cfg.delta0.min(cfg.vartheta);
    let q = cfg.q;
    let min_pow = (1..=q).map(|j| delta0.powi(j as i32)).fold(f64::INFINITY, f64::min);
    let inner = cfg.delta0 * min_pow / (2.0 * q as f64 * (max_deriv_norm_x0 + cfg.kappa_zeta));
    cfg.gamma1 * (1.0 - cfg.eta2) / l_f.max(1.0) * cfg.vartheta.min(inner)
}

/// Evaluates every constant for a problem with Lipschitz constant `l_f`,
/// starting value `f0`, lower bound `f_low` and derivative norms
/// `||∇^i f(x0)||`, `i = 1..=q`.
pub fn compute_bounds(cfg: &TrConfig, l_f: f64, f0: f64, f_low: f64, deriv_norms_x0: &[f64]) -> Result<BoundConstants> {
    if !(l_f.is_finite() && f0.is_finite() && f_low.is_finite()) || deriv_norms_x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bound inputs must be finite (L_f = {l_f}, f0 = {f0}, f_low = {f_low})"
        )));
    }
    if f0 < f_low {
        return Err(Error::InvalidArgument(format!("f0 = {f0} lies below f_low = {f_low}")));
    }
    let q = cfg.q;
    let qf = q as f64;
    let l_f = l_f.max(1.0);
    let eps_min = cfg.eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_norm = deriv_norms_x0.iter().cloned().fold(0.0, f64::max);

    let kappa_big_delta = kappa_big_delta(cfg, l_f, max_norm);
    let kappa_delta = kappa_big_delta / (1.0 + cfg.omega);
    let kappa_s = factorial(q) / ((cfg.eta1 - 2.0 * cfg.omega) * kappa_delta.powi(q as i32 + 1));
    let lg2 = cfg.gamma2.ln().abs();
    let lgz = cfg.gamma_zeta.ln().abs();
    let kappa_a = 2.0 * kappa_s * (1.0 + cfg.gamma3.ln() / lg2);
    let kappa_b = 2.0 / lg2;
    let kappa_c = 2.0 / lg2 * (kappa_delta / cfg.delta0).ln().abs() + 2.0 / lgz + 2.0;
    let kappa_acc = cfg.varsigma * cfg.omega * kappa_delta.powi(q as i32 - 1) / (8.0 * (1.0 + cfg.omega));
    let i_zeta_min = ((qf * eps_min.ln() + (kappa_acc / cfg.kappa_zeta).ln()) / cfg.gamma_zeta.ln()).floor() as i64;
    let kappa_d = kappa_s;
    let kappa_e = qf / lgz;
    let kappa_f = (kappa_acc / cfg.kappa_zeta).ln().abs() / lgz + 2.0;

    let gap = f0 - f_low;
    let scale = eps_min.powi(q as i32 + 1);
    let log_eps = eps_min.ln().abs();
    let successes_bound = kappa_s * gap / scale;
    Ok(BoundConstants {
        l_f,
        eps_min,
        kappa_big_delta,
        kappa_delta,
        kappa_s,
        kappa_a,
        kappa_b,
        kappa_c,
        kappa_d,
        kappa_e,
        kappa_f,
        kappa_acc,
        i_zeta_min,
        eval_bound_f: kappa_a * gap / scale + kappa_b * log_eps + kappa_c,
        eval_bound_d: kappa_d * gap / scale + kappa_e * log_eps + kappa_f,
        eval_bound_d_proof: successes_bound + i_zeta_min as f64 + 1.0,
        successes_bound,
        delta_min: kappa_delta * eps_min,
        decrease_floor: (cfg.eta1 - 2.0 * cfg.omega) * kappa_delta.powi(q as i32 + 1) * eps_min.powi(q as i32 + 1) / factorial(q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> TrConfig {
        TrConfig::new(2, vec![1e-2, 1e-3])
    }

    #[test]
    fn hand_computed_kappa_delta() {
        let c = cfg();
        let b = compute_bounds(&c, 4.0, 10.0, 0.0, &[3.0, 2.0]).unwrap();
        // δ0 = min(1, 0.5) = 0.5, min_j δ0^j = 0.25, 2q(3 + 0.1) = 12.4.
        let hand = 0.25 * 0.1 / 4.0 * f64::min(0.5, 1.0 * 0.25 / 12.4);
        assert_relative_eq!(b.kappa_big_delta, hand, max_relative = 1e-12);
        assert_relative_eq!(b.kappa_delta, hand / (1.0 + c.omega), max_relative = 1e-12);
        let ks = 2.0 / ((0.05 - 2.0 * c.omega) * b.kappa_delta.powi(3));
        assert_relative_eq!(b.kappa_s, ks, max_relative = 1e-12);
    }

    #[test]
    fn kappa_delta_tends_to_kappa_big_delta() {
        let mut c = cfg();
        c.omega = 1e-12;
        let b = compute_bounds(&c, 1.0, 1.0, 0.0, &[1.0, 1.0]).unwrap();
        assert_relative_eq!(b.kappa_delta, b.kappa_big_delta, max_relative = 1e-11);
    }

    #[test]
    fn leading_term_scales_with_eps() {
        let mut c = cfg();
        c.eps = vec![1e-2, 1e-2];
        let a = compute_bounds(&c, 1.0, 5.0, 0.0, &[1.0, 1.0]).unwrap();
        c.eps = vec![5e-3, 5e-3];
        let b = compute_bounds(&c, 1.0, 5.0, 0.0, &[1.0, 1.0]).unwrap();
        let lead_a = a.kappa_a * 5.0 / a.eps_min.powi(3);
        let lead_b = b.kappa_a * 5.0 / b.eps_min.powi(3);
        assert_relative_eq!(lead_b / lead_a, 8.0, max_relative = 1e-12);
    }

    #[test]
    fn rejects_nonfinite() {
        assert!(compute_bounds(&cfg(), 1.0, 1.0, f64::NEG_INFINITY, &[1.0]).is_err());
        assert!(compute_bounds(&cfg(), 1.0, -1.0, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn all_positive() {
        let b = compute_bounds(&cfg(), 2.0, 3.0, 0.0, &[1.0, 5.0]).unwrap();
        for v in [b.kappa_big_delta, b.kappa_delta, b.kappa_s, b.kappa_a, b.kappa_b, b.kappa_c, b.kappa_e, b.kappa_f, b.kappa_acc] {
            assert!(v > 0.0);
        }
        assert!(b.i_zeta_min > 0);
    }
}
