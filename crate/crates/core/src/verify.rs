//! Certification of Taylor decrements computed from inexact derivatives.
//!
//! [`verify`] decides, from the current absolute derivative accuracies alone,
//! whether an inexact decrement is known to relative accuracy `omega`
//! ([`VerifyOutcome::Relative`]), whether the whole model is accurate to an
//! absolute level `xi · delta^r / r!` ([`VerifyOutcome::Absolute`]), or
//! whether the accuracies have to be tightened.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decrement_error_bound, factorial, taylor_decrement, DerivativeBundle, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyOutcome {
    Relative,
    Absolute,
    Insufficient,
}

impl VerifyOutcome {
    pub fn is_sufficient(self) -> bool {
        !matches!(self, VerifyOutcome::Insufficient)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VerifyOutcome::Relative => "relative",
            VerifyOutcome::Absolute => "absolute",
            VerifyOutcome::Insufficient => "insufficient",
        }
    }
}

/// Classifies the accuracy of a decrement `dt` over a ball of radius `delta`
/// given per-order tensor error bounds `zetas` (orders `1..=zetas.len()`).
///
/// The relative test is tried first and both comparisons are non-strict.
pub fn verify(delta: f64, dt: f64, zetas: &[f64], xi: f64, omega: f64) -> Result<VerifyOutcome> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {delta}")));
    }
    if !(xi > 0.0) {
        return Err(Error::InvalidArgument(format!("xi must be positive, got {xi}")));
    }
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("decrement must be >= 0, got {dt}")));
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::InvalidArgument(format!("omega must lie in (0, 1], got {omega}")));
    }
    if zetas.is_empty() || zetas.iter().any(|z| !(*z >= 0.0)) {
        return Err(Error::InvalidArgument("zetas must be a non-empty list of values >= 0".into()));
    }
    let r = zetas.len();
    let err = decrement_error_bound(zetas, delta);
    if dt > 0.0 && err <= omega * dt {
        Ok(VerifyOutcome::Relative)
    } else if err <= omega * xi * delta.powi(r as i32) / factorial(r) {
        Ok(VerifyOutcome::Absolute)
    } else {
        Ok(VerifyOutcome::Insufficient)
    }
}

/// Violations found by [`check_verify_guarantees`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GuaranteeReport {
    pub outcome: Option<VerifyOutcome>,
    pub samples: usize,
    /// Outcome was Insufficient although the absolute test held a priori.
    pub sufficiency_violations: usize,
    /// Absolute outcome but decrement or model error above `xi delta^r/r!`.
    pub absolute_violations: usize,
    /// Relative outcome but model error above `omega · dt(v)`.
    pub relative_violations: usize,
}

impl GuaranteeReport {
    pub fn violations(&self) -> usize {
        self.sufficiency_violations + self.absolute_violations + self.relative_violations
    }
}

/// Runs [`verify`] for the inexact decrement at `v` and checks the outcome's
/// guarantees against the exact model at `samples` random points `w` with
/// `||w|| <= delta`.
///
/// The caller must construct `inexact` so that its order-`i` tensor is within
/// `inexact.error_bound(i)` of `exact`'s in operator norm.
pub fn check_verify_guarantees(
    exact: &DerivativeBundle,
    inexact: &DerivativeBundle,
    delta: f64,
    v: &Vector,
    omega: f64,
    xi: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GuaranteeReport> {
    let r = inexact.degree();
    let zetas = inexact.error_bounds();
    let dt_v = taylor_decrement(inexact, v, r)?;
    let outcome = verify(delta, dt_v, zetas, xi, omega)?;
    let mut report = GuaranteeReport {
        outcome: Some(outcome),
        samples,
        ..Default::default()
    };
    let abs_level = xi * delta.powi(r as i32) / factorial(r);
    if decrement_error_bound(zetas, delta) <= omega * abs_level && !outcome.is_sufficient() {
        report.sufficiency_violations += 1;
    }
    // Relative slack for rounding in the two decrement evaluations.
    let tol = |scale: f64| 1e-12 * (1.0 + scale);
    let n = v.len();
    for k in 0..samples {
        let w = if k == 0 {
            v.clone()
        } else {
            sample_ball(rng, n, delta, k % 4 == 0)
        };
        let gap = (taylor_decrement(inexact, &w, r)? - taylor_decrement(exact, &w, r)?).abs();
        match outcome {
            VerifyOutcome::Absolute => {
                if dt_v.max(gap) > abs_level + tol(abs_level) {
                    report.absolute_violations += 1;
                }
            }
            VerifyOutcome::Relative => {
                if !(dt_v > 0.0) || gap > omega * dt_v + tol(dt_v) {
                    report.relative_violations += 1;
                }
            }
            VerifyOutcome::Insufficient => {}
        }
    }
    Ok(report)
}

/// Uniform point in the ball of radius `radius`, or on its sphere.
pub fn sample_ball(rng: &mut impl Rng, n: usize, radius: f64, on_sphere: bool) -> Vector {
    let dir = loop {
        let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            break v / norm;
        }
    };
    let scale = if on_sphere {
        radius
    } else {
        radius * rng.random::<f64>().powf(1.0 / n as f64)
    };
    dir * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_example() {
        assert_eq!(verify(1.0, 1.0, &[0.01], 0.5, 0.1).unwrap(), VerifyOutcome::Relative);
    }

    #[test]
    fn zero_case_is_absolute() {
        for (delta, xi, omega) in [(1.0, 0.5, 0.1), (0.01, 1e-6, 1.0), (3.0, 2.0, 0.5)] {
            assert_eq!(verify(delta, 0.0, &[0.0], xi, omega).unwrap(), VerifyOutcome::Absolute);
            assert_eq!(
                verify(delta, 0.0, &[0.0, 0.0], xi, omega).unwrap(),
                VerifyOutcome::Absolute
            );
        }
    }

    #[test]
    fn insufficient_example() {
        assert_eq!(verify(1.0, 0.5, &[1.0], 0.5, 0.1).unwrap(), VerifyOutcome::Insufficient);
    }

    #[test]
    fn absolute_boundary_is_inclusive() {
        let (omega, xi) = (0.1, 0.5);
        let zeta = omega * xi;
        assert_eq!(verify(1.0, 0.0, &[zeta], xi, omega).unwrap(), VerifyOutcome::Absolute);
        // Relative boundary: err == omega * dt.
        assert_eq!(verify(1.0, 0.5, &[0.05], 1e-9, omega).unwrap(), VerifyOutcome::Relative);
    }

    #[test]
    fn exact_data_with_positive_decrement_is_relative() {
        assert_eq!(verify(0.3, 1e-12, &[0.0, 0.0], 1.0, 0.01).unwrap(), VerifyOutcome::Relative);
    }

    #[test]
    fn argument_errors() {
        assert!(verify(1.0, -1e-3, &[0.0], 1.0, 0.1).is_err());
        assert!(verify(0.0, 1.0, &[0.0], 1.0, 0.1).is_err());
        assert!(verify(1.0, 1.0, &[0.0], 0.0, 0.1).is_err());
        assert!(verify(1.0, 1.0, &[], 1.0, 0.1).is_err());
    }
}
