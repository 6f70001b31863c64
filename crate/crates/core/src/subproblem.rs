//! Maximizers of Taylor decrements over a Euclidean ball.
//!
//! * order 1: the scaled steepest-descent step, exact;
//! * order 2: the global minimizer of a quadratic over a ball, from an
//!   eigendecomposition and a safeguarded Newton iteration on the secular
//!   equation, including the hard case;
//! * order 3: multi-start projected gradient ascent, a heuristic.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{decrement_gradient, taylor_decrement, DerivativeBundle, Vector};
use crate::verify::sample_ball;

/// Relative tolerance on `||d(λ)|| = radius` in the secular solve.
pub const SECULAR_TOL: f64 = 1e-10;

/// Number of random starts added to the `2n` axis starts of the multi-start
/// ascent.
pub const RANDOM_STARTS: usize = 8;

/// Iteration cap of each projected ascent run.
pub const ASCENT_ITERATIONS: usize = 200;

const MULTISTART_SEED: u64 = 0x7271_6461;

/// `-radius · g / ||g||`, or zero when `g = 0`.
pub fn steepest_step(g: &Vector, radius: f64) -> Vector {
    let norm = g.norm();
    if norm == 0.0 {
        Vector::zeros(g.len())
    } else {
        g * (-radius / norm)
    }
}

/// How the order-2 solution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallCase {
    Interior,
    Boundary,
    Hard,
}

/// Global minimizer of `gᵀd + ½ dᵀHd` subject to `||d|| <= radius`.
pub fn ball_quadratic(g: &Vector, h: &DMatrix<f64>, radius: f64) -> (Vector, BallCase) {
    let n = g.len();
    let eig = SymmetricEigen::new(h.clone());
    let lambdas = &eig.eigenvalues;
    let q = &eig.eigenvectors;
    let gh = q.transpose() * g;

    let scale = lambdas.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let lambda_min = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let gnorm = g.norm();
    let eig_tol = 1e-12 * scale;
    let grad_tol = 1e-14 * (gnorm + scale * radius);

    let lambda_lo = (-lambda_min).max(0.0);
    // Eigen-directions singular at lambda_lo.
    let singular: Vec<usize> = (0..n).filter(|&i| lambdas[i] + lambda_lo <= eig_tol).collect();
    let singular_free = singular.iter().all(|&i| gh[i].abs() <= grad_tol);

    let step_at = |lam: f64, skip_singular: bool| -> Vector {
        let mut coeffs = Vector::zeros(n);
        for i in 0..n {
            let den = lambdas[i] + lam;
            if skip_singular && singular.contains(&i) {
                continue;
            }
            coeffs[i] = -gh[i] / den;
        }
        q * coeffs
    };

    if singular_free {
        let d0 = step_at(lambda_lo, true);
        let r0 = d0.norm();
        if r0 <= radius {
            if lambda_lo == 0.0 || singular.is_empty() {
                return (d0, BallCase::Interior);
            }
            let tau = (radius * radius - r0 * r0).max(0.0).sqrt();
            let dir = q.column(singular[0]).into_owned();
            return (d0 + dir * tau, BallCase::Hard);
        }
    } else if lambda_min > 0.0 {
        let d0 = step_at(0.0, false);
        if d0.norm() <= radius {
            return (d0, BallCase::Interior);
        }
    }

    // Boundary solution: find lambda > lambda_lo with ||d(lambda)|| = radius.
    let norm_at = |lam: f64| -> (f64, f64) {
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..n {
            let den = lambdas[i] + lam;
            if den <= 0.0 {
                // Only reachable for singular components with zero gradient.
                continue;
            }
            s2 += gh[i] * gh[i] / (den * den);
            s3 += gh[i] * gh[i] / (den * den * den);
        }
        (s2.sqrt(), s3)
    };
    let mut lo = lambda_lo;
    let mut hi = (gnorm / radius - lambda_min).max(lambda_lo) + f64::EPSILON * scale;
    while norm_at(hi).0 > radius {
        hi = lo + 2.0 * (hi - lo).max(f64::MIN_POSITIVE);
    }
    let mut lam = hi;
    for _ in 0..200 {
        let (norm, s3) = norm_at(lam);
        if (norm - radius).abs() <= SECULAR_TOL * radius {
            break;
        }
        if norm > radius {
            lo = lam;
        } else {
            hi = lam;
        }
        // Newton on 1/||d|| - 1/radius.
        let phi = 1.0 / norm - 1.0 / radius;
        let dphi = s3 / (norm * norm * norm);
        let mut next = if norm.is_finite() && dphi > 0.0 {
            lam - phi / dphi
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == lam || hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            lam = next;
            break;
        }
        lam = next;
    }
    let mut d = step_at(lam, false);
    let dn = d.norm();
    if dn > radius {
        d *= radius / dn;
    }
    (d, BallCase::Boundary)
}

fn project(d: Vector, radius: f64) -> Vector {
    let n = d.norm();
    if n > radius {
        d * (radius / n)
    } else {
        d
    }
}

/// Projected gradient ascent of the degree-`j` decrement from one start.
pub fn projected_ascent(b: &DerivativeBundle, j: usize, radius: f64, start: Vector, iterations: usize) -> Result<(Vector, f64)> {
    let mut d = project(start, radius);
    let mut val = taylor_decrement(b, &d, j)?;
    let mut step = radius;
    for _ in 0..iterations {
        let g = decrement_gradient(b, &d, j)?;
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        let mut t = 2.0 * step / gn;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = project(&d + &g * t, radius);
            let tv = taylor_decrement(b, &trial, j)?;
            if tv >= val + 1e-4 * g.dot(&(&trial - &d)) && tv >= val {
                accepted = Some((trial, tv));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, tv)) = accepted else { break };
        let moved = (&trial - &d).norm();
        step = moved.max(1e-3 * radius);
        d = trial;
        let gain = tv - val;
        val = tv;
        if moved <= 1e-13 * radius || gain <= 1e-16 * val.abs() {
            break;
        }
    }
    Ok((d, val))
}

/// Multi-start projected gradient ascent: `±radius · e_i` plus
/// [`RANDOM_STARTS`] seeded points of the ball.
pub fn multistart_ascent(b: &DerivativeBundle, j: usize, radius: f64) -> Result<(Vector, f64)> {
    let n = b.dim();
    let mut starts = Vec::with_capacity(2 * n + RANDOM_STARTS);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            starts.push(Vector::from_fn(n, |k, _| if k == i { sign * radius } else { 0.0 }));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(MULTISTART_SEED);
    for k in 0..RANDOM_STARTS {
        starts.push(sample_ball(&mut rng, n, radius, k % 2 == 0));
    }
    let mut best = (Vector::zeros(n), 0.0);
    for s in starts {
        let (d, v) = projected_ascent(b, j, radius, s, ASCENT_ITERATIONS)?;
        if v > best.1 {
            best = (d, v);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obj(g: &Vector, h: &DMatrix<f64>, d: &Vector) -> f64 {
        g.dot(d) + 0.5 * d.dot(&(h * d))
    }

    fn grid_min(g: &Vector, h: &DMatrix<f64>, radius: f64) -> f64 {
        let mut best = 0.0f64;
        let m = 2000;
        for a in 0..m {
            let th = 2.0 * std::f64::consts::PI * a as f64 / m as f64;
            for r in [radius, 0.75 * radius, 0.5 * radius, 0.25 * radius] {
                let d = Vector::from_vec(vec![r * th.cos(), r * th.sin()]);
                best = best.min(obj(g, h, &d));
            }
        }
        best
    }

    #[test]
    fn hard_case_eigen_direction() {
        let g = Vector::zeros(2);
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        let (d, case) = ball_quadratic(&g, &h, 1.0);
        assert_eq!(case, BallCase::Hard);
        assert_relative_eq!(d[0].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(-obj(&g, &h, &d), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_newton_step() {
        let g = Vector::from_vec(vec![1.0, 1.0]);
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 2.0]);
        let (d, case) = ball_quadratic(&g, &h, 10.0);
        assert_eq!(case, BallCase::Interior);
        assert_relative_eq!(d[0], -0.25, epsilon = 1e-14);
        assert_relative_eq!(d[1], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn boundary_and_near_hard_cases_match_grid() {
        let cases = [
            (vec![1.0, 0.5], vec![-1.0, 0.3, 0.3, 2.0], 1.0),
            (vec![1e-9, 1.0], vec![-3.0, 0.0, 0.0, 1.0], 0.7),
            (vec![0.0, 1.0], vec![-3.0, 0.0, 0.0, 1.0], 2.0),
            (vec![3.0, -4.0], vec![1.0, 0.0, 0.0, 1.0], 0.5),
        ];
        for (g, h, r) in cases {
            let g = Vector::from_vec(g);
            let h = DMatrix::from_row_slice(2, 2, &h);
            let (d, _) = ball_quadratic(&g, &h, r);
            assert!(d.norm() <= r * (1.0 + 1e-12));
            let v = obj(&g, &h, &d);
            assert!(v <= grid_min(&g, &h, r) + 1e-9, "{v} vs grid");
        }
    }

    #[test]
    fn steepest() {
        let d = steepest_step(&Vector::from_vec(vec![3.0, 4.0]), 0.5);
        assert_relative_eq!(d[0], -0.3, epsilon = 1e-15);
        assert_relative_eq!(d[1], -0.4, epsilon = 1e-15);
        assert_eq!(steepest_step(&Vector::zeros(2), 1.0), Vector::zeros(2));
    }
}
