//! Brute-force reference values used to check the solver: the optimality
//! measure by dense sampling and local polishing, and sampled Lipschitz
//! constants of derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{taylor_decrement, DerivativeBundle, Vector};
use crate::oracle::Problem;
use crate::subproblem::projected_ascent;

/// Largest dimension the dense sampler accepts.
pub const MAX_REFERENCE_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Grid points per coordinate of the enclosing cube.
    pub resolution: usize,
    /// Number of best samples refined by local ascent.
    pub refinements: usize,
    /// Iterations of each local ascent.
    pub polish_iterations: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 24,
            refinements: 10,
            polish_iterations: 2000,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.resolution < 16 {
            return Err(Error::InvalidArgument(format!("grid resolution must be >= 16, got {}", self.resolution)));
        }
        if n == 0 || n > MAX_REFERENCE_DIM {
            return Err(Error::InvalidArgument(format!(
                "reference sampling supports 1..={MAX_REFERENCE_DIM} dimensions, got {n}"
            )));
        }
        Ok(())
    }

    /// Resolution actually used in `n` dimensions, reduced so that the grid
    /// stays near a million points.
    fn effective_resolution(&self, n: usize) -> usize {
        let cap = (1e6f64).powf(1.0 / n as f64).floor() as usize;
        self.resolution.min(cap.max(16))
    }
}

/// Sampled maximum of the exact order-`j` decrement of `p` at `x` over the
/// ball of radius `delta`. A lower bound on the optimality measure.
pub fn phi_reference(p: &dyn Problem, x: &Vector, j: usize, delta: f64, spec: &GridSpec) -> Result<f64> {
    let tensors = (1..=j).map(|i| p.derivative(x, i)).collect::<Result<Vec<_>>>()?;
    let b = DerivativeBundle::exact(x.clone(), tensors)?;
    Ok(phi_reference_bundle(&b, j, delta, spec)?.0)
}

/// As [`phi_reference`] for a given bundle; also returns the maximizer.
pub fn phi_reference_bundle(b: &DerivativeBundle, j: usize, delta: f64, spec: &GridSpec) -> Result<(f64, Vector)> {
    let n = b.dim();
    spec.validate(n)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {delta}")));
    }
    let m = spec.effective_resolution(n);
    let keep = spec.refinements.max(1);
    // Best `keep` samples, kept sorted by decreasing value.
    let mut best: Vec<(f64, Vector)> = Vec::with_capacity(keep + 1);
    let mut offer = |v: f64, d: Vector| {
        if best.len() == keep && v <= best[keep - 1].0 {
            return;
        }
        let pos = best.iter().position(|(bv, _)| v > *bv).unwrap_or(best.len());
        best.insert(pos, (v, d));
        best.truncate(keep);
    };
    offer(0.0, Vector::zeros(n));
    let mut idx = vec![0usize; n];
    let total = m.pow(n as u32);
    for _ in 0..total {
        let p = Vector::from_fn(n, |i, _| delta * (-1.0 + 2.0 * (idx[i] as f64 + 0.5) / m as f64));
        let norm = p.norm();
        if norm > 0.0 {
            let on_sphere = &p * (delta / norm);
            offer(taylor_decrement(b, &on_sphere, j)?, on_sphere);
            if norm <= delta {
                offer(taylor_decrement(b, &p, j)?, p);
            }
        }
        for c in idx.iter_mut() {
            *c += 1;
            if *c < m {
                break;
            }
            *c = 0;
        }
    }
    let mut result = (0.0, Vector::zeros(n));
    for (v, d) in best {
        let (pd, pv) = projected_ascent(b, j, delta, d.clone(), spec.polish_iterations)?;
        let (v, d) = if pv >= v { (pv, pd) } else { (v, d) };
        if v > result.0 {
            result = (v, d);
        }
    }
    Ok(result)
}

/// Operator norm of the difference of two derivative tensors.
fn tensor_gap(p: &dyn Problem, x: &Vector, y: &Vector, j: usize) -> Result<f64> {
    let a = p.derivative(x, j)?;
    let b = p.derivative(y, j)?;
    Ok((&a - &b).operator_norm())
}

/// Largest sampled `||∇^j f(x) - ∇^j f(y)|| / ||x - y||` over pairs in the
/// box `[lo, hi]`, multiplied by `safety`.
///
/// Half of the pairs are uniform in the box; the other half are short
/// segments, which catch local curvature peaks.
pub fn lipschitz_estimate(p: &dyn Problem, lo: &[f64], hi: &[f64], j: usize, samples: usize, seed: u64, safety: f64) -> Result<f64> {
    let n = p.dim();
    if lo.len() != n || hi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lo.len().min(hi.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt().max(1e-12);
    let point = |rng: &mut ChaCha8Rng| Vector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>());
    let mut best = 0.0f64;
    for k in 0..samples {
        let x = point(&mut rng);
        let y = if k % 2 == 0 {
            point(&mut rng)
        } else {
            let dir = crate::verify::sample_ball(&mut rng, n, 1e-3 * width, true);
            &x + dir
        };
        let dist = (&x - &y).norm();
        if dist == 0.0 {
            continue;
        }
        best = best.max(tensor_gap(p, &x, &y, j)? / dist);
    }
    Ok(best * safety)
}
