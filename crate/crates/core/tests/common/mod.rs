#![allow(dead_code)]

use rand::Rng;
use trqda_core::{DerivativeBundle, SymTensor, Vector};

pub fn random_tensor(rng: &mut impl Rng, order: usize, n: usize, scale: f64) -> SymTensor {
    SymTensor::from_fn(order, n, |_| scale * rng.random_range(-1.0..1.0)).unwrap()
}

pub fn random_bundle(rng: &mut impl Rng, n: usize, r: usize, scale: f64) -> DerivativeBundle {
    let ts = (1..=r).map(|i| random_tensor(rng, i, n, scale)).collect();
    DerivativeBundle::exact(Vector::zeros(n), ts).unwrap()
}

/// `exact` with every tensor moved by a perturbation of operator norm at most
/// `zetas[i]`; the bundle carries `zetas` as its error bounds.
pub fn perturbed(rng: &mut impl Rng, exact: &DerivativeBundle, zetas: &[f64]) -> DerivativeBundle {
    let n = exact.dim();
    let ts = exact
        .tensors()
        .iter()
        .zip(zetas)
        .map(|(t, &z)| {
            let e = random_tensor(rng, t.order(), n, 1.0);
            let norm = e.operator_norm();
            let frac = rng.random_range(0.0..=1.0);
            // Stay a hair inside the bound so rounding cannot push it over.
            let e = e.scaled((1.0 - 1e-9) * frac * z / norm.max(1e-300));
            t + &e
        })
        .collect();
    DerivativeBundle::new(exact.x().clone(), ts, zetas.to_vec()).unwrap()
}
