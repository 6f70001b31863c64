//! Dense symmetric derivative tensors and Taylor models built from them.
//!
//! A [`SymTensor`] of order `i` stores the `n^i` entries of an `i`-linear
//! symmetric form in row-major order. Orders 1 to 3 are supported, which is
//! all the engine ever builds. A [`DerivativeBundle`] collects the tensors of
//! orders `1..=j` evaluated at one point together with the absolute error
//! bound each of them was certified to.

use std::collections::HashMap;
use std::ops::{Add, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points, steps and displacements in problem space.
pub type Vector = DVector<f64>;

/// Highest tensor order the engine stores densely.
pub const MAX_ORDER: usize = 3;

/// `i!` as a float.
pub fn factorial(i: usize) -> f64 {
    (1..=i).map(|k| k as f64).product()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Dense symmetric tensor of order 1, 2 or 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order,
                max: MAX_ORDER,
            });
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("tensor dimension must be >= 1".into()));
        }
        Ok(Self {
            order,
            dim,
            data: vec![0.0; dim.pow(order as u32)],
        })
    }

    pub fn from_vector(v: &Vector) -> Result<Self> {
        let mut t = Self::zeros(1, v.len())?;
        t.data.copy_from_slice(v.as_slice());
        Ok(t)
    }

    /// Builds an order-2 tensor from a square matrix, symmetrizing it.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        check_dim(m.nrows(), m.ncols())?;
        let n = m.nrows();
        let mut t = Self::zeros(2, n)?;
        for a in 0..n {
            for b in 0..n {
                t.data[a * n + b] = 0.5 * (m[(a, b)] + m[(b, a)]);
            }
        }
        Ok(t)
    }

    /// Builds a tensor from an entry function and symmetrizes the result.
    pub fn from_fn(order: usize, dim: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(order, dim)?;
        let mut idx = vec![0usize; order];
        for (flat, entry) in t.data.iter_mut().enumerate() {
            unflatten(flat, dim, &mut idx);
            *entry = f(&idx);
        }
        t.symmetrize();
        Ok(t)
    }

    /// The rank-one tensor `u ⊗ ... ⊗ u`; its operator norm is `||u||^order`.
    pub fn rank_one(u: &Vector, order: usize) -> Result<Self> {
        let mut t = Self::zeros(order, u.len())?;
        let n = u.len();
        let mut idx = vec![0usize; order];
        for (flat, entry) in t.data.iter_mut().enumerate() {
            unflatten(flat, n, &mut idx);
            *entry = idx.iter().map(|&k| u[k]).product();
        }
        Ok(t)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.order);
        self.data[idx.iter().fold(0, |acc, &k| acc * self.dim + k)]
    }

    /// Replaces every entry by the average over all permutations of its index.
    pub fn symmetrize(&mut self) {
        if self.order == 1 {
            return;
        }
        let mut sums: HashMap<Vec<usize>, (f64, usize)> = HashMap::new();
        let mut idx = vec![0usize; self.order];
        for flat in 0..self.data.len() {
            unflatten(flat, self.dim, &mut idx);
            let mut key = idx.clone();
            key.sort_unstable();
            let e = sums.entry(key).or_insert((0.0, 0));
            e.0 += self.data[flat];
            e.1 += 1;
        }
        for flat in 0..self.data.len() {
            unflatten(flat, self.dim, &mut idx);
            let mut key = idx.clone();
            key.sort_unstable();
            let (s, c) = sums[&key];
            self.data[flat] = s / c as f64;
        }
    }

    /// Contracts the last index with `s` exactly `times` times, returning a
    /// tensor of order `order - times` (a scalar is returned as a 1-vector of
    /// length one wrapped by [`SymTensor::apply`] instead).
    fn contract_raw(&self, s: &[f64], times: usize) -> Vec<f64> {
        let n = self.dim;
        let mut cur = self.data.clone();
        for _ in 0..times {
            let rows = cur.len() / n;
            let mut next = vec![0.0; rows];
            for (r, out) in next.iter_mut().enumerate() {
                let row = &cur[r * n..(r + 1) * n];
                *out = row.iter().zip(s).map(|(a, b)| a * b).sum();
            }
            cur = next;
        }
        cur
    }

    /// The multilinear form applied to `(s, ..., s)`, i.e. `T[s]^i`.
    pub fn apply(&self, s: &Vector) -> Result<f64> {
        check_dim(self.dim, s.len())?;
        Ok(self.contract_raw(s.as_slice(), self.order)[0])
    }

    /// `T[s]^times` as a tensor of order `order - times` (`times < order`).
    pub fn contract(&self, s: &Vector, times: usize) -> Result<SymTensor> {
        check_dim(self.dim, s.len())?;
        if times >= self.order {
            return Err(Error::InvalidArgument(format!(
                "cannot contract an order-{} tensor {} times into a tensor",
                self.order, times
            )));
        }
        Ok(SymTensor {
            order: self.order - times,
            dim: self.dim,
            data: self.contract_raw(s.as_slice(), times),
        })
    }

    /// `T[s]^(order-1)` as a vector (the gradient of `T[s]^order / order`).
    pub fn contract_to_vector(&self, s: &Vector) -> Result<Vector> {
        check_dim(self.dim, s.len())?;
        Ok(Vector::from_vec(
            self.contract_raw(s.as_slice(), self.order - 1),
        ))
    }

    pub fn to_vector(&self) -> Option<Vector> {
        (self.order == 1).then(|| Vector::from_column_slice(&self.data))
    }

    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.order == 2).then(|| DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }

    pub fn scaled(&self, factor: f64) -> SymTensor {
        SymTensor {
            order: self.order,
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced operator norm.
    ///
    /// Exact for orders 1 and 2 (Euclidean norm, spectral radius). For order 3
    /// this is an estimate of `max_{||u||=1} |T[u]^3|` obtained by shifted
    /// symmetric power iterations from several starts, so it can only
    /// under-estimate the true value.
    pub fn operator_norm(&self) -> f64 {
        match self.order {
            1 => self.frobenius_norm(),
            2 => {
                let m = self.to_matrix().expect("order 2");
                SymmetricEigen::new(m)
                    .eigenvalues
                    .iter()
                    .fold(0.0, |acc: f64, v| acc.max(v.abs()))
            }
            _ => self.cubic_norm_estimate(),
        }
    }

    fn cubic_norm_estimate(&self) -> f64 {
        let n = self.dim;
        let fro = self.frobenius_norm();
        if fro == 0.0 {
            return 0.0;
        }
        let mut starts: Vec<Vector> = Vec::new();
        for a in 0..n {
            starts.push(Vector::from_fn(n, |k, _| if k == a { 1.0 } else { 0.0 }));
            for b in (a + 1)..n {
                for sign in [1.0, -1.0] {
                    starts.push(Vector::from_fn(n, |k, _| {
                        if k == a {
                            1.0
                        } else if k == b {
                            sign
                        } else {
                            0.0
                        }
                    }));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
        for _ in 0..16 {
            starts.push(Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)));
        }
        let shift = 2.0 * fro;
        let mut best: f64 = 0.0;
        for mut u in starts {
            let nu = u.norm();
            if nu == 0.0 {
                continue;
            }
            u /= nu;
            let mut val = self.apply(&u).expect("dim checked");
            for _ in 0..500 {
                let mut next = self.contract_to_vector(&u).expect("dim checked") + &u * shift;
                let nn = next.norm();
                if nn == 0.0 {
                    break;
                }
                next /= nn;
                let next_val = self.apply(&next).expect("dim checked");
                let moved = (&next - &u).norm();
                u = next;
                val = next_val;
                if moved < 1e-13 {
                    break;
                }
            }
            best = best.max(val.abs());
        }
        best
    }
}

fn unflatten(mut flat: usize, dim: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % dim;
        flat /= dim;
    }
}

impl Add for &SymTensor {
    type Output = SymTensor;

    fn add(self, rhs: &SymTensor) -> SymTensor {
        assert_eq!(self.order, rhs.order, "tensor order mismatch");
        assert_eq!(self.dim, rhs.dim, "tensor dimension mismatch");
        SymTensor {
            order: self.order,
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SymTensor {
    type Output = SymTensor;

    fn sub(self, rhs: &SymTensor) -> SymTensor {
        assert_eq!(self.order, rhs.order, "tensor order mismatch");
        assert_eq!(self.dim, rhs.dim, "tensor dimension mismatch");
        SymTensor {
            order: self.order,
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Derivative tensors of orders `1..=degree` at a point, each with the
/// absolute operator-norm error bound it was computed to.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    x: Vector,
    tensors: Vec<SymTensor>,
    error_bounds: Vec<f64>,
}

impl DerivativeBundle {
    pub fn new(x: Vector, tensors: Vec<SymTensor>, error_bounds: Vec<f64>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::InvalidArgument("bundle needs at least one tensor".into()));
        }
        if tensors.len() != error_bounds.len() {
            return Err(Error::InvalidArgument(
                "one error bound per tensor is required".into(),
            ));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.order() != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "tensor {} has order {}, expected {}",
                    i,
                    t.order(),
                    i + 1
                )));
            }
            check_dim(x.len(), t.dim())?;
        }
        if error_bounds.iter().any(|z| !(*z >= 0.0)) {
            return Err(Error::InvalidArgument("error bounds must be >= 0".into()));
        }
        Ok(Self {
            x,
            tensors,
            error_bounds,
        })
    }

    /// Bundle of exact tensors (all error bounds zero).
    pub fn exact(x: Vector, tensors: Vec<SymTensor>) -> Result<Self> {
        let zeros = vec![0.0; tensors.len()];
        Self::new(x, tensors, zeros)
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn degree(&self) -> usize {
        self.tensors.len()
    }

    /// Tensor of order `i` (1-based).
    pub fn tensor(&self, i: usize) -> &SymTensor {
        &self.tensors[i - 1]
    }

    pub fn tensors(&self) -> &[SymTensor] {
        &self.tensors
    }

    /// Error bound of the order-`i` tensor (1-based).
    pub fn error_bound(&self, i: usize) -> f64 {
        self.error_bounds[i - 1]
    }

    pub fn error_bounds(&self) -> &[f64] {
        &self.error_bounds
    }

    /// The bundle restricted to orders `1..=j`.
    pub fn truncated(&self, j: usize) -> Result<Self> {
        self.check_degree(j)?;
        Ok(Self {
            x: self.x.clone(),
            tensors: self.tensors[..j].to_vec(),
            error_bounds: self.error_bounds[..j].to_vec(),
        })
    }

    fn check_degree(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.degree() {
            return Err(Error::UnsupportedOrder {
                order: j,
                max: self.degree(),
            });
        }
        Ok(())
    }
}

/// `T[s]^i` for a tensor of order `i`.
pub fn tensor_apply(t: &SymTensor, s: &Vector) -> Result<f64> {
    t.apply(s)
}

/// Decrease of the degree-`j` Taylor model between `0` and `s`:
/// `-sum_{i=1}^{j} T_i[s]^i / i!`.
pub fn taylor_decrement(b: &DerivativeBundle, s: &Vector, j: usize) -> Result<f64> {
    b.check_degree(j)?;
    check_dim(b.dim(), s.len())?;
    let mut total = 0.0;
    for i in 1..=j {
        total -= b.tensor(i).apply(s)? / factorial(i);
    }
    Ok(total)
}

/// Value of the degree-`j` Taylor model with constant term `f0`.
pub fn taylor_value(b: &DerivativeBundle, f0: f64, s: &Vector, j: usize) -> Result<f64> {
    Ok(f0 - taylor_decrement(b, s, j)?)
}

/// Gradient with respect to `s` of [`taylor_decrement`]:
/// `-sum_{i=1}^{j} T_i[s]^{i-1} / (i-1)!`.
pub fn decrement_gradient(b: &DerivativeBundle, s: &Vector, j: usize) -> Result<Vector> {
    b.check_degree(j)?;
    check_dim(b.dim(), s.len())?;
    let mut grad = Vector::zeros(s.len());
    for i in 1..=j {
        grad -= b.tensor(i).contract_to_vector(s)? / factorial(i - 1);
    }
    Ok(grad)
}

/// `sum_{i=1}^{r} zeta_i * radius^i / i!`, the worst-case change of a
/// degree-`r` decrement over the ball when tensor `i` is off by `zeta_i`.
pub fn decrement_error_bound(zetas: &[f64], radius: f64) -> f64 {
    zetas
        .iter()
        .enumerate()
        .map(|(k, z)| z * radius.powi(k as i32 + 1) / factorial(k + 1))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn naive_apply(t: &SymTensor, s: &Vector) -> f64 {
        let n = t.dim();
        let mut total = 0.0;
        match t.order() {
            1 => {
                for a in 0..n {
                    total += t.get(&[a]) * s[a];
                }
            }
            2 => {
                for a in 0..n {
                    for b in 0..n {
                        total += t.get(&[a, b]) * s[a] * s[b];
                    }
                }
            }
            _ => {
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            total += t.get(&[a, b, c]) * s[a] * s[b] * s[c];
                        }
                    }
                }
            }
        }
        total
    }

    fn random_tensor(rng: &mut ChaCha8Rng, order: usize, n: usize) -> SymTensor {
        SymTensor::from_fn(order, n, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn linear_form() {
        let t = SymTensor::from_vector(&Vector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(tensor_apply(&t, &Vector::from_vec(vec![3.0, 5.0])).unwrap(), 6.0);
    }

    #[test]
    fn identity_quadratic_form() {
        let t = SymTensor::from_matrix(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(tensor_apply(&t, &Vector::from_vec(vec![3.0, 4.0])).unwrap(), 25.0);
    }

    #[test]
    fn cubic_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = random_tensor(&mut rng, 3, 2);
            let s = Vector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            assert_relative_eq!(t.apply(&s).unwrap(), naive_apply(&t, &s), epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetrize_makes_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, 3, 3);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let v = t.get(&[a, b, c]);
                    assert_relative_eq!(v, t.get(&[b, a, c]), epsilon = 1e-15);
                    assert_relative_eq!(v, t.get(&[c, b, a]), epsilon = 1e-15);
                    assert_relative_eq!(v, t.get(&[a, c, b]), epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let t = SymTensor::zeros(2, 3).unwrap();
        assert!(matches!(
            t.apply(&Vector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(SymTensor::zeros(4, 2).is_err());
    }

    #[test]
    fn one_dimensional_quadratic_decrement() {
        // f = x^2 at x = 1: g = 2, H = 2.
        let b = DerivativeBundle::exact(
            Vector::from_vec(vec![1.0]),
            vec![
                SymTensor::from_vector(&Vector::from_vec(vec![2.0])).unwrap(),
                SymTensor::from_matrix(&DMatrix::from_element(1, 1, 2.0)).unwrap(),
            ],
        )
        .unwrap();
        let s = Vector::from_vec(vec![-1.0]);
        assert_eq!(taylor_decrement(&b, &s, 2).unwrap(), 1.0);
        assert_eq!(taylor_value(&b, 1.0, &s, 2).unwrap(), 0.0);
        assert_eq!(taylor_value(&b, 5.0, &Vector::zeros(1), 2).unwrap(), 5.0);
        assert_eq!(taylor_decrement(&b, &Vector::zeros(1), 1).unwrap(), 0.0);
    }

    #[test]
    fn decrement_rejects_excess_degree() {
        let b = DerivativeBundle::exact(
            Vector::zeros(2),
            vec![SymTensor::zeros(1, 2).unwrap()],
        )
        .unwrap();
        assert!(taylor_decrement(&b, &Vector::zeros(2), 2).is_err());
    }

    #[test]
    fn decrement_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let b = DerivativeBundle::exact(
            Vector::zeros(n),
            (1..=3).map(|i| random_tensor(&mut rng, i, n)).collect(),
        )
        .unwrap();
        let s = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let g = decrement_gradient(&b, &s, 3).unwrap();
        let h = 1e-6;
        for k in 0..n {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp[k] += h;
            sm[k] -= h;
            let fd = (taylor_decrement(&b, &sp, 3).unwrap() - taylor_decrement(&b, &sm, 3).unwrap())
                / (2.0 * h);
            assert_relative_eq!(g[k], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn operator_norms() {
        let m = DMatrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(SymTensor::from_matrix(&m).unwrap().operator_norm(), 3.0);
        let u = Vector::from_vec(vec![0.6, 0.8]) * 2.0;
        let t = SymTensor::rank_one(&u, 3).unwrap();
        assert_relative_eq!(t.operator_norm(), 8.0, epsilon = 1e-10);
    }
}
