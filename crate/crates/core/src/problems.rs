//! Test problems with exact derivatives up to order three, and a registry to
//! build them by name.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{factorial, SymTensor, Vector, MAX_ORDER};
use crate::oracle::Problem;

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        Err(Error::UnsupportedOrder {
            order,
            max: MAX_ORDER,
        })
    } else {
        Ok(())
    }
}

/// `f(x) = ½ (x - c)ᵀ A (x - c)`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: DMatrix<f64>,
    center: Vector,
    norm: f64,
    convex: bool,
}

impl Quadratic {
    /// Diagonal quadratic whose eigenvalues are log-spaced in `[1, cond]`.
    pub fn new(dim: usize, cond: f64) -> Result<Self> {
        if dim == 0 || !(cond >= 1.0) {
            return Err(Error::InvalidArgument(
                "quadratic needs dim >= 1 and condition number >= 1".into(),
            ));
        }
        let diag = Vector::from_fn(dim, |i, _| {
            if dim == 1 {
                1.0
            } else {
                cond.powf(i as f64 / (dim - 1) as f64)
            }
        });
        Self::from_matrix(DMatrix::from_diagonal(&diag), Vector::zeros(dim))
    }

    pub fn from_matrix(a: DMatrix<f64>, center: Vector) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: center.len(),
            });
        }
        let a = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        let norm = eig.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let convex = eig.iter().all(|v| *v >= 0.0);
        Ok(Self {
            a,
            center,
            norm,
            convex,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }
}

impl Problem for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        let r = x - &self.center;
        0.5 * r.dot(&(&self.a * &r))
    }

    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor> {
        check_order(order)?;
        match order {
            1 => SymTensor::from_vector(&(&self.a * (x - &self.center))),
            2 => SymTensor::from_matrix(&self.a),
            _ => SymTensor::zeros(3, self.dim()),
        }
    }

    fn f_low(&self) -> f64 {
        if self.convex {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn lipschitz(&self) -> Option<Vec<f64>> {
        Some(vec![self.norm, 0.0, 0.0])
    }
}

/// `f(x, y) = (a - x)² + b (y - x²)²`.
#[derive(Debug, Clone, Copy)]
pub struct Rosenbrock {
    pub a: f64,
    pub b: f64,
}

impl Default for Rosenbrock {
    fn default() -> Self {
        Self { a: 1.0, b: 100.0 }
    }
}

impl Problem for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &Vector) -> f64 {
        (self.a - x[0]).powi(2) + self.b * (x[1] - x[0] * x[0]).powi(2)
    }

    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor> {
        check_order(order)?;
        let (u, v) = (x[0], x[1]);
        let b = self.b;
        match order {
            1 => SymTensor::from_vector(&Vector::from_vec(vec![
                -2.0 * (self.a - u) - 4.0 * b * u * (v - u * u),
                2.0 * b * (v - u * u),
            ])),
            2 => SymTensor::from_matrix(&DMatrix::from_row_slice(
                2,
                2,
                &[
                    2.0 - 4.0 * b * v + 12.0 * b * u * u,
                    -4.0 * b * u,
                    -4.0 * b * u,
                    2.0 * b,
                ],
            )),
            _ => SymTensor::from_fn(3, 2, |idx| match idx.iter().filter(|&&k| k == 0).count() {
                3 => 24.0 * b * u,
                2 => -4.0 * b,
                _ => 0.0,
            }),
        }
    }

    fn f_low(&self) -> f64 {
        0.0
    }
}

/// `f(x, y) = x² - y² + quartic · y⁴`, a strict saddle at the origin.
///
/// With `quartic = 0` this is the unbounded quadratic saddle; any positive
/// value makes it bounded below with minimizers at `y = ±1/sqrt(2 quartic)`.
#[derive(Debug, Clone, Copy)]
pub struct Saddle {
    pub quartic: f64,
}

impl Default for Saddle {
    fn default() -> Self {
        Self { quartic: 0.5 }
    }
}

impl Problem for Saddle {
    fn name(&self) -> &str {
        "saddle"
    }

    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &Vector) -> f64 {
        x[0] * x[0] - x[1] * x[1] + self.quartic * x[1].powi(4)
    }

    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor> {
        check_order(order)?;
        let (u, v, c) = (x[0], x[1], self.quartic);
        match order {
            1 => SymTensor::from_vector(&Vector::from_vec(vec![
                2.0 * u,
                -2.0 * v + 4.0 * c * v.powi(3),
            ])),
            2 => SymTensor::from_matrix(&DMatrix::from_row_slice(
                2,
                2,
                &[2.0, 0.0, 0.0, -2.0 + 12.0 * c * v * v],
            )),
            _ => SymTensor::from_fn(3, 2, |idx| {
                if idx.iter().all(|&k| k == 1) {
                    24.0 * c * v
                } else {
                    0.0
                }
            }),
        }
    }

    fn f_low(&self) -> f64 {
        if self.quartic > 0.0 {
            -1.0 / (4.0 * self.quartic)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn lipschitz(&self) -> Option<Vec<f64>> {
        (self.quartic == 0.0).then(|| vec![2.0, 0.0, 0.0])
    }
}

/// `f(x) = Σ ¼(x_i² - 1)² + ½ coupling Σ (x_i - x_{i+1})²`.
///
/// Nonconvex with a saddle or maximum at the origin and minimizers near
/// `x_i = ±1`; `f_low = 0`.
#[derive(Debug, Clone, Copy)]
pub struct QuarticSum {
    pub dim: usize,
    pub coupling: f64,
}

impl Problem for QuarticSum {
    fn name(&self) -> &str {
        "quartic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &Vector) -> f64 {
        let sep: f64 = x.iter().map(|v| 0.25 * (v * v - 1.0).powi(2)).sum();
        let coup: f64 = (0..self.dim.saturating_sub(1))
            .map(|i| (x[i] - x[i + 1]).powi(2))
            .sum();
        sep + 0.5 * self.coupling * coup
    }

    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor> {
        check_order(order)?;
        let n = self.dim;
        let c = self.coupling;
        match order {
            1 => {
                let mut g = Vector::from_fn(n, |i, _| x[i] * (x[i] * x[i] - 1.0));
                for i in 0..n.saturating_sub(1) {
                    let d = c * (x[i] - x[i + 1]);
                    g[i] += d;
                    g[i + 1] -= d;
                }
                SymTensor::from_vector(&g)
            }
            2 => {
                let mut h = DMatrix::from_diagonal(&Vector::from_fn(n, |i, _| 3.0 * x[i] * x[i] - 1.0));
                for i in 0..n.saturating_sub(1) {
                    h[(i, i)] += c;
                    h[(i + 1, i + 1)] += c;
                    h[(i, i + 1)] -= c;
                    h[(i + 1, i)] -= c;
                }
                SymTensor::from_matrix(&h)
            }
            _ => SymTensor::from_fn(3, n, |idx| {
                if idx[0] == idx[1] && idx[1] == idx[2] {
                    6.0 * x[idx[0]]
                } else {
                    0.0
                }
            }),
        }
    }

    fn f_low(&self) -> f64 {
        0.0
    }
}

/// Regularized logistic loss over a seeded synthetic data set,
/// `f(x) = (1/N) Σ log(1 + exp(-y_i a_iᵀx)) + ½ λ ||x||²`.
///
/// Supports subsampled evaluation: terms are visited in a fixed seeded order
/// and the omitted ones are bounded through per-term ranges, so the error
/// bound is deterministic.
#[derive(Debug, Clone)]
pub struct FiniteSumLogistic {
    features: Vec<Vector>,
    labels: Vec<f64>,
    lambda: f64,
    visit: Vec<usize>,
    feature_norms: Vec<f64>,
    /// Suffix sums over the visit order of per-term derivative bounds.
    tail_bounds: [Vec<f64>; MAX_ORDER],
}

/// Suprema of |ℓ'|, |ℓ''|, |ℓ'''| and |ℓ''''| for ℓ(t) = log(1 + e^{-t}).
const LOGISTIC_DERIV_SUP: [f64; 4] = [1.0, 0.25, 0.096_225_044_864_937_63, 0.125];

fn logistic_loss(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl FiniteSumLogistic {
    pub fn new(dim: usize, terms: usize, lambda: f64, seed: u64) -> Result<Self> {
        if dim == 0 || terms == 0 || !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(
                "logistic problem needs dim, terms >= 1 and lambda >= 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut features = Vec::with_capacity(terms);
        let mut labels = Vec::with_capacity(terms);
        for _ in 0..terms {
            let a = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise: f64 = rng.sample(StandardNormal);
            labels.push(if a.dot(&planted) + 0.5 * noise >= 0.0 { 1.0 } else { -1.0 });
            features.push(a);
        }
        let mut visit: Vec<usize> = (0..terms).collect();
        for i in (1..terms).rev() {
            let k = rng.random_range(0..=i);
            visit.swap(i, k);
        }
        let feature_norms: Vec<f64> = features.iter().map(|a| a.norm()).collect();
        let tail = |order: usize| {
            let mut suffix = vec![0.0; terms + 1];
            for pos in (0..terms).rev() {
                let r = feature_norms[visit[pos]];
                suffix[pos] = suffix[pos + 1] + LOGISTIC_DERIV_SUP[order - 1] * r.powi(order as i32);
            }
            suffix
        };
        let tail_bounds = [tail(1), tail(2), tail(3)];
        Ok(Self {
            features,
            labels,
            lambda,
            visit,
            feature_norms,
            tail_bounds,
        })
    }

    pub fn terms(&self) -> usize {
        self.features.len()
    }

    fn term_derivative(&self, i: usize, x: &Vector, order: usize) -> SymTensor {
        let a = &self.features[i];
        let y = self.labels[i];
        let p = sigmoid(y * a.dot(x));
        match order {
            1 => SymTensor::from_vector(&(a * ((p - 1.0) * y))).expect("valid"),
            2 => SymTensor::rank_one(a, 2).expect("valid").scaled(p * (1.0 - p)),
            _ => SymTensor::rank_one(a, 3)
                .expect("valid")
                .scaled(p * (1.0 - p) * (1.0 - 2.0 * p) * y),
        }
    }

    fn regularizer_derivative(&self, x: &Vector, order: usize) -> SymTensor {
        let n = x.len();
        match order {
            1 => SymTensor::from_vector(&(x * self.lambda)).expect("valid"),
            2 => SymTensor::from_matrix(&(DMatrix::identity(n, n) * self.lambda)).expect("valid"),
            _ => SymTensor::zeros(3, n).expect("valid"),
        }
    }

    fn derivative_over(&self, x: &Vector, order: usize, count: usize) -> SymTensor {
        let n = x.len();
        let inv = 1.0 / self.terms() as f64;
        let mut acc = SymTensor::zeros(order, n).expect("valid");
        for &i in &self.visit[..count] {
            acc = &acc + &self.term_derivative(i, x, order);
        }
        &acc.scaled(inv) + &self.regularizer_derivative(x, order)
    }
}

impl Problem for FiniteSumLogistic {
    fn name(&self) -> &str {
        "finite_sum_logistic"
    }

    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn value(&self, x: &Vector) -> f64 {
        let n = self.terms() as f64;
        let loss: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(a, y)| logistic_loss(y * a.dot(x)))
            .sum();
        loss / n + 0.5 * self.lambda * x.norm_squared()
    }

    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor> {
        check_order(order)?;
        Ok(self.derivative_over(x, order, self.terms()))
    }

    fn f_low(&self) -> f64 {
        0.0
    }

    fn lipschitz(&self) -> Option<Vec<f64>> {
        let n = self.terms() as f64;
        let moment = |k: i32| self.feature_norms.iter().map(|r| r.powi(k)).sum::<f64>() / n;
        Some(vec![
            LOGISTIC_DERIV_SUP[1] * moment(2) + self.lambda,
            LOGISTIC_DERIV_SUP[2] * moment(3),
            LOGISTIC_DERIV_SUP[3] * moment(4),
        ])
    }

    fn sampled_value(&self, x: &Vector, accuracy: f64) -> Option<f64> {
        let n = self.terms() as f64;
        let xn = x.norm();
        // Each term lies in [0, log(1 + exp(||a|| ||x||))]; omitted terms are
        // replaced by the midpoint of that range.
        let ranges: Vec<f64> = self
            .visit
            .iter()
            .map(|&i| logistic_loss(-self.feature_norms[i] * xn))
            .collect();
        let mut tail: f64 = ranges.iter().sum::<f64>() * 0.5;
        let mut count = 0;
        while count < ranges.len() && tail / n > accuracy {
            tail -= 0.5 * ranges[count];
            count += 1;
        }
        let sampled: f64 = self.visit[..count]
            .iter()
            .map(|&i| logistic_loss(self.labels[i] * self.features[i].dot(x)))
            .sum();
        let filler: f64 = ranges[count..].iter().map(|r| 0.5 * r).sum();
        Some((sampled + filler) / n + 0.5 * self.lambda * x.norm_squared())
    }

    fn sampled_derivative(&self, x: &Vector, order: usize, zeta: f64) -> Option<Result<SymTensor>> {
        if let Err(e) = check_order(order) {
            return Some(Err(e));
        }
        let n = self.terms() as f64;
        let tails = &self.tail_bounds[order - 1];
        let count = (0..=self.terms())
            .find(|&m| tails[m] / n <= zeta)
            .unwrap_or(self.terms());
        Some(Ok(self.derivative_over(x, order, count)))
    }
}

/// `f(x) = f0 + Σ_{i=1}^{deg} T_i[x - c]^i / i!`, the polynomial whose Taylor
/// expansion at `c` is a given set of tensors.
#[derive(Debug, Clone)]
pub struct TaylorPolynomial {
    center: Vector,
    f0: f64,
    tensors: Vec<SymTensor>,
}

impl TaylorPolynomial {
    pub fn new(center: Vector, f0: f64, tensors: Vec<SymTensor>) -> Result<Self> {
        if tensors.is_empty() || tensors.len() > MAX_ORDER {
            return Err(Error::InvalidArgument("polynomial degree must be 1..=3".into()));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.order() != i + 1 || t.dim() != center.len() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {i} has order {} and dim {}",
                    t.order(),
                    t.dim()
                )));
            }
        }
        Ok(Self {
            center,
            f0,
            tensors,
        })
    }

    pub fn degree(&self) -> usize {
        self.tensors.len()
    }
}

impl Problem for TaylorPolynomial {
    fn name(&self) -> &str {
        "polynomial"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        let r = x - &self.center;
        self.f0
            + self
                .tensors
                .iter()
                .enumerate()
                .map(|(k, t)| t.apply(&r).expect("dim checked") / factorial(k + 1))
                .sum::<f64>()
    }

    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor> {
        check_order(order)?;
        let r = x - &self.center;
        let mut acc = SymTensor::zeros(order, self.dim())?;
        for i in order..=self.degree() {
            let t = &self.tensors[i - 1];
            let term = if i == order {
                t.clone()
            } else {
                t.contract(&r, i - order)?.scaled(1.0 / factorial(i - order))
            };
            acc = &acc + &term;
        }
        Ok(acc)
    }

    fn f_low(&self) -> f64 {
        f64::NEG_INFINITY
    }

    fn lipschitz(&self) -> Option<Vec<f64>> {
        match self.degree() {
            1 => Some(vec![0.0, 0.0, 0.0]),
            2 => Some(vec![self.tensors[1].operator_norm(), 0.0, 0.0]),
            _ => None,
        }
    }
}

/// Parameters accepted by [`build_problem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub dim: Option<usize>,
    /// Condition number of the quadratic.
    pub cond: f64,
    /// Quartic coefficient of the saddle.
    pub quartic: f64,
    /// Coupling of the quartic sum.
    pub coupling: f64,
    /// Number of terms of the finite sum.
    pub terms: usize,
    /// Ridge weight of the finite sum.
    pub lambda: f64,
    /// Data seed of the finite sum.
    pub data_seed: u64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            dim: None,
            cond: 10.0,
            quartic: 0.5,
            coupling: 0.1,
            terms: 200,
            lambda: 1e-2,
            data_seed: 7,
        }
    }
}

/// Names understood by [`build_problem`].
pub const PROBLEM_NAMES: [&str; 5] = ["quadratic", "rosenbrock", "saddle", "quartic", "finite_sum_logistic"];

/// Builds a registered problem by name.
pub fn build_problem(name: &str, params: &ProblemParams) -> Result<Arc<dyn Problem>> {
    let fixed_dim = |want: usize| -> Result<()> {
        match params.dim {
            Some(d) if d != want => Err(Error::InvalidArgument(format!(
                "problem '{name}' is {want}-dimensional, got dim = {d}"
            ))),
            _ => Ok(()),
        }
    };
    Ok(match name {
        "quadratic" => Arc::new(Quadratic::new(params.dim.unwrap_or(2), params.cond)?),
        "rosenbrock" => {
            fixed_dim(2)?;
            Arc::new(Rosenbrock::default())
        }
        "saddle" => {
            fixed_dim(2)?;
            if !(params.quartic >= 0.0) {
                return Err(Error::InvalidArgument("saddle quartic must be >= 0".into()));
            }
            Arc::new(Saddle {
                quartic: params.quartic,
            })
        }
        "quartic" => Arc::new(QuarticSum {
            dim: params.dim.unwrap_or(3),
            coupling: params.coupling,
        }),
        "finite_sum_logistic" => Arc::new(FiniteSumLogistic::new(
            params.dim.unwrap_or(3),
            params.terms,
            params.lambda,
            params.data_seed,
        )?),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown problem '{other}' (known: {})",
                PROBLEM_NAMES.join(", ")
            )))
        }
    })
}

/// Conventional starting point for a registered problem.
pub fn default_start(name: &str, dim: usize) -> Vector {
    match name {
        "rosenbrock" => Vector::from_vec(vec![-1.2, 1.0]),
        // On the stable manifold of the saddle: gradient steps alone converge
        // to the origin, escaping needs second-order information.
        "saddle" => Vector::from_vec(vec![0.5, 0.0]),
        "quartic" => Vector::from_fn(dim, |i, _| 0.05 * (i as f64 + 1.0)),
        "finite_sum_logistic" => Vector::zeros(dim),
        _ => Vector::from_element(dim, 1.0),
    }
}
