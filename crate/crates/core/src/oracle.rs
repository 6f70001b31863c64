//! Dynamic-accuracy evaluation: objective values and derivative tensors that
//! can be requested to any absolute accuracy, plus an evaluation ledger.
//!
//! A [`Problem`] knows its exact function and derivatives. An
//! [`InexactOracle`] wraps a problem and corrupts every answer according to a
//! [`Policy`], never by more than the accuracy the caller asked for. Every
//! call is appended to the oracle's [`EvalLedger`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SymTensor, Vector, MAX_ORDER};

/// A smooth objective with exact derivatives, used as ground truth.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn value(&self, x: &Vector) -> f64;

    /// Exact derivative tensor of the given order (1-based).
    fn derivative(&self, x: &Vector, order: usize) -> Result<SymTensor>;

    fn max_order(&self) -> usize {
        MAX_ORDER
    }

    /// A lower bound on the objective; `-inf` when unbounded.
    fn f_low(&self) -> f64;

    /// Global Lipschitz constants of the derivatives of orders `1..=max_order`
    /// when they are known in closed form.
    fn lipschitz(&self) -> Option<Vec<f64>> {
        None
    }

    /// Value computed from a subset of the problem's data with a certified
    /// absolute error at most `accuracy`. Only finite-sum problems implement it.
    fn sampled_value(&self, _x: &Vector, _accuracy: f64) -> Option<f64> {
        None
    }

    /// Derivative computed from a subset of the data, operator-norm error at
    /// most `zeta`.
    fn sampled_derivative(&self, _x: &Vector, _order: usize, _zeta: f64) -> Option<Result<SymTensor>> {
        None
    }
}

/// How an [`InexactOracle`] corrupts exact values within the requested bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Exact values.
    None,
    /// Error of magnitude `0.99 x bound` in a seeded random direction.
    Adversarial,
    /// Deterministic rounding to a decimal grid finer than the bound.
    Truncate,
    /// Seeded Gaussian noise clipped to `0.99 x bound`.
    GaussianClipped,
    /// Subsampling of a finite sum with deterministic range bounds.
    Subsample,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::None,
        Policy::Adversarial,
        Policy::Truncate,
        Policy::GaussianClipped,
        Policy::Subsample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::None => "none",
            Policy::Adversarial => "adversarial",
            Policy::Truncate => "truncate",
            Policy::GaussianClipped => "gaussian_clipped",
            Policy::Subsample => "subsample",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == norm || (norm == "exact" && *p == Policy::None))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown oracle policy '{s}'")))
    }
}

/// Cost attributed to one evaluation requested at absolute accuracy `a`.
/// Used for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "param")]
pub enum CostModel {
    /// Every call costs 1.
    Unit,
    /// `a^(-p)`.
    Power(f64),
    /// `ln(1 + 1/a)`.
    Log,
}

impl CostModel {
    /// Exact evaluations are charged as if requested at machine precision.
    pub fn cost(&self, accuracy: f64) -> f64 {
        let a = if accuracy > 0.0 { accuracy } else { f64::EPSILON };
        match *self {
            CostModel::Unit => 1.0,
            CostModel::Power(p) => a.powf(-p),
            CostModel::Log => (1.0 + 1.0 / a).ln(),
        }
    }
}

impl FromStr for CostModel {
    type Err = Error;

    /// Accepts `unit`, `log` or `power:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "unit" => Ok(CostModel::Unit),
            "log" => Ok(CostModel::Log),
            _ => s
                .strip_prefix("power:")
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|p| p.is_finite() && *p > 0.0)
                .map(CostModel::Power)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown cost model '{s}'"))),
        }
    }
}

impl fmt::Display for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostModel::Unit => f.write_str("unit"),
            CostModel::Log => f.write_str("log"),
            CostModel::Power(p) => write!(f, "power:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalKind {
    Value,
    Derivative(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub kind: EvalKind,
    pub x: Vec<f64>,
    /// Requested absolute accuracy; zero for orders declared exact.
    pub accuracy: f64,
    pub cost: f64,
}

/// Append-only record of every oracle call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalLedger {
    entries: Vec<EvalEntry>,
    f_evals: usize,
    deriv_evals: [usize; MAX_ORDER],
    total_cost: f64,
}

impl EvalLedger {
    fn push(&mut self, entry: EvalEntry) {
        match entry.kind {
            EvalKind::Value => self.f_evals += 1,
            EvalKind::Derivative(i) => self.deriv_evals[i - 1] += 1,
        }
        self.total_cost += entry.cost;
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[EvalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn f_evals(&self) -> usize {
        self.f_evals
    }

    /// Number of calls for the derivative of the given order.
    pub fn deriv_evals(&self, order: usize) -> usize {
        self.deriv_evals[order - 1]
    }

    pub fn total_deriv_evals(&self) -> usize {
        self.deriv_evals.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    /// Smallest accuracy ever requested for the given kind, if any.
    pub fn min_accuracy(&self, kind: EvalKind) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.accuracy)
            .reduce(f64::min)
    }
}

/// The dynamic-accuracy contract the algorithm talks to.
pub trait Oracle {
    fn dim(&self) -> usize;

    fn max_order(&self) -> usize;

    /// Orders whose derivatives are returned exactly (error bound zero).
    fn is_exact_order(&self, order: usize) -> bool;

    /// `f(x)` to within `abs_acc`.
    fn eval_f(&mut self, x: &Vector, abs_acc: f64) -> Result<f64>;

    /// `∇^order f(x)` to within `zeta` in operator norm. `zeta` may be zero
    /// only for exact orders.
    fn eval_deriv(&mut self, x: &Vector, order: usize, zeta: f64) -> Result<SymTensor>;

    fn ledger(&self) -> &EvalLedger;
}

/// An oracle built from an exact [`Problem`] and a corruption [`Policy`].
pub struct InexactOracle {
    problem: Arc<dyn Problem>,
    policy: Policy,
    rng: ChaCha8Rng,
    exact_orders: [bool; MAX_ORDER],
    cost_model: CostModel,
    ledger: EvalLedger,
}

impl InexactOracle {
    pub fn new(problem: Arc<dyn Problem>, policy: Policy, seed: u64) -> Self {
        Self {
            problem,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            exact_orders: [false; MAX_ORDER],
            cost_model: CostModel::Unit,
            ledger: EvalLedger::default(),
        }
    }

    /// Declares derivative orders that are always returned exactly.
    pub fn with_exact_orders(mut self, orders: &[usize]) -> Result<Self> {
        for &o in orders {
            if o == 0 || o > MAX_ORDER {
                return Err(Error::UnsupportedOrder {
                    order: o,
                    max: MAX_ORDER,
                });
            }
            self.exact_orders[o - 1] = true;
        }
        Ok(self)
    }

    pub fn with_cost_model(mut self, cost_model: CostModel) -> Self {
        self.cost_model = cost_model;
        self
    }

    pub fn problem(&self) -> &Arc<dyn Problem> {
        &self.problem
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost_model
    }

    pub fn into_ledger(self) -> EvalLedger {
        self.ledger
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn record(&mut self, kind: EvalKind, x: &Vector, accuracy: f64) {
        let cost = self.cost_model.cost(accuracy);
        self.ledger.push(EvalEntry {
            kind,
            x: x.as_slice().to_vec(),
            accuracy,
            cost,
        });
    }

    /// Symmetric perturbation direction of unit operator norm.
    fn unit_direction(&mut self, order: usize, n: usize) -> SymTensor {
        let u = random_unit(&mut self.rng, n);
        match order {
            1 => SymTensor::from_vector(&u).expect("valid order"),
            2 => {
                let m = DMatrix::from_fn(n, n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
                let t = SymTensor::from_matrix(&m).expect("square");
                let norm = t.operator_norm();
                if norm > 0.0 {
                    t.scaled(1.0 / norm)
                } else {
                    SymTensor::rank_one(&u, 2).expect("valid order")
                }
            }
            _ => {
                // Rank-one keeps the operator norm exactly known.
                let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
                SymTensor::rank_one(&u, order).expect("valid order").scaled(sign)
            }
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Largest power of ten not exceeding `a`.
fn decimal_grid(a: f64) -> f64 {
    10f64.powf(a.log10().floor())
}

fn truncate_to(v: f64, bound: f64) -> f64 {
    let h = decimal_grid(bound);
    let r = (v / h).round() * h;
    if (r - v).abs() <= bound && r.is_finite() {
        r
    } else {
        v
    }
}

impl Oracle for InexactOracle {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn max_order(&self) -> usize {
        self.problem.max_order()
    }

    fn is_exact_order(&self, order: usize) -> bool {
        (1..=MAX_ORDER).contains(&order) && self.exact_orders[order - 1]
    }

    fn eval_f(&mut self, x: &Vector, abs_acc: f64) -> Result<f64> {
        if !(abs_acc > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "function accuracy must be positive, got {abs_acc}"
            )));
        }
        self.check_point(x)?;
        let exact = self.problem.value(x);
        let value = match self.policy {
            Policy::None => exact,
            Policy::Adversarial => {
                let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
                exact + 0.99 * abs_acc * sign
            }
            Policy::Truncate => truncate_to(exact, abs_acc),
            Policy::GaussianClipped => {
                let noise: f64 = Normal::new(0.0, 0.5 * abs_acc)
                    .expect("positive std")
                    .sample(&mut self.rng);
                exact + noise.clamp(-0.99 * abs_acc, 0.99 * abs_acc)
            }
            Policy::Subsample => self.problem.sampled_value(x, abs_acc).ok_or_else(|| {
                Error::Oracle(format!(
                    "problem '{}' does not support subsampling",
                    self.problem.name()
                ))
            })?,
        };
        self.record(EvalKind::Value, x, abs_acc);
        Ok(value)
    }

    fn eval_deriv(&mut self, x: &Vector, order: usize, zeta: f64) -> Result<SymTensor> {
        if order == 0 || order > self.problem.max_order() {
            return Err(Error::UnsupportedOrder {
                order,
                max: self.problem.max_order(),
            });
        }
        self.check_point(x)?;
        if self.is_exact_order(order) {
            let t = self.problem.derivative(x, order)?;
            self.record(EvalKind::Derivative(order), x, 0.0);
            return Ok(t);
        }
        if !(zeta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "derivative accuracy must be positive for inexact order {order}, got {zeta}"
            )));
        }
        let n = self.problem.dim();
        let t = match self.policy {
            Policy::None => self.problem.derivative(x, order)?,
            Policy::Adversarial => {
                let exact = self.problem.derivative(x, order)?;
                let e = self.unit_direction(order, n);
                &exact + &e.scaled(0.99 * zeta)
            }
            Policy::Truncate => {
                let exact = self.problem.derivative(x, order)?;
                // Entry errors <= h/2 give a Frobenius (hence operator) error <= zeta/2.
                let h = decimal_grid(zeta / (n.pow(order as u32) as f64).sqrt());
                let mut t = exact.clone();
                for v in t.data_mut() {
                    *v = (*v / h).round() * h;
                }
                if (&t - &exact).frobenius_norm() <= zeta && t.data().iter().all(|v| v.is_finite()) {
                    t
                } else {
                    exact
                }
            }
            Policy::GaussianClipped => {
                let exact = self.problem.derivative(x, order)?;
                let e = self.unit_direction(order, n);
                let mag: f64 = Normal::new(0.0, 0.5 * zeta)
                    .expect("positive std")
                    .sample(&mut self.rng);
                &exact + &e.scaled(mag.clamp(-0.99 * zeta, 0.99 * zeta))
            }
            Policy::Subsample => self
                .problem
                .sampled_derivative(x, order, zeta)
                .ok_or_else(|| {
                    Error::Oracle(format!(
                        "problem '{}' does not support subsampling",
                        self.problem.name()
                    ))
                })??,
        };
        self.record(EvalKind::Derivative(order), x, zeta);
        Ok(t)
    }

    fn ledger(&self) -> &EvalLedger {
        &self.ledger
    }
}

/// Maximum deviations between exact derivatives and central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDiffReport {
    /// Gradient vs central differences of the value.
    pub gradient: f64,
    /// Hessian vs central differences of the exact gradient.
    pub hessian: Option<f64>,
    /// Third derivative vs central differences of the exact Hessian.
    pub third: Option<f64>,
}

impl FiniteDiffReport {
    pub fn max_deviation(&self) -> f64 {
        self.gradient
            .max(self.hessian.unwrap_or(0.0))
            .max(self.third.unwrap_or(0.0))
    }
}

/// Checks a problem's exact derivatives against central differences.
pub fn finite_diff_check(p: &dyn Problem, x: &Vector, h: f64) -> Result<FiniteDiffReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        });
    }
    let n = p.dim();
    let shifted = |k: usize, sign: f64| {
        let mut y = x.clone();
        y[k] += sign * h;
        y
    };

    let g = p.derivative(x, 1)?;
    let mut gradient: f64 = 0.0;
    for k in 0..n {
        let fd = (p.value(&shifted(k, 1.0)) - p.value(&shifted(k, -1.0))) / (2.0 * h);
        gradient = gradient.max((fd - g.get(&[k])).abs());
    }

    let lower_order_fd = |order: usize| -> Result<Option<f64>> {
        if p.max_order() < order {
            return Ok(None);
        }
        let t = p.derivative(x, order)?;
        let mut dev: f64 = 0.0;
        for k in 0..n {
            let plus = p.derivative(&shifted(k, 1.0), order - 1)?;
            let minus = p.derivative(&shifted(k, -1.0), order - 1)?;
            let diff = (&plus - &minus).scaled(1.0 / (2.0 * h));
            // Entry (a.., k) of T equals the k-th partial of entry (a..) of the lower tensor.
            let stride = n;
            for (flat, v) in diff.data().iter().enumerate() {
                let exact = t.data()[flat * stride + k];
                dev = dev.max((v - exact).abs());
            }
        }
        Ok(Some(dev))
    };

    Ok(FiniteDiffReport {
        gradient,
        hessian: lower_order_fd(2)?,
        third: lower_order_fd(3)?,
    })
}
