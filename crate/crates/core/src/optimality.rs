//! The inexact optimality measure: accuracy bookkeeping, maximization of the
//! inexact Taylor decrement over a ball, the certified-decrement loop and the
//! termination test that opens every iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{factorial, taylor_decrement, DerivativeBundle, SymTensor, Vector, MAX_ORDER};
use crate::oracle::Oracle;
use crate::subproblem::{ball_quadratic, multistart_ascent, steepest_step};
use crate::verify::{verify, VerifyOutcome};

/// ς reported by the order-2 solver, which absorbs its secular tolerance.
pub const ORDER2_VARSIGMA: f64 = 1.0 - 1e-8;

/// Tightenings allowed inside one accuracy loop before giving up.
pub const MAX_TIGHTENINGS: usize = 1000;

/// Where a tightening was triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Step1,
    Step2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TighteningEvent {
    pub j: usize,
    pub phase: Phase,
    /// `zetas[i-1]` after the tightening, orders `1..=q`.
    pub zetas_after: Vec<f64>,
    pub i_zeta: usize,
}

/// Current absolute derivative accuracies `ζ_i` and the tightening counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyLedger {
    zetas: Vec<f64>,
    i_zeta: usize,
    gamma_zeta: f64,
    kappa_zeta: f64,
    exact: Vec<bool>,
    initial: Vec<f64>,
    events: Vec<TighteningEvent>,
}

impl AccuracyLedger {
    /// `exact[i-1]` marks orders whose derivatives are exact; their accuracy
    /// is pinned at zero.
    pub fn new(zeta0: &[f64], gamma_zeta: f64, kappa_zeta: f64, exact: &[bool]) -> Result<Self> {
        if zeta0.is_empty() || zeta0.len() > MAX_ORDER {
            return Err(Error::Config(format!("need 1..={MAX_ORDER} initial accuracies, got {}", zeta0.len())));
        }
        if !(gamma_zeta > 0.0 && gamma_zeta < 1.0) {
            return Err(Error::Config(format!("gamma_zeta must lie in (0, 1), got {gamma_zeta}")));
        }
        let mut zetas = Vec::with_capacity(zeta0.len());
        let mut flags = Vec::with_capacity(zeta0.len());
        for (k, &z) in zeta0.iter().enumerate() {
            let is_exact = exact.get(k).copied().unwrap_or(false);
            if !is_exact && !(z > 0.0 && z <= kappa_zeta) {
                return Err(Error::Config(format!(
                    "zeta_0 for order {} must lie in (0, kappa_zeta = {kappa_zeta}], got {z}",
                    k + 1
                )));
            }
            zetas.push(if is_exact { 0.0 } else { z });
            flags.push(is_exact);
        }
        Ok(Self {
            initial: zetas.clone(),
            zetas,
            i_zeta: 0,
            gamma_zeta,
            kappa_zeta,
            exact: flags,
            events: Vec::new(),
        })
    }

    pub fn q(&self) -> usize {
        self.zetas.len()
    }

    pub fn zetas(&self) -> &[f64] {
        &self.zetas
    }

    /// Accuracy for order `i` (1-based).
    pub fn zeta(&self, i: usize) -> f64 {
        self.zetas[i - 1]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn i_zeta(&self) -> usize {
        self.i_zeta
    }

    pub fn gamma_zeta(&self) -> f64 {
        self.gamma_zeta
    }

    pub fn kappa_zeta(&self) -> f64 {
        self.kappa_zeta
    }

    pub fn is_exact(&self, i: usize) -> bool {
        self.exact[i - 1]
    }

    pub fn events(&self) -> &[TighteningEvent] {
        &self.events
    }

    /// `max_{i<=j} ζ_i`.
    pub fn max_zeta(&self, j: usize) -> f64 {
        self.zetas[..j].iter().cloned().fold(0.0, f64::max)
    }

    /// Multiplies `ζ_1..ζ_j` by `γ_ζ` and increments `i_ζ`.
    pub fn tighten(&mut self, j: usize, phase: Phase) {
        for z in &mut self.zetas[..j] {
            *z *= self.gamma_zeta;
        }
        self.i_zeta += 1;
        self.events.push(TighteningEvent {
            j,
            phase,
            zetas_after: self.zetas.clone(),
            i_zeta: self.i_zeta,
        });
    }
}

/// Derivative tensors at the current iterate together with the accuracy each
/// was obtained at. A tensor is recomputed only when the requested accuracy
/// has dropped below the one it was computed to.
#[derive(Debug, Clone, Default)]
pub struct DerivativeCache {
    x: Option<Vector>,
    slots: Vec<Option<(SymTensor, f64)>>,
    generation: u64,
    last_round: Option<(u64, usize)>,
    rounds: usize,
}

impl DerivativeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Distinct `(x, i_ζ)` pairs at which at least one derivative was
    /// evaluated.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Bundle of orders `1..=j` at `x`, honouring the ledger's accuracies.
    pub fn bundle(&mut self, oracle: &mut dyn Oracle, x: &Vector, j: usize, ledger: &AccuracyLedger) -> Result<DerivativeBundle> {
        if self.x.as_ref() != Some(x) {
            self.x = Some(x.clone());
            self.slots.clear();
            self.generation += 1;
        }
        if self.slots.len() < j {
            self.slots.resize(j, None);
        }
        let mut tensors = Vec::with_capacity(j);
        let mut bounds = Vec::with_capacity(j);
        for i in 1..=j {
            let want = ledger.zeta(i);
            let stale = match &self.slots[i - 1] {
                Some((_, have)) => *have > want,
                None => true,
            };
            if stale {
                let key = (self.generation, ledger.i_zeta());
                if self.last_round != Some(key) {
                    self.last_round = Some(key);
                    self.rounds += 1;
                }
                let t = oracle.eval_deriv(x, i, want)?;
                self.slots[i - 1] = Some((t, want));
            }
            let (t, z) = self.slots[i - 1].as_ref().expect("slot filled above");
            tensors.push(t.clone());
            bounds.push(*z);
        }
        DerivativeBundle::new(x.clone(), tensors, bounds)
    }
}

/// A maximizer of the inexact decrement over a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Decrement {
    pub d: Vector,
    pub dt: f64,
    /// Guaranteed fraction of the maximal decrement.
    pub varsigma: f64,
}

/// Maximizes the degree-`j` decrement of `b` over `||d|| <= delta`.
///
/// Orders 1 and 2 are solved globally; order 3 uses a multi-start heuristic
/// and reports `declared_varsigma` without a certificate.
pub fn max_decrement(b: &DerivativeBundle, j: usize, delta: f64, declared_varsigma: f64) -> Result<Decrement> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {delta}")));
    }
    if j == 0 || j > MAX_ORDER.min(b.degree()) {
        return Err(Error::UnsupportedOrder {
            order: j,
            max: MAX_ORDER.min(b.degree()),
        });
    }
    let (d, varsigma) = match j {
        1 => {
            let g = b.tensor(1).to_vector().expect("order-1 tensor");
            (steepest_step(&g, delta), 1.0)
        }
        2 => {
            let g = b.tensor(1).to_vector().expect("order-1 tensor");
            let h = b.tensor(2).to_matrix().expect("order-2 tensor");
            (ball_quadratic(&g, &h, delta).0, ORDER2_VARSIGMA)
        }
        _ => (multistart_ascent(b, j, delta)?.0, declared_varsigma),
    };
    let dt = taylor_decrement(b, &d, j)?;
    if dt > 0.0 {
        Ok(Decrement { d, dt, varsigma })
    } else {
        // Flat model, or a rounding-level negative value.
        Ok(Decrement {
            d: Vector::zeros(b.dim()),
            dt: 0.0,
            varsigma,
        })
    }
}

/// Result of the certified-decrement loop for one order.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedDecrement {
    pub j: usize,
    pub d: Vector,
    pub dt: f64,
    pub outcome: VerifyOutcome,
    pub varsigma_used: f64,
    pub xi: f64,
    pub delta: f64,
    pub tightenings: usize,
    pub bundle: DerivativeBundle,
}

/// Inputs shared by all orders of one termination test.
#[derive(Debug, Clone, Copy)]
pub struct CertifyParams {
    pub varsigma: f64,
    pub omega: f64,
}

/// Maximizes the inexact order-`j` decrement at `x` over a ball of radius
/// `delta`, tightening derivative accuracies until its accuracy is certified
/// as relative or absolute. Never evaluates `f`.
pub fn certified_decrement(
    x: &Vector,
    j: usize,
    delta: f64,
    eps_j: f64,
    params: CertifyParams,
    oracle: &mut dyn Oracle,
    ledger: &mut AccuracyLedger,
    cache: &mut DerivativeCache,
) -> Result<CertifiedDecrement> {
    let mut tightenings = 0;
    loop {
        let bundle = cache.bundle(oracle, x, j, ledger)?;
        let dec = max_decrement(&bundle, j, delta, params.varsigma)?;
        let varsigma_used = params.varsigma.min(dec.varsigma);
        let xi = 0.5 * varsigma_used * eps_j;
        let outcome = verify(delta, dec.dt, bundle.error_bounds(), xi, params.omega)?;
        if outcome.is_sufficient() {
            return Ok(CertifiedDecrement {
                j,
                d: dec.d,
                dt: dec.dt,
                outcome,
                varsigma_used,
                xi,
                delta,
                tightenings,
                bundle,
            });
        }
        if tightenings >= MAX_TIGHTENINGS || ledger.max_zeta(j) < 1e-300 {
            return Err(Error::AccuracyExhausted { order: j, tightenings });
        }
        ledger.tighten(j, Phase::Step1);
        tightenings += 1;
    }
}

/// Smallest `t >= 0` with `γ^t · start <= target`.
pub fn tightenings_needed(start: f64, target: f64, gamma: f64) -> usize {
    if start <= target {
        return 0;
    }
    let t = ((target / start).ln() / gamma.ln()).ceil();
    let mut t = t.max(0.0) as usize;
    // Guard the ceiling against rounding in the logarithms.
    while t > 0 && gamma.powi(t as i32 - 1) * start <= target {
        t -= 1;
    }
    while gamma.powi(t as i32) * start > target {
        t += 1;
    }
    t
}

/// Upper bound on the tightenings one certified-decrement call can need when
/// it starts from accuracies `zetas` (orders `1..=j`).
pub fn step1_tightening_cap(zetas: &[f64], j: usize, delta: f64, eps_j: f64, varsigma: f64, omega: f64, gamma: f64) -> usize {
    let start = zetas[..j].iter().cloned().fold(0.0, f64::max);
    let target = 0.25 * omega * varsigma * eps_j * delta.powi(j as i32 - 1) / factorial(j);
    tightenings_needed(start, target, gamma)
}

/// Outcome of the termination test.
#[derive(Debug, Clone, PartialEq)]
pub enum Step1Outcome {
    /// Every order passed; the certificates are in order `1..=q`.
    Terminated { delta: f64, certificates: Vec<CertifiedDecrement> },
    /// Order `cert.j` still allows a large decrease.
    Continue { cert: CertifiedDecrement },
}

/// `(ε_j/(1+ω)) δ^j/j!`, the decrement above which the run continues.
pub fn continue_threshold(eps_j: f64, omega: f64, delta: f64, j: usize) -> f64 {
    eps_j / (1.0 + omega) * delta.powi(j as i32) / factorial(j)
}

/// Tests orders `1..=q` in turn at radius `delta_k`.
pub fn termination_test(
    x: &Vector,
    delta_k: f64,
    eps: &[f64],
    params: CertifyParams,
    oracle: &mut dyn Oracle,
    ledger: &mut AccuracyLedger,
    cache: &mut DerivativeCache,
) -> Result<Step1Outcome> {
    let mut certificates = Vec::with_capacity(eps.len());
    for (k, &eps_j) in eps.iter().enumerate() {
        let j = k + 1;
        let cert = certified_decrement(x, j, delta_k, eps_j, params, oracle, ledger, cache)?;
        if cert.dt > continue_threshold(eps_j, params.omega, delta_k, j) {
            return Ok(Step1Outcome::Continue { cert });
        }
        certificates.push(cert);
    }
    Ok(Step1Outcome::Terminated {
        delta: delta_k,
        certificates,
    })
}
