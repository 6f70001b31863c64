//! Trust-region optimization with dynamic accuracy.
//!
//! Function values and derivative tensors are requested from an [`Oracle`]
//! at absolute accuracies chosen by the algorithm itself: loose far from a
//! solution, tighter only when the model decrease has to be certified. The
//! method finds approximate minimizers of order `q <= 3`.
//!
//! ```
//! use std::sync::Arc;
//! use trqda_core::{run, InexactOracle, Policy, TrConfig, Vector};
//! use trqda_core::problems::Rosenbrock;
//!
//! let mut oracle = InexactOracle::new(Arc::new(Rosenbrock::default()), Policy::Adversarial, 0);
//! let cfg = TrConfig::new(2, vec![1e-3, 1e-3]);
//! let result = run(&mut oracle, &Vector::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
//! assert!(result.terminated);
//! ```

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod audit;
pub mod bounds;
pub mod driver;
pub mod error;
pub mod model;
pub mod optimality;
pub mod oracle;
pub mod problems;
pub mod reference;
pub mod step;
pub mod subproblem;
pub mod verify;

pub use audit::{check_history, AuditOptions, AuditReport};
pub use bounds::{compute_bounds, BoundConstants};
pub use driver::{run, run_with_sink, IterationRecord, RunResult, TrConfig};
pub use error::{Error, Result};
pub use model::{taylor_decrement, DerivativeBundle, SymTensor, Vector};
pub use optimality::{certified_decrement, max_decrement, termination_test, AccuracyLedger, CertifiedDecrement, Step1Outcome};
pub use oracle::{CostModel, EvalLedger, InexactOracle, Oracle, Policy, Problem};
pub use step::{compute_step, StepResult};
pub use verify::{verify, VerifyOutcome};
