use proptest::prelude::*;
use trqda_core::{IterationRecord, VerifyOutcome};
use trqda_harness::config::RunSpec;
use trqda_harness::io::{read_history, write_history};
use trqda_harness::study::execute;

fn round_trip(h: &[IterationRecord]) -> Vec<IterationRecord> {
    let mut buf = Vec::new();
    write_history(&mut buf, h).unwrap();
    read_history(buf.as_slice()).unwrap()
}

#[test]
fn real_runs_round_trip() {
    for (problem, q, policy) in [("rosenbrock", 2, "adversarial"), ("saddle", 2, "gaussian_clipped"), ("quartic", 3, "truncate")] {
        let mut spec = RunSpec::new(problem, q, 1e-3);
        spec.policy = policy.parse().unwrap();
        spec.audit = false;
        let h = execute(&spec).unwrap().result.history;
        assert!(!h.is_empty(), "{problem}");
        assert_eq!(round_trip(&h), h, "{problem}");
    }
}

fn float() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(f64::INFINITY),
        Just(f64::NEG_INFINITY),
        Just(0.0),
        Just(-0.0),
    ]
}

fn outcome() -> impl Strategy<Value = VerifyOutcome> {
    prop_oneof![Just(VerifyOutcome::Relative), Just(VerifyOutcome::Absolute), Just(VerifyOutcome::Insufficient)]
}

prop_compose! {
    fn record()(
        k in any::<usize>(),
        f in prop::collection::vec(float(), 12),
        flags in prop::array::uniform3(any::<bool>()),
        counts in prop::collection::vec(0usize..1_000_000, 8),
        cap in prop::option::of(0usize..100),
        out in outcome(),
        zetas in prop::collection::vec(float(), 0..4),
        x in prop::collection::vec(float(), 0..5),
        step in prop::collection::vec(float(), 0..5),
    ) -> IterationRecord {
        IterationRecord {
            k, big_delta: f[0], delta: f[1], j: counts[0] % 4, rho: f[2], successful: flags[0],
            dt_s: f[3], dt_d: f[4], f_old: f[5], f_new: f[6], f_acc: f[7], f_old_acc: f[8],
            f_old_recomputed: flags[1], step1_skipped: flags[2],
            step1_tightenings: counts[1], step2_tightenings: counts[2], step2_cap: cap,
            step2_outcome: out, step2_absolute: counts[3], i_zeta: counts[4], zetas,
            f_evals: counts[5], deriv_evals: counts[6], deriv_rounds: counts[7],
            x, step, step_norm: f[9], big_delta_next: f[10],
        }
    }
}

proptest! {
    #[test]
    fn arbitrary_histories_round_trip(h in prop::collection::vec(record(), 0..6)) {
        prop_assert_eq!(round_trip(&h), h);
    }
}
