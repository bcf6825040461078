mod common;

use common::{chi_square_critical, geometric_chi_square};
use convlab::harness::{
    cross_validate, run_to_absorption, run_trials, step, AlwaysFail, AlwaysSucceed,
    BernoulliOracle, PipelineState, StageBernoulliOracle, StageOracle, TraceRecord,
};
use convlab::rng;
use convlab::sim::CAMPAIGN_DELTAS;
use convlab::Error;
use proptest::prelude::*;

#[test]
fn bernoulli_half_mean_iterations() {
    let traces = run_trials(0.5, 10_000, 100_000, 1).unwrap();
    assert!(traces.iter().all(|t| t.converged));
    let xs: Vec<f64> = traces.iter().map(|t| t.total_iterations as f64).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = (4.0 * 0.5_f64 / 0.25 / n).sqrt();
    assert!((mean - 8.0).abs() < 3.0 * se, "{mean}");
}

#[test]
fn per_stage_attempts_are_geometric() {
    let traces = run_trials(0.4, 20_000, 100_000, 2).unwrap();
    for stage in 0..4 {
        let (stat, df) =
            geometric_chi_square(traces.iter().map(|t| t.per_stage_attempts[stage]), 0.4, 25);
        assert!(
            stat < chi_square_critical(df, 0.999),
            "stage {stage}: {stat} on {df}"
        );
    }
}

#[test]
fn campaign_runs_all_converge() {
    for (i, &d) in CAMPAIGN_DELTAS.iter().enumerate() {
        let traces = run_trials(d, 10_000, 1000, 40 + i as u64).unwrap();
        assert!(traces.iter().all(|t| t.converged), "delta={d}");
    }
}

#[test]
fn cross_validation_for_every_delta() {
    for (i, &d) in CAMPAIGN_DELTAS.iter().enumerate() {
        let cv = cross_validate(d, 10_000, 70 + i as u64).unwrap();
        assert!(cv.passes(), "{cv:?}");
    }
    assert!(cross_validate(0.5, 999, 0).is_err());
}

#[test]
fn degenerate_oracles() {
    let t = run_to_absorption(&mut AlwaysSucceed, 100, 0);
    assert_eq!(t.total_iterations, 4);
    assert_eq!(t.states, PipelineState::ALL.to_vec());
    let t = run_to_absorption(&mut AlwaysFail, 50, 0);
    assert!(!t.converged);
    assert_eq!(t.total_iterations, 50);
    assert_eq!(t.per_stage_attempts, [50, 0, 0, 0]);
    let mut r = rng::stream(0, 0);
    assert!(matches!(
        step(PipelineState::Verified, &mut AlwaysSucceed, &mut r),
        Err(Error::Terminal)
    ));
}

#[test]
fn stage_specific_oracle_means() {
    let deltas = [0.9, 0.5, 0.25, 0.8];
    let mut oracle = StageBernoulliOracle::new(deltas).unwrap();
    let mut r = rng::stream(3, 0);
    let n = 20_000;
    let mut sums = [0u64; 4];
    for _ in 0..n {
        let t = convlab::harness::run_to_absorption_with_rng(&mut oracle, 100_000, &mut r);
        for (s, a) in sums.iter_mut().zip(&t.per_stage_attempts) {
            *s += a;
        }
    }
    for (s, d) in sums.iter().zip(deltas) {
        let mean = *s as f64 / n as f64;
        let se = ((1.0 - d) / (d * d) / n as f64).sqrt();
        assert!((mean - 1.0 / d).abs() < 4.0 * se, "delta={d}: {mean}");
    }
    assert!(StageBernoulliOracle::new([0.5, 0.0, 0.5, 0.5]).is_err());
}

proptest! {
    #[test]
    fn trace_structure(delta in 0.05f64..=1.0, seed: u64) {
        let mut oracle = BernoulliOracle::new(delta).unwrap();
        let t = run_to_absorption(&mut oracle, 100_000, seed);
        prop_assert!(t.converged);
        prop_assert_eq!(t.states.len() as u64, t.total_iterations + 1);
        prop_assert_eq!(t.per_stage_attempts.iter().sum::<u64>(), t.total_iterations);
        prop_assert!(t.per_stage_attempts.iter().all(|&a| a >= 1));
        // States never move backwards and advance by at most one stage.
        for w in t.states.windows(2) {
            let (a, b) = (w[0].index(), w[1].index());
            prop_assert!(b == a || b == a + 1);
        }
        prop_assert_eq!(*t.states.last().unwrap(), PipelineState::Verified);
        prop_assert_eq!(TraceRecord::from_events(&t.to_events(0, 0)).unwrap(), t);
    }

    #[test]
    fn closure_oracles_drive_the_walk(pattern in prop::collection::vec(any::<bool>(), 1..40)) {
        let mut i = 0;
        let mut oracle = |_: PipelineState, _: &mut dyn rand::RngCore| {
            let s = pattern[i % pattern.len()];
            i += 1;
            s
        };
        let oracle: &mut dyn StageOracle = &mut oracle;
        let t = run_to_absorption(oracle, 400, 0);
        let successes = t.states.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(successes == 4, t.converged);
    }
}
