use proptest::prelude::*;

use finitepop::audit::{audit_cfd, audit_sp, avg_signed_difference};
use finitepop::estimate::{exact_matching_estimate, rct_estimate};
use finitepop::simulate::{
    generate, Assignment, CovariateScheme, OutcomeScheme, Scenario, ScenarioSpec, Violations,
};
use finitepop::{Predictor, TreatmentId};

const TS: [TreatmentId; 2] = [TreatmentId(0), TreatmentId(1)];

fn spec(seed: u64, observed: usize, future: usize, shift: f64, weights: Vec<f64>) -> ScenarioSpec {
    let levels: Vec<String> = (0..weights.len()).map(|i| format!("l{i}")).collect();
    ScenarioSpec {
        observed_size: observed,
        future_size: future,
        seed,
        population_seed: None,
        covariates: CovariateScheme {
            field: "x".into(),
            observed_weights: None,
            future_weights: Some(weights.clone()),
            levels: levels.clone(),
            balanced: false,
        },
        outcome: OutcomeScheme {
            base: weights
                .iter()
                .enumerate()
                .map(|(i, w)| [i as f64, 5.0 * w])
                .collect(),
            noise: 1.0,
            k0: -10.0,
            k1: 20.0,
        },
        assignment: Assignment::Rct { p_treat: 0.5 },
        instrument: None,
        violations: Violations {
            outcome_shift: shift,
            shift_levels: levels,
            ..Default::default()
        },
    }
}

/// Scenarios where every observed cell has both treatments and `I` uses only
/// observed covariate values.
fn supported() -> impl Strategy<Value = Scenario> {
    (
        any::<u64>(),
        10usize..80,
        10usize..80,
        -3.0..3.0f64,
        prop::collection::vec(0.1..1.0f64, 1..4),
    )
        .prop_map(|(seed, j, i, shift, w)| generate(&spec(seed, j, i, shift, w)).unwrap())
        .prop_filter("support", |s| {
            TS.iter()
                .all(|&t| exact_matching_estimate(&s.observed, t).is_ok())
                && s.future
                    .distinct_covariates()
                    .is_subset(&s.observed.distinct_covariates())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matching_cfd_is_the_absolute_signed_difference(s in supported()) {
        let p = Predictor::exact_matching(&s.observed, &TS).unwrap();
        let cfd = audit_cfd(&p, &s.future).unwrap();
        for t in TS {
            let asd = avg_signed_difference(&s.observed, &s.future, t, None).unwrap();
            prop_assert!((cfd.get(t).unwrap() - asd.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn signed_difference_is_bounded_by_largest_cell_gap(s in supported()) {
        let p = Predictor::exact_matching(&s.observed, &TS).unwrap();
        let oracle = s.future.oracle().unwrap();
        for t in TS {
            let asd = avg_signed_difference(&s.observed, &s.future, t, None).unwrap();
            let mut worst: f64 = 0.0;
            for x in s.future.distinct_covariates() {
                let ys: Vec<f64> = s.future.units().iter().filter(|u| u.x == x).map(|u| oracle.outcome(u.id, t).unwrap()).collect();
                let gap = ys.iter().sum::<f64>() / ys.len() as f64 - p.evaluate(&x, t).unwrap();
                worst = worst.max(gap.abs());
            }
            prop_assert!(asd.abs() <= worst + 1e-9);
        }
    }

    #[test]
    fn matching_stays_within_the_treated_outcome_range(s in supported()) {
        for t in TS {
            let ys: Vec<f64> = s.observed.rows().iter().filter(|r| r.t == t).map(|r| r.y).collect();
            let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
            let e = exact_matching_estimate(&s.observed, t).unwrap().estimate;
            prop_assert!(e >= lo - 1e-9 && e <= hi + 1e-9);
        }
    }

    #[test]
    fn rct_sp_vanishes(s in supported()) {
        let means = TS.iter().map(|&t| (t, rct_estimate(&s.observed, t).unwrap().estimate)).collect();
        let sp = audit_sp(&Predictor::RctConstant { means }, &s.observed, &s.future).unwrap();
        prop_assert!(sp.headline() < 1e-9);
    }
}
