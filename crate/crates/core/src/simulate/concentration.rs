use rand::seq::SliceRandom;

use super::stream;
use crate::error::{Error, Result};
use crate::population::{FuturePopulation, TreatmentId};

const STREAM_SPLITS: u64 = 9;

/// Fraction of `trials` uniform random half-splits of `I` whose two halves'
/// mean `y(., t)` differ by at least `eps`. Halves have sizes `floor(n/2)` and
/// `ceil(n/2)`.
pub fn random_partition_concentration(
    pop: &FuturePopulation,
    t: TreatmentId,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    pop.treatments().check(t)?;
    let oracle = pop.require_oracle("concentration check needs the outcome oracle")?;
    if pop.len() < 2 {
        return Err(Error::Invalid(
            "concentration check needs at least two units".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::Invalid("trials must be positive".into()));
    }
    let mut values: Vec<f64> = pop
        .units()
        .iter()
        .map(|u| oracle.outcome(u.id, t).expect("total oracle"))
        .collect();
    let half = values.len() / 2;
    let mut rng = stream(seed, STREAM_SPLITS);
    let mut hits = 0usize;
    for _ in 0..trials {
        values.shuffle(&mut rng);
        let (a, b) = values.split_at(half);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        if (mean(a) - mean(b)).abs() >= eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{CovariateValue, FutureUnit, OutcomeOracle, TreatmentSet};

    fn population(ys: &[f64]) -> FuturePopulation {
        let units = (0..ys.len() as u64)
            .map(|id| FutureUnit {
                id,
                x: CovariateValue::new(),
            })
            .collect();
        let entries = ys
            .iter()
            .enumerate()
            .flat_map(|(i, &y)| [(i as u64, TreatmentId(0), y), (i as u64, TreatmentId(1), y)]);
        FuturePopulation::new(
            TreatmentSet::binary(),
            units,
            Some(OutcomeOracle::from_entries(entries)),
            None,
        )
        .unwrap()
    }

    #[test]
    fn constant_outcomes_never_split() {
        let pop = population(&[3.0; 9]);
        assert_eq!(
            random_partition_concentration(&pop, TreatmentId(1), 1e-9, 200, 1).unwrap(),
            0.0
        );
    }

    #[test]
    fn four_unit_population() {
        let pop = population(&[0.0, 0.0, 10.0, 10.0]);
        assert_eq!(
            random_partition_concentration(&pop, TreatmentId(1), 10.1, 500, 3).unwrap(),
            0.0
        );
        let f = random_partition_concentration(&pop, TreatmentId(1), 5.0, 10_000, 3).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 0.05, "{f}");
        assert_eq!(
            f,
            random_partition_concentration(&pop, TreatmentId(1), 5.0, 10_000, 3).unwrap()
        );
    }

    #[test]
    fn needs_two_units() {
        assert!(
            random_partition_concentration(&population(&[1.0]), TreatmentId(0), 1.0, 10, 0)
                .is_err()
        );
    }
}
