//! The canonical 8-unit desk example.
//!
//! `J = {(a,1,10), (a,0,6), (b,1,4), (b,0,2)}` with ids 1..=4 and `I` = two
//! units at `a` with `(y1, y0) = (10, 6)` and two at `b` with `(4, 2)`, ids
//! 5..=8. True APOs are 7 and 4, so the ATE is 3.

use crate::population::{
    CovariateValue, FuturePopulation, FutureUnit, Observation, ObservedDataset, OutcomeOracle,
    TreatmentId, TreatmentSet,
};

pub fn p8() -> (ObservedDataset, FuturePopulation) {
    let x = |l: &str| CovariateValue::cat("x", l);
    let rows = [
        (1, "a", 1, 10.0),
        (2, "a", 0, 6.0),
        (3, "b", 1, 4.0),
        (4, "b", 0, 2.0),
    ]
    .into_iter()
    .map(|(id, level, t, y)| Observation {
        id,
        x: x(level),
        t: TreatmentId(t),
        y,
        z: None,
    })
    .collect();
    let data = ObservedDataset::new(TreatmentSet::binary(), rows).expect("valid fixture");

    let future_spec = [
        (5, "a", 10.0, 6.0),
        (6, "a", 10.0, 6.0),
        (7, "b", 4.0, 2.0),
        (8, "b", 4.0, 2.0),
    ];
    let units = future_spec
        .iter()
        .map(|&(id, level, _, _)| FutureUnit { id, x: x(level) })
        .collect();
    let oracle = OutcomeOracle::from_entries(
        future_spec
            .iter()
            .flat_map(|&(id, _, y1, y0)| [(id, TreatmentId(1), y1), (id, TreatmentId(0), y0)]),
    );
    let future = FuturePopulation::new(TreatmentSet::binary(), units, Some(oracle), None)
        .expect("valid fixture");
    (data, future)
}
