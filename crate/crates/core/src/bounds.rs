//! Partial identification with a binary instrument: a lower bound on the ATE
//! under group-level dominance, and bounded-outcome APO intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Accumulator;
use crate::population::{ObservedDataset, TreatmentId};
use crate::predictor::Predictor;

/// Premises a bound relies on but that observed data cannot confirm.
pub const ASSUMED_EXCLUSION: &str = "exclusion restriction (untestable)";
pub const ASSUMED_DOMINANCE: &str = "dominance (untestable)";
pub const ASSUMED_RANDOMIZATION: &str = "randomized instrument (untestable)";
pub const ASSUMED_COMPLIANCE: &str = "stable compliance ratios (untestable)";
pub const ASSUMED_OUTCOME_RANGE: &str = "outcomes within [k0, k1] for every unit and treatment";

/// Hard range `[k0, k1]` on every potential outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBounds {
    pub k0: f64,
    pub k1: f64,
}

impl OutcomeBounds {
    pub fn new(k0: f64, k1: f64) -> Result<Self> {
        if !(k0.is_finite() && k1.is_finite() && k0 <= k1) {
            return Err(Error::Invalid(format!(
                "outcome bounds [{k0}, {k1}] are not a finite interval"
            )));
        }
        Ok(Self { k0, k1 })
    }

    /// Every observed outcome must lie in `[k0, k1]`.
    pub fn check(&self, data: &ObservedDataset) -> Result<()> {
        match data.rows().iter().find(|r| r.y < self.k0 || r.y > self.k1) {
            Some(r) => Err(Error::Invalid(format!(
                "unit {} has outcome {} outside [{}, {}]",
                r.id, r.y, self.k0, self.k1
            ))),
            None => Ok(()),
        }
    }
}

/// Observed data where every row carries an instrument value in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct IvDataset(ObservedDataset);

impl IvDataset {
    pub fn new(data: ObservedDataset) -> Result<Self> {
        for r in data.rows() {
            match r.z {
                Some(0 | 1) => {}
                Some(z) => {
                    return Err(Error::Invalid(format!(
                        "unit {} has instrument value {z}, expected 0 or 1",
                        r.id
                    )))
                }
                None => {
                    return Err(Error::Invalid(format!(
                        "unit {} has no instrument value",
                        r.id
                    )))
                }
            }
        }
        if data.is_empty() {
            return Err(Error::EmptyGroup("observed dataset J".into()));
        }
        Ok(Self(data))
    }

    pub fn data(&self) -> &ObservedDataset {
        &self.0
    }

    /// `J_z`.
    pub fn arm(&self, z: u32) -> ObservedDataset {
        self.0.filtered(|r| r.z == Some(z))
    }

    /// `J_tz = {i : t_i = t, z_i = z}`.
    pub fn cell(&self, t: TreatmentId, z: u32) -> ObservedDataset {
        self.0.filtered(|r| r.t == t && r.z == Some(z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub method: String,
    pub treatment: Option<TreatmentId>,
    pub lower: f64,
    pub upper: Option<f64>,
    pub eps: f64,
    pub delta: f64,
    pub assumed: Vec<String>,
}

fn check_slack(eps: f64, delta: f64) -> Result<()> {
    if !(eps >= 0.0 && delta >= 0.0) {
        return Err(Error::Invalid(format!(
            "eps and delta must be nonnegative, got {eps} and {delta}"
        )));
    }
    Ok(())
}

/// `mean_J py(x, 1) - mean_J py(x, 0) - 2 (eps + delta)`.
///
/// `py` is a z-wise predictor: it is evaluated with `TreatmentId(z)` in the
/// treatment slot.
pub fn iv_ate_lower_bound(
    py: &Predictor,
    data: &IvDataset,
    eps: f64,
    delta: f64,
) -> Result<BoundReport> {
    check_slack(eps, delta)?;
    let mut arm = [Accumulator::new(), Accumulator::new()];
    for r in data.data().rows() {
        for (z, acc) in arm.iter_mut().enumerate() {
            acc.add(py.evaluate(&r.x, TreatmentId(z as u32))?);
        }
    }
    let contrast = arm[1].mean().expect("nonempty") - arm[0].mean().expect("nonempty");
    Ok(BoundReport {
        method: "iv_lower_bound".into(),
        treatment: None,
        lower: contrast - 2.0 * (eps + delta),
        upper: None,
        eps,
        delta,
        assumed: vec![ASSUMED_EXCLUSION.into(), ASSUMED_DOMINANCE.into()],
    })
}

/// `mean_{J_1} y - mean_{J_0} y - 2 (eps + delta)` for a randomized instrument.
pub fn iv_ate_lower_bound_randomized(
    data: &IvDataset,
    eps: f64,
    delta: f64,
) -> Result<BoundReport> {
    check_slack(eps, delta)?;
    let arm_mean = |z: u32| {
        data.arm(z)
            .rows()
            .iter()
            .map(|r| r.y)
            .collect::<Accumulator>()
            .mean()
            .ok_or_else(|| Error::EmptyGroup(format!("instrument arm J_{z}")))
    };
    let contrast = arm_mean(1)? - arm_mean(0)?;
    Ok(BoundReport {
        method: "iv_lower_bound_randomized".into(),
        treatment: None,
        lower: contrast - 2.0 * (eps + delta),
        upper: None,
        eps,
        delta,
        assumed: vec![
            ASSUMED_EXCLUSION.into(),
            ASSUMED_DOMINANCE.into(),
            ASSUMED_RANDOMIZATION.into(),
        ],
    })
}

/// Bounded-outcome interval for the APO of `t`.
///
/// For `t = 1`, with `J_tz = {t_i = t, z_i = z}`:
/// `(|J_01|/|J|) K + (|J_11|/|J|) mean_{J_11} y`, with `K = K1` and `+delta`
/// for the upper end, `K = K0` and `-delta` for the lower end.
/// For `t = 0` the groups are `J_10` and `J_00`.
pub fn robins_manski_bounds(
    data: &IvDataset,
    t: TreatmentId,
    bounds: OutcomeBounds,
    delta: f64,
) -> Result<BoundReport> {
    check_slack(0.0, delta)?;
    bounds.check(data.data())?;
    let (other, same, z) = match t.0 {
        1 => (TreatmentId(0), TreatmentId(1), 1),
        0 => (TreatmentId(1), TreatmentId(0), 0),
        _ => return Err(Error::UnknownTreatment(t)),
    };
    let n = data.data().len() as f64;
    let unobserved = data.cell(other, z).len() as f64 / n;
    let observed = data.cell(same, z);
    let observed_mean = observed
        .rows()
        .iter()
        .map(|r| r.y)
        .collect::<Accumulator>()
        .mean()
        .ok_or_else(|| Error::EmptyGroup(format!("J_{same}{z}")))?;
    let known = observed.len() as f64 / n * observed_mean;
    Ok(BoundReport {
        method: "robins_manski".into(),
        treatment: Some(t),
        lower: unobserved * bounds.k0 - delta + known,
        upper: Some(unobserved * bounds.k1 + delta + known),
        eps: 0.0,
        delta,
        assumed: vec![
            ASSUMED_RANDOMIZATION.into(),
            ASSUMED_COMPLIANCE.into(),
            ASSUMED_OUTCOME_RANGE.into(),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{CovariateValue, Observation, TreatmentSet};

    fn iv(rows: &[(u32, u32, f64)]) -> IvDataset {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, z, y))| Observation {
                id: i as u64,
                x: CovariateValue::cat("x", "a"),
                t: TreatmentId(t),
                y,
                z: Some(z),
            })
            .collect();
        IvDataset::new(ObservedDataset::new(TreatmentSet::binary(), rows).unwrap()).unwrap()
    }

    #[test]
    fn lower_bound_with_constant_predictor() {
        let data = iv(&[(1, 1, 0.0), (0, 0, 0.0)]);
        let py = Predictor::from_fn("arms", |_, z| Some(if z.0 == 1 { 8.0 } else { 3.0 }));
        assert_eq!(iv_ate_lower_bound(&py, &data, 0.0, 0.0).unwrap().lower, 5.0);
        assert_eq!(
            iv_ate_lower_bound(&py, &data, 0.25, 0.25).unwrap().lower,
            4.0
        );
        let flat = Predictor::constant(2.0);
        assert_eq!(
            iv_ate_lower_bound(&flat, &data, 0.1, 0.2).unwrap().lower,
            -2.0 * (0.1 + 0.2)
        );
    }

    #[test]
    fn randomized_lower_bound() {
        let data = iv(&[(1, 1, 10.0), (1, 1, 6.0), (0, 0, 4.0), (0, 0, 2.0)]);
        let r = iv_ate_lower_bound_randomized(&data, 0.0, 0.0).unwrap();
        assert_eq!(r.lower, 5.0);
        assert!(r.assumed.iter().any(|a| a.contains("dominance")));
        assert_eq!(
            iv_ate_lower_bound_randomized(&data, 0.1, 0.4)
                .unwrap()
                .lower,
            4.0
        );
        let same = iv(&[(1, 1, 3.0), (0, 0, 3.0)]);
        assert_eq!(
            iv_ate_lower_bound_randomized(&same, 0.5, 0.5)
                .unwrap()
                .lower,
            -2.0
        );
        assert!(iv_ate_lower_bound_randomized(&iv(&[(1, 1, 3.0)]), 0.0, 0.0).is_err());
    }

    #[test]
    fn rows_without_instrument_are_rejected() {
        let rows = vec![Observation {
            id: 1,
            x: CovariateValue::new(),
            t: TreatmentId(1),
            y: 1.0,
            z: None,
        }];
        let data = ObservedDataset::new(TreatmentSet::binary(), rows).unwrap();
        assert!(IvDataset::new(data).is_err());
    }

    #[test]
    fn robins_manski_fixture() {
        let data = iv(&[(0, 1, 6.0), (1, 1, 10.0), (1, 0, 3.0), (0, 0, 1.0)]);
        let k = OutcomeBounds::new(0.0, 10.0).unwrap();
        let r = robins_manski_bounds(&data, TreatmentId(1), k, 0.0).unwrap();
        assert_eq!((r.lower, r.upper), (2.5, Some(5.0)));
        let r = robins_manski_bounds(&data, TreatmentId(1), k, 0.5).unwrap();
        assert_eq!((r.lower, r.upper), (2.0, Some(5.5)));
        // t = 0 uses J_10 = {3} and J_00 = {1}.
        let r = robins_manski_bounds(&data, TreatmentId(0), k, 0.0).unwrap();
        assert_eq!((r.lower, r.upper), (0.25, Some(2.75)));
    }

    #[test]
    fn robins_manski_degenerate_and_errors() {
        let data = iv(&[(0, 1, 4.0), (1, 1, 4.0)]);
        let k = OutcomeBounds::new(4.0, 4.0).unwrap();
        let r = robins_manski_bounds(&data, TreatmentId(1), k, 0.0).unwrap();
        assert_eq!((r.lower, r.upper), (4.0, Some(4.0)));
        assert!(robins_manski_bounds(
            &data,
            TreatmentId(1),
            OutcomeBounds::new(0.0, 3.0).unwrap(),
            0.0
        )
        .is_err());
        assert!(OutcomeBounds::new(1.0, 0.0).is_err());
        let no_j11 = iv(&[(0, 1, 4.0), (1, 0, 4.0)]);
        assert!(matches!(
            robins_manski_bounds(&no_j11, TreatmentId(1), k, 0.0),
            Err(Error::EmptyGroup(_))
        ));
    }
}
