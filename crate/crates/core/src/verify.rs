//! Oracle-mode verdicts: realised error against the audited budget.
//!
//! Each check runs an estimator (or bound), audits the slack its guarantee
//! depends on, recomputes the truth from the oracle, and passes iff the
//! error is within the budget up to [`VERDICT_SLACK`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::{
    audit_cfd_at, audit_dominance, audit_iv_cfd, audit_iv_sp, audit_ml_groupwise_at,
    audit_observed_calibration, audit_rm_stability, audit_sp_at, avg_signed_difference, dr_budget,
};
use crate::bounds::{
    iv_ate_lower_bound, robins_manski_bounds, BoundReport, IvDataset, OutcomeBounds,
};
use crate::error::{Error, Result};
use crate::estimate::{
    coarsened_matching_estimate, doubly_robust_estimate, exact_matching_estimate, plugin_estimate,
    rct_estimate, EstimateReport,
};
use crate::numeric::Accumulator;
use crate::partition::CovariatePartition;
use crate::population::{FuturePopulation, ObservedDataset, TreatmentId};
use crate::predictor::{Predictor, WeightFunction};

/// Absolute slack for floating-point round-off in every comparison.
pub const VERDICT_SLACK: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<TreatmentId>,
    /// Point estimate, or the lower end of a bound.
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub truth: f64,
    /// `|estimate - truth|`, or the distance of the truth outside the bound.
    pub error: f64,
    pub eps: f64,
    pub delta: f64,
    /// Allowed error; zero for coverage checks.
    pub budget: f64,
    pub pass: bool,
    /// Whether untestable premises hold on the oracle, when checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premises_hold: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Verdict {
    fn point(
        check: &str,
        report: &EstimateReport,
        truth: f64,
        eps: f64,
        delta: f64,
        budget: f64,
    ) -> Self {
        let error = (report.estimate - truth).abs();
        Self {
            check: check.into(),
            treatment: report.treatment,
            estimate: report.estimate,
            upper: None,
            truth,
            error,
            eps,
            delta,
            budget,
            pass: error <= budget + VERDICT_SLACK,
            premises_hold: None,
            notes: Vec::new(),
        }
    }

    fn coverage(check: &str, bound: &BoundReport, truth: f64) -> Self {
        let below = bound.lower - truth;
        let above = bound.upper.map_or(f64::NEG_INFINITY, |u| truth - u);
        let error = below.max(above).max(0.0);
        Self {
            check: check.into(),
            treatment: bound.treatment,
            estimate: bound.lower,
            upper: bound.upper,
            truth,
            error,
            eps: bound.eps,
            delta: bound.delta,
            budget: 0.0,
            pass: error <= VERDICT_SLACK,
            premises_hold: None,
            notes: Vec::new(),
        }
    }
}

fn sp(
    p: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
) -> Result<f64> {
    Ok(audit_sp_at(p, data, future, &[t])?.get(t).expect("audited"))
}

/// Average outcome of `J_t`: error within eps-SP plus delta-CFD of the
/// degenerate predictor.
pub fn verify_rct(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
) -> Result<Verdict> {
    let report = rct_estimate(data, t)?;
    let p = Predictor::rct(data)?;
    let eps = sp(&p, data, future, t)?;
    let delta = audit_cfd_at(&p, future, &[t])?.get(t).expect("audited");
    Ok(Verdict::point(
        "rct_bound",
        &report,
        future.apo(t)?,
        eps,
        delta,
        eps + delta,
    ))
}

/// Exact matching: error within eps-SP plus the absolute average signed difference.
pub fn verify_exact_matching(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
) -> Result<Verdict> {
    let report = exact_matching_estimate(data, t)?;
    let p = Predictor::exact_matching(data, &[t])?;
    let eps = sp(&p, data, future, t)?;
    let delta = avg_signed_difference(data, future, t, None)?.abs();
    Ok(Verdict::point(
        "exact_matching_bound",
        &report,
        future.apo(t)?,
        eps,
        delta,
        eps + delta,
    ))
}

/// Coarsened matching: as exact matching with cells in place of values.
pub fn verify_coarsened(
    data: &ObservedDataset,
    future: &FuturePopulation,
    partition: &CovariatePartition,
    t: TreatmentId,
) -> Result<Verdict> {
    let report = coarsened_matching_estimate(data, partition, t)?;
    let p = Predictor::coarsened_matching(data, partition, &[t])?;
    let eps = sp(&p, data, future, t)?;
    let delta = avg_signed_difference(data, future, t, Some(partition))?.abs();
    Ok(Verdict::point(
        "coarsened_matching_bound",
        &report,
        future.apo(t)?,
        eps,
        delta,
        eps + delta,
    ))
}

/// Plug-in predictor.
///
/// The error splits into the eps-SP term and the future calibration
/// `sum_U (|I^U|/|I|) mean_{I^U}(p - y)`. Each cell's future residual is the
/// audited area-wise discrepancy plus the observed treated residual, so the
/// budget is `eps + max_U |area-wise| + max_U |observed residual|`. `delta`
/// reports the area-wise term alone; the observed term vanishes for
/// predictors calibrated cell by cell on `J_t`.
pub fn verify_plugin(
    p: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
    partition: &CovariatePartition,
    t: TreatmentId,
) -> Result<Verdict> {
    let report = plugin_estimate(p, data, t)?;
    let eps = sp(p, data, future, t)?;
    let delta = audit_ml_groupwise_at(p, data, future, partition, &[t])?
        .get(t)
        .expect("audited");
    let calibration = audit_observed_calibration(p, data, partition, t)?;
    let mut v = Verdict::point(
        "plugin_bound",
        &report,
        future.apo(t)?,
        eps,
        delta,
        eps + delta + calibration,
    );
    v.notes
        .push(format!("observed calibration term: {calibration}"));
    Ok(v)
}

/// Which nuisance the doubly robust check assumes is right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrArm {
    /// `p` equals the future cell means; `w` arbitrary. Budget: eps-SP of
    /// `p` plus the realised weighted residual remainder.
    Means,
    /// `w` equals the composition weights; `p` arbitrary. Budget: eps-SP of
    /// `p` plus the absolute average signed difference.
    Weights,
}

pub fn verify_doubly_robust(
    p: &Predictor,
    w: &WeightFunction,
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
    arm: DrArm,
) -> Result<Verdict> {
    let report = doubly_robust_estimate(p, w, data, t)?;
    let eps = sp(p, data, future, t)?;
    let (check, delta) = match arm {
        DrArm::Means => ("dr_means_bound", dr_budget(data, future, t, w)?),
        DrArm::Weights => (
            "dr_weights_bound",
            avg_signed_difference(data, future, t, None)?.abs(),
        ),
    };
    let mut v = Verdict::point(check, &report, future.apo(t)?, eps, delta, eps + delta);
    if arm == DrArm::Weights {
        // Informational only; undefined when some observed x is absent from I.
        if let Ok(f1) = crate::audit::audit_dr_condition(data, future, t, &WeightFunction::one()) {
            v.notes.push(format!(
                "observed-composition signed difference (f = 1): {f1}"
            ));
        }
    }
    Ok(v)
}

/// Lower bound on the ATE from a z-wise predictor, with eps and delta the
/// largest audited z-wise SP and CFD discrepancies. Dominance is checked on
/// the oracle and reported in `premises_hold`; the bound is only promised
/// when it holds.
pub fn verify_iv_lower_bound(
    py: &Predictor,
    data: &IvDataset,
    future: &FuturePopulation,
) -> Result<Verdict> {
    let eps = audit_iv_sp(py, data.data(), future)?.headline();
    let delta = audit_iv_cfd(py, future)?.headline();
    let bound = iv_ate_lower_bound(py, data, eps, delta)?;
    let truth = future.ate(TreatmentId(1), TreatmentId(0))?;
    let mut v = Verdict::coverage("iv_lower_bound_coverage", &bound, truth);
    let dominance = audit_dominance(future)?;
    v.premises_hold = dominance.holds;
    for c in &dominance.cells {
        v.notes.push(format!("dominance {}: {}", c.group, c.value));
    }
    Ok(v)
}

/// The instrument-arm mean predictor `py(x, z) = mean_{J_z} y`.
pub fn arm_mean_predictor(data: &IvDataset) -> Result<Predictor> {
    let mut means = BTreeMap::new();
    for z in [0u32, 1] {
        let m = data
            .arm(z)
            .rows()
            .iter()
            .map(|r| r.y)
            .collect::<Accumulator>()
            .mean()
            .ok_or_else(|| Error::EmptyGroup(format!("instrument arm J_{z}")))?;
        means.insert(TreatmentId(z), m);
    }
    Ok(Predictor::RctConstant { means })
}

/// Randomized-instrument lower bound: the arm-mean predictor in
/// [`verify_iv_lower_bound`].
pub fn verify_iv_randomized(data: &IvDataset, future: &FuturePopulation) -> Result<Verdict> {
    let mut v = verify_iv_lower_bound(&arm_mean_predictor(data)?, data, future)?;
    v.check = "iv_randomized_coverage".into();
    Ok(v)
}

/// Bounded-outcome interval for `APO_t` with `delta` the audited stability
/// discrepancy of the observed compliant group.
pub fn verify_robins_manski(
    data: &IvDataset,
    future: &FuturePopulation,
    t: TreatmentId,
    bounds: OutcomeBounds,
) -> Result<Verdict> {
    let delta = audit_rm_stability(data.data(), future, t)?;
    let bound = robins_manski_bounds(data, t, bounds, delta)?;
    Ok(Verdict::coverage(
        "robins_manski_coverage",
        &bound,
        future.apo(t)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::p8;

    const T0: TreatmentId = TreatmentId(0);
    const T1: TreatmentId = TreatmentId(1);

    #[test]
    fn p8_verdicts_are_exact() {
        let (data, future) = p8();
        for t in [T0, T1] {
            for v in [
                verify_rct(&data, &future, t).unwrap(),
                verify_exact_matching(&data, &future, t).unwrap(),
            ] {
                assert!(v.pass, "{v:?}");
                assert_eq!(v.error, 0.0);
                assert_eq!(v.budget, 0.0);
            }
        }
    }

    #[test]
    fn plugin_offset_needs_calibration_term() {
        // p = truth + 1 everywhere: eps and the area-wise term are 0, yet the
        // error is 1, all of it observed residual.
        let (data, future) = p8();
        let p = Predictor::from_fn("offset", |x, t| {
            let a = x.get("x").and_then(|l| l.as_cat()) == Some("a");
            Some(
                1.0 + match (a, t.0) {
                    (true, 1) => 10.0,
                    (true, _) => 6.0,
                    (false, 1) => 4.0,
                    _ => 2.0,
                },
            )
        });
        let partition = CovariatePartition::singletons(data.distinct_covariates().iter()).unwrap();
        let v = verify_plugin(&p, &data, &future, &partition, T1).unwrap();
        assert_eq!((v.eps, v.delta, v.error), (0.0, 0.0, 1.0));
        assert_eq!(v.budget, 1.0);
        assert!(v.pass);
    }
}
