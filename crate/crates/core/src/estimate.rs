//! Point estimators of the average potential outcome (APO).
//!
//! Every estimator here is the average of some predictor over the observed
//! covariates; the matching estimators are additionally computed in their
//! Horvitz-Thompson form `(1/|J|) sum_{J_t} y_i / pi_t(x_i)` and checked
//! against the plug-in form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{observed_groups, support_for, SupportReport};
use crate::numeric::{close_relative, Accumulator};
use crate::partition::{CovariatePartition, GroupKey, Grouping};
use crate::population::{ObservedDataset, TreatmentId};
use crate::predictor::{Predictor, WeightFunction};

/// Relative tolerance for the internal HT == plug-in identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Error guarantee implied by audited (or supplied) assumption slack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    pub eps: f64,
    pub delta: f64,
    pub bound: f64,
}

impl Guarantee {
    pub fn new(eps: f64, delta: f64) -> Self {
        Self {
            eps,
            delta,
            bound: eps + delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub treatment: Option<TreatmentId>,
    pub estimate: f64,
    pub guarantee: Option<Guarantee>,
    pub support: Option<SupportReport>,
    pub population: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EstimateReport {
    fn new(method: &str, t: Option<TreatmentId>, estimate: f64, data: &ObservedDataset) -> Self {
        Self {
            method: method.into(),
            treatment: t,
            estimate,
            guarantee: None,
            support: None,
            population: data.fingerprint(),
            notes: Vec::new(),
        }
    }

    pub fn with_guarantee(mut self, eps: f64, delta: f64) -> Self {
        self.guarantee = Some(Guarantee::new(eps, delta));
        self
    }
}

fn require_treatment(data: &ObservedDataset, t: TreatmentId) -> Result<()> {
    data.treatments().check(t)?;
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    Ok(())
}

/// Mean outcome over `J_t`.
pub fn rct_estimate(data: &ObservedDataset, t: TreatmentId) -> Result<EstimateReport> {
    data.treatments().check(t)?;
    let acc: Accumulator = data
        .rows()
        .iter()
        .filter(|r| r.t == t)
        .map(|r| r.y)
        .collect();
    let estimate = acc
        .mean()
        .ok_or_else(|| Error::EmptyGroup(format!("J_{t} (no units with treatment {t})")))?;
    Ok(EstimateReport::new("rct", Some(t), estimate, data))
}

fn matching_estimate(
    data: &ObservedDataset,
    grouping: Grouping<'_>,
    t: TreatmentId,
    method: &str,
) -> Result<EstimateReport> {
    require_treatment(data, t)?;
    let groups = observed_groups(data, grouping)?;
    for (key, g) in &groups.groups {
        if g.treated_count(t) == 0 {
            return Err(Error::SupportViolation {
                group: key.to_string(),
                treatment: t,
            });
        }
    }
    let n = groups.total as f64;

    // Horvitz-Thompson form: per treated row, y / pi_t(group).
    let mut ht = Accumulator::new();
    for row in data.rows().iter().filter(|r| r.t == t) {
        let g = &groups.groups[&grouping.key(&row.x)?];
        let propensity = g.treated_count(t) as f64 / g.count as f64;
        ht.add(row.y / propensity);
    }
    let ht = ht.total() / n;

    // Plug-in form: (1/|J|) sum_x |J^x| * mean_{J_t^x} y.
    let plugin = groups
        .groups
        .values()
        .map(|g| g.count as f64 * g.treated_mean(t).expect("support checked"))
        .collect::<Accumulator>()
        .total()
        / n;

    if !close_relative(ht, plugin, IDENTITY_TOLERANCE) {
        return Err(Error::Identity(format!(
            "{method}: HT form {ht} differs from plug-in form {plugin}"
        )));
    }
    let mut report = EstimateReport::new(method, Some(t), ht, data);
    report.support = Some(support_for(data, grouping, &[t])?);
    report.notes.push(format!(
        "HT form equals matching plug-in form (|diff| = {:e})",
        (ht - plugin).abs()
    ));
    Ok(report)
}

/// Exact matching in HT form; requires `J_t^x` nonempty for every observed x.
pub fn exact_matching_estimate(data: &ObservedDataset, t: TreatmentId) -> Result<EstimateReport> {
    matching_estimate(data, Grouping::Exact, t, "exact_matching")
}

/// Coarsened matching with cell propensities `|J_t^U| / |J^U|`.
pub fn coarsened_matching_estimate(
    data: &ObservedDataset,
    partition: &CovariatePartition,
    t: TreatmentId,
) -> Result<EstimateReport> {
    partition.validate(data.rows().iter().map(|r| &r.x))?;
    matching_estimate(data, Grouping::Cells(partition), t, "coarsened_matching")
}

/// `(1/|J|) sum_J p(x_i, t)`.
pub fn plugin_estimate(
    p: &Predictor,
    data: &ObservedDataset,
    t: TreatmentId,
) -> Result<EstimateReport> {
    require_treatment(data, t)?;
    let mut acc = Accumulator::new();
    for row in data.rows() {
        acc.add(p.evaluate(&row.x, t)?);
    }
    let mut report = EstimateReport::new("plugin", Some(t), acc.mean().expect("nonempty"), data);
    report.notes.push(format!("predictor: {}", p.label()));
    Ok(report)
}

/// `sum_x (|J^x|/|J|) Gamma_{t,x}` with
/// `Gamma_{t,x} = p(x,t) + w(x,t) (1/|J^x|) sum_{J_t^x} (y_i - p(x,t))`.
///
/// The residual is normalised by `|J^x|`, not `|J_t^x|`; composition weights
/// carry the `|J_t^x|` denominator instead.
pub fn doubly_robust_estimate(
    p: &Predictor,
    w: &WeightFunction,
    data: &ObservedDataset,
    t: TreatmentId,
) -> Result<EstimateReport> {
    require_treatment(data, t)?;
    let groups = observed_groups(data, Grouping::Exact)?;
    let n = groups.total as f64;
    let mut acc = Accumulator::new();
    for (key, g) in &groups.groups {
        let GroupKey::Value(x) = key else {
            unreachable!()
        };
        let px = p.evaluate(x, t)?;
        let mut gamma = px;
        let n_t = g.treated_count(t);
        if n_t > 0 {
            let residual_sum = g.treated_sum(t) - n_t as f64 * px;
            gamma += w.evaluate(x, t)? * residual_sum / g.count as f64;
        }
        acc.add(g.count as f64 / n * gamma);
    }
    let mut report = EstimateReport::new("doubly_robust", Some(t), acc.total(), data);
    report.notes.push(format!("predictor: {}", p.label()));
    Ok(report)
}

/// `apo1 - apo0`; guarantee budgets add when both sides carry one.
pub fn ate_estimate(apo1: &EstimateReport, apo0: &EstimateReport) -> Result<EstimateReport> {
    if apo1.population != apo0.population {
        return Err(Error::Mismatch(format!(
            "reports target different populations ({} vs {})",
            apo1.population, apo0.population
        )));
    }
    if apo1.method != apo0.method {
        return Err(Error::Mismatch(format!(
            "reports come from different methods ({} vs {})",
            apo1.method, apo0.method
        )));
    }
    let guarantee = match (apo1.guarantee, apo0.guarantee) {
        (Some(a), Some(b)) => Some(Guarantee::new(a.eps + b.eps, a.delta + b.delta)),
        _ => None,
    };
    Ok(EstimateReport {
        method: format!("ate/{}", apo1.method),
        treatment: None,
        estimate: apo1.estimate - apo0.estimate,
        guarantee,
        support: None,
        population: apo1.population.clone(),
        notes: Vec::new(),
    })
}

/// Selector over the single-treatment APO estimators.
#[derive(Clone, Debug)]
pub enum ApoMethod {
    Rct,
    ExactMatching,
    CoarsenedMatching(CovariatePartition),
    Plugin(Predictor),
    DoublyRobust {
        predictor: Predictor,
        weights: WeightFunction,
    },
}

impl ApoMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ApoMethod::Rct => "rct",
            ApoMethod::ExactMatching => "exact_matching",
            ApoMethod::CoarsenedMatching(_) => "coarsened_matching",
            ApoMethod::Plugin(_) => "plugin",
            ApoMethod::DoublyRobust { .. } => "doubly_robust",
        }
    }

    pub fn estimate(&self, data: &ObservedDataset, t: TreatmentId) -> Result<EstimateReport> {
        match self {
            ApoMethod::Rct => rct_estimate(data, t),
            ApoMethod::ExactMatching => exact_matching_estimate(data, t),
            ApoMethod::CoarsenedMatching(partition) => {
                coarsened_matching_estimate(data, partition, t)
            }
            ApoMethod::Plugin(p) => plugin_estimate(p, data, t),
            ApoMethod::DoublyRobust { predictor, weights } => {
                doubly_robust_estimate(predictor, weights, data, t)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::fixtures::p8;
    use crate::population::{CovariateValue, Observation, TreatmentSet};

    const T0: TreatmentId = TreatmentId(0);
    const T1: TreatmentId = TreatmentId(1);

    fn x(l: &str) -> CovariateValue {
        CovariateValue::cat("x", l)
    }

    fn dataset(rows: &[(&str, u32, f64)]) -> ObservedDataset {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, &(l, t, y))| Observation {
                id: i as u64,
                x: x(l),
                t: TreatmentId(t),
                y,
                z: None,
            })
            .collect();
        ObservedDataset::new(TreatmentSet::binary(), rows).unwrap()
    }

    #[test]
    fn rct_on_p8() {
        let (data, _) = p8();
        assert_eq!(rct_estimate(&data, T1).unwrap().estimate, 7.0);
        assert_eq!(rct_estimate(&data, T0).unwrap().estimate, 4.0);
        let single = dataset(&[("a", 1, 5.0)]);
        assert_eq!(rct_estimate(&single, T1).unwrap().estimate, 5.0);
        assert!(matches!(
            rct_estimate(&single, T0),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn exact_matching_on_p8() {
        let (data, _) = p8();
        assert_eq!(exact_matching_estimate(&data, T1).unwrap().estimate, 7.0);
        assert_eq!(exact_matching_estimate(&data, T0).unwrap().estimate, 4.0);
    }

    #[test]
    fn exact_matching_names_the_unsupported_cell() {
        let (data, _) = p8();
        let err = exact_matching_estimate(&data.filtered(|r| r.id != 2), T0).unwrap_err();
        assert!(err.to_string().contains("x=a"), "{err}");
    }

    #[test]
    fn single_covariate_matching_is_rct() {
        let data = dataset(&[
            ("a", 1, 3.0),
            ("a", 0, 1.0),
            ("a", 1, 8.0),
            ("a", 0, 2.5),
            ("a", 1, 1.0),
        ]);
        for t in [T0, T1] {
            let m = exact_matching_estimate(&data, t).unwrap().estimate;
            let r = rct_estimate(&data, t).unwrap().estimate;
            assert!(close_relative(m, r, 1e-12));
        }
    }

    #[test]
    fn coarsened_limits_and_hand_sum() {
        let (data, _) = p8();
        let singletons = CovariatePartition::singletons([&x("a"), &x("b")]).unwrap();
        assert_eq!(
            coarsened_matching_estimate(&data, &singletons, T1)
                .unwrap()
                .estimate,
            7.0
        );
        let one = CovariatePartition::single_cell("all", [&x("a"), &x("b")]).unwrap();
        assert_eq!(
            coarsened_matching_estimate(&data, &one, T1)
                .unwrap()
                .estimate,
            7.0
        );

        // U1 = {a, b}: treated y = {10, 4}, |J^U1| = 4; U2 = {c}: treated y = {8}, |J^U2| = 2.
        let six = dataset(&[
            ("a", 1, 10.0),
            ("a", 0, 1.0),
            ("b", 1, 4.0),
            ("b", 0, 1.0),
            ("c", 1, 8.0),
            ("c", 0, 1.0),
        ]);
        let part = CovariatePartition::from_groups(vec![
            ("U1".into(), vec![x("a"), x("b")]),
            ("U2".into(), vec![x("c")]),
        ])
        .unwrap();
        let est = coarsened_matching_estimate(&six, &part, T1)
            .unwrap()
            .estimate;
        let expected = ((10.0 + 4.0) / 0.5 + 8.0 / 0.5) / 6.0;
        assert!((est - expected).abs() < 1e-12);
        assert!((est - 22.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn plugin_on_p8() {
        let (data, _) = p8();
        let p = Predictor::exact_matching(&data, &[T0, T1]).unwrap();
        assert_eq!(plugin_estimate(&p, &data, T1).unwrap().estimate, 7.0);
        assert_eq!(
            plugin_estimate(&Predictor::constant(3.0), &data, T1)
                .unwrap()
                .estimate,
            3.0
        );
        let zero = Predictor::from_fn("zero", |_, t| (t == T1).then_some(0.0));
        assert_eq!(plugin_estimate(&zero, &data, T1).unwrap().estimate, 0.0);
        assert!(plugin_estimate(&zero, &data, T0).is_err());
    }

    #[test]
    fn doubly_robust_on_p8() {
        let (data, future) = p8();
        let truth = Predictor::from_table(
            "truth",
            BTreeMap::from([((x("a"), T1), 10.0), ((x("b"), T1), 4.0)]),
        );
        let dr = doubly_robust_estimate(&truth, &WeightFunction::one(), &data, T1).unwrap();
        assert_eq!(dr.estimate, 7.0);

        let zero = Predictor::constant(0.0);
        let w = WeightFunction::composition_weights(&data, &future, T1).unwrap();
        assert_eq!(
            doubly_robust_estimate(&zero, &w, &data, T1)
                .unwrap()
                .estimate,
            7.0
        );
        assert_eq!(
            doubly_robust_estimate(&zero, &WeightFunction::Constant(0.0), &data, T1)
                .unwrap()
                .estimate,
            0.0
        );
    }

    #[test]
    fn ate_combines_reports() {
        let (data, _) = p8();
        let a1 = exact_matching_estimate(&data, T1)
            .unwrap()
            .with_guarantee(0.1, 0.2);
        let a0 = exact_matching_estimate(&data, T0)
            .unwrap()
            .with_guarantee(0.1, 0.2);
        let ate = ate_estimate(&a1, &a0).unwrap();
        assert_eq!(ate.estimate, 3.0);
        assert!((ate.guarantee.unwrap().bound - 0.6).abs() < 1e-15);
        assert_eq!(ate_estimate(&a1, &a1).unwrap().estimate, 0.0);

        let other = data.filtered(|r| r.id != 4);
        let r0 = exact_matching_estimate(&other, T1).unwrap();
        assert!(matches!(ate_estimate(&a1, &r0), Err(Error::Mismatch(_))));
    }

    #[test]
    fn report_json_shape() {
        let (data, _) = p8();
        let r = rct_estimate(&data, T1).unwrap().with_guarantee(0.0, 0.5);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["method", "treatment", "estimate", "guarantee", "support"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["guarantee"]["bound"], 0.5);
    }
}
