//! Assumption auditors.
//!
//! Each auditor returns the realised discrepancy rather than a verdict, so a
//! caller can compare `|estimate - truth|` against the audited budget
//! directly. Only [`audit_sp`] and [`audit_compliance_stability`]'s observed
//! side work without the outcome oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{future_groups, observed_groups};
use crate::numeric::Accumulator;
use crate::partition::{CovariatePartition, GroupKey, Grouping};
use crate::population::{FuturePopulation, ObservedDataset, TreatmentId};
use crate::predictor::{Predictor, WeightFunction};

/// One per-cell (or per-group) entry of an audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDiscrepancy {
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<TreatmentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument: Option<u32>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub assumption: String,
    pub per_treatment: BTreeMap<TreatmentId, f64>,
    #[serde(default)]
    pub cells: Vec<CellDiscrepancy>,
    /// Set by auditors whose assumption is a sign condition (dominance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holds: Option<bool>,
}

impl AuditResult {
    fn new(assumption: &str) -> Self {
        Self {
            assumption: assumption.into(),
            per_treatment: BTreeMap::new(),
            cells: Vec::new(),
            holds: None,
        }
    }

    /// Discrepancy for `t`; `None` if `t` was not audited.
    pub fn get(&self, t: TreatmentId) -> Option<f64> {
        self.per_treatment.get(&t).copied()
    }

    /// Largest absolute per-treatment value, or largest absolute cell value
    /// when there is no per-treatment entry.
    pub fn headline(&self) -> f64 {
        if self.per_treatment.is_empty() {
            self.cells.iter().map(|c| c.value.abs()).fold(0.0, f64::max)
        } else {
            self.per_treatment
                .values()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
        }
    }
}

fn check_treatments(
    data_treatments: &crate::population::TreatmentSet,
    ts: &[TreatmentId],
) -> Result<()> {
    ts.iter().try_for_each(|&t| data_treatments.check(t))
}

/// `|mu_t(p) - hat mu_t(p)|` for every declared treatment.
pub fn audit_sp(
    p: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
) -> Result<AuditResult> {
    let ts: Vec<_> = data.treatments().iter().collect();
    audit_sp_at(p, data, future, &ts)
}

/// ε-SP restricted to the listed treatments. Uses covariates only.
pub fn audit_sp_at(
    p: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
    treatments: &[TreatmentId],
) -> Result<AuditResult> {
    check_treatments(data.treatments(), treatments)?;
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    if future.is_empty() {
        return Err(Error::EmptyGroup("future population I".into()));
    }
    let mut result = AuditResult::new("eps_sp");
    for &t in treatments {
        let mut on_i = Accumulator::new();
        for u in future.units() {
            on_i.add(p.evaluate(&u.x, t)?);
        }
        let mut on_j = Accumulator::new();
        for r in data.rows() {
            on_j.add(p.evaluate(&r.x, t)?);
        }
        let gap = on_i.mean().expect("nonempty") - on_j.mean().expect("nonempty");
        result.per_treatment.insert(t, gap.abs());
    }
    Ok(result)
}

/// `|mu_t(y) - mu_t(p)|` for every declared treatment; oracle mode only.
pub fn audit_cfd(p: &Predictor, future: &FuturePopulation) -> Result<AuditResult> {
    let ts: Vec<_> = future.treatments().iter().collect();
    audit_cfd_at(p, future, &ts)
}

pub fn audit_cfd_at(
    p: &Predictor,
    future: &FuturePopulation,
    treatments: &[TreatmentId],
) -> Result<AuditResult> {
    let oracle = future.require_oracle("CFD unobservable without ground truth")?;
    check_treatments(future.treatments(), treatments)?;
    if future.is_empty() {
        return Err(Error::EmptyGroup("future population I".into()));
    }
    let mut result = AuditResult::new("delta_cfd");
    for &t in treatments {
        let mut gap = Accumulator::new();
        for u in future.units() {
            let y = oracle.outcome(u.id, t).expect("total oracle");
            gap.add(y - p.evaluate(&u.x, t)?);
        }
        result
            .per_treatment
            .insert(t, gap.mean().expect("nonempty").abs());
    }
    Ok(result)
}

/// One cell of the signed-difference decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedCell {
    pub group: GroupKey,
    /// `|I^x| / |I|`.
    pub weight: f64,
    /// `mu_t^x(y) - hat mu_t^x(y)`.
    pub gap: f64,
}

/// Per-cell terms of the average signed difference, over the cells present in `I`.
pub fn signed_difference_cells(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
    partition: Option<&CovariatePartition>,
) -> Result<Vec<SignedCell>> {
    future.require_oracle("signed difference unobservable without ground truth")?;
    data.treatments().check(t)?;
    if future.is_empty() {
        return Err(Error::EmptyGroup("future population I".into()));
    }
    let grouping = Grouping::from_partition(partition);
    let observed = observed_groups(data, grouping)?;
    let fut = future_groups(future, grouping)?;
    let n_i = fut.total as f64;
    let mut cells = Vec::with_capacity(fut.groups.len());
    for (key, g) in fut.groups {
        let observed_mean = observed
            .groups
            .get(&key)
            .and_then(|o| o.treated_mean(t))
            .ok_or_else(|| Error::SupportViolation {
                group: key.to_string(),
                treatment: t,
            })?;
        let future_mean = g.mean_outcome(t).expect("oracle present");
        cells.push(SignedCell {
            weight: g.count as f64 / n_i,
            gap: future_mean - observed_mean,
            group: key,
        });
    }
    Ok(cells)
}

/// `sum_x (|I^x|/|I|) (mu_t^x(y) - hat mu_t^x(y))`, signed; cells `U` replace
/// `x` when a partition is given.
pub fn avg_signed_difference(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
    partition: Option<&CovariatePartition>,
) -> Result<f64> {
    let cells = signed_difference_cells(data, future, t, partition)?;
    Ok(cells
        .iter()
        .map(|c| c.weight * c.gap)
        .collect::<Accumulator>()
        .total())
}

/// Area-wise residual stability on a partition.
///
/// For each cell `U` and treatment `t`: mean of `p - y` over `I^U` minus mean
/// of `p - y` over `J_t^U`. `per_treatment` holds the largest absolute cell
/// value. Cells empty on both sides are skipped; cells empty on one side are
/// an error.
pub fn audit_ml_groupwise(
    p: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
    partition: &CovariatePartition,
) -> Result<AuditResult> {
    let ts: Vec<_> = data.treatments().iter().collect();
    audit_ml_groupwise_at(p, data, future, partition, &ts)
}

pub fn audit_ml_groupwise_at(
    p: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
    partition: &CovariatePartition,
    treatments: &[TreatmentId],
) -> Result<AuditResult> {
    let oracle = future.require_oracle("area-wise error unobservable without ground truth")?;
    check_treatments(data.treatments(), treatments)?;
    let mut result = AuditResult::new("area_wise_error");
    for &t in treatments {
        let mut fut: BTreeMap<usize, Accumulator> = BTreeMap::new();
        for u in future.units() {
            let y = oracle.outcome(u.id, t).expect("total oracle");
            fut.entry(partition.cell_of(&u.x)?)
                .or_default()
                .add(p.evaluate(&u.x, t)? - y);
        }
        let mut obs: BTreeMap<usize, Accumulator> = BTreeMap::new();
        for r in data.rows().iter().filter(|r| r.t == t) {
            obs.entry(partition.cell_of(&r.x)?)
                .or_default()
                .add(p.evaluate(&r.x, t)? - r.y);
        }
        // Cells with untreated observed units but no treated ones still count
        // as present on the observed side.
        for r in data.rows() {
            obs.entry(partition.cell_of(&r.x)?).or_default();
        }
        let mut worst: f64 = 0.0;
        for index in 0..partition.len() {
            let name = &partition.cells()[index].name;
            let f = fut.get(&index).and_then(Accumulator::mean);
            let o = obs.get(&index).and_then(Accumulator::mean);
            let present_i = fut.contains_key(&index);
            let present_j = obs.contains_key(&index);
            let value = match (f, o) {
                (Some(f), Some(o)) => f - o,
                _ if !present_i && !present_j => continue,
                (None, _) => {
                    return Err(Error::EmptyGroup(format!("future cell I^{name} is empty")));
                }
                (_, None) => {
                    return Err(Error::SupportViolation {
                        group: name.clone(),
                        treatment: t,
                    })
                }
            };
            worst = worst.max(value.abs());
            result.cells.push(CellDiscrepancy {
                group: name.clone(),
                treatment: Some(t),
                instrument: None,
                value,
            });
        }
        result.per_treatment.insert(t, worst);
    }
    Ok(result)
}

/// Largest `|mean_{J_t^U} (p - y)|` over the cells with treated units.
///
/// Needs observed data only. Zero when `p` is calibrated cell by cell on the
/// treated units, in which case the area-wise error alone bounds the future
/// calibration of `p`.
pub fn audit_observed_calibration(
    p: &Predictor,
    data: &ObservedDataset,
    partition: &CovariatePartition,
    t: TreatmentId,
) -> Result<f64> {
    data.treatments().check(t)?;
    let mut cells: BTreeMap<usize, Accumulator> = BTreeMap::new();
    for r in data.rows().iter().filter(|r| r.t == t) {
        cells
            .entry(partition.cell_of(&r.x)?)
            .or_default()
            .add(p.evaluate(&r.x, t)? - r.y);
    }
    Ok(cells
        .values()
        .filter_map(Accumulator::mean)
        .map(f64::abs)
        .fold(0.0, f64::max))
}

/// `sum_x (|J^x|/|J|) (mu_t^x(y) - hat mu_t^x(y)) f(x, t)`, signed and
/// weighted by the observed composition.
pub fn audit_dr_condition(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
    f: &WeightFunction,
) -> Result<f64> {
    future.require_oracle("DR condition unobservable without ground truth")?;
    data.treatments().check(t)?;
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    let observed = observed_groups(data, Grouping::Exact)?;
    let fut = future_groups(future, Grouping::Exact)?;
    let n_j = observed.total as f64;
    let mut acc = Accumulator::new();
    for (key, g) in &observed.groups {
        let GroupKey::Value(x) = key else {
            unreachable!()
        };
        let fx = f.evaluate(x, t)?;
        if fx == 0.0 {
            continue;
        }
        let observed_mean = g.treated_mean(t).ok_or_else(|| Error::SupportViolation {
            group: key.to_string(),
            treatment: t,
        })?;
        let future_mean = fut
            .groups
            .get(key)
            .and_then(|fg| fg.mean_outcome(t))
            .ok_or_else(|| Error::EmptyGroup(format!("future cell I^{key} is empty")))?;
        acc.add(g.count as f64 / n_j * (future_mean - observed_mean) * fx);
    }
    Ok(acc.total())
}

/// Realised remainder of the doubly robust estimator when `p` equals the
/// future cell means: `|sum_x (|J_t^x|/|J|) w(x,t) (hat mu_t^x - mu_t^x)|`.
///
/// This is [`audit_dr_condition`] with `f = w * hat pi_t`; cells without
/// treated units contribute nothing.
pub fn dr_budget(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
    w: &WeightFunction,
) -> Result<f64> {
    future.require_oracle("DR condition unobservable without ground truth")?;
    data.treatments().check(t)?;
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    let observed = observed_groups(data, Grouping::Exact)?;
    let fut = future_groups(future, Grouping::Exact)?;
    let n_j = observed.total as f64;
    let mut acc = Accumulator::new();
    for (key, g) in &observed.groups {
        let n_t = g.treated_count(t);
        if n_t == 0 {
            continue;
        }
        let GroupKey::Value(x) = key else {
            unreachable!()
        };
        let future_mean = fut
            .groups
            .get(key)
            .and_then(|fg| fg.mean_outcome(t))
            .ok_or_else(|| Error::EmptyGroup(format!("future cell I^{key} is empty")))?;
        let observed_mean = g.treated_mean(t).expect("n_t > 0");
        acc.add(n_t as f64 / n_j * w.evaluate(x, t)? * (future_mean - observed_mean));
    }
    Ok(acc.total().abs())
}

/// Group-level dominance on `I_01 = {s(i,1)=0}` and `I_10 = {s(i,0)=1}`.
///
/// Cells hold `sum (y(i,1) - y(i,0))` per group; holds iff both are `>= 0`.
pub fn audit_dominance(future: &FuturePopulation) -> Result<AuditResult> {
    let oracle = future.require_oracle("dominance unobservable without ground truth")?;
    let compliance = future.require_compliance()?;
    let (t0, t1) = (TreatmentId(0), TreatmentId(1));
    future.treatments().check(t0)?;
    future.treatments().check(t1)?;
    let mut result = AuditResult::new("dominance");
    let mut holds = true;
    for (name, z, taken) in [("I_01", 1u32, t0), ("I_10", 0u32, t1)] {
        let mut acc = Accumulator::new();
        for u in future.units() {
            if compliance.taken(u.id, z) == Some(taken) {
                acc.add(
                    oracle.outcome(u.id, t1).expect("total")
                        - oracle.outcome(u.id, t0).expect("total"),
                );
            }
        }
        let value = acc.total();
        holds &= value >= 0.0;
        result.cells.push(CellDiscrepancy {
            group: name.into(),
            treatment: Some(taken),
            instrument: Some(z),
            value,
        });
    }
    result.holds = Some(holds);
    Ok(result)
}

/// `| |I_tz|/|I| - |J_tz|/|J| |` for every `(t, z)`.
pub fn audit_compliance_stability(
    data: &ObservedDataset,
    future: &FuturePopulation,
) -> Result<AuditResult> {
    let compliance = future.require_compliance()?;
    if !data.has_instrument() {
        return Err(Error::Invalid(
            "observed rows carry no instrument column".into(),
        ));
    }
    if future.is_empty() {
        return Err(Error::EmptyGroup("future population I".into()));
    }
    let n_i = future.len() as f64;
    let n_j = data.len() as f64;
    let mut result = AuditResult::new("compliance_stability");
    let mut instruments: Vec<u32> = compliance.instruments().collect();
    instruments.extend(data.rows().iter().filter_map(|r| r.z));
    instruments.sort_unstable();
    instruments.dedup();
    for t in data.treatments().iter() {
        let mut worst: f64 = 0.0;
        for &z in &instruments {
            let i_tz = future
                .units()
                .iter()
                .filter(|u| compliance.taken(u.id, z) == Some(t))
                .count();
            let j_tz = data
                .rows()
                .iter()
                .filter(|r| r.t == t && r.z == Some(z))
                .count();
            let value = (i_tz as f64 / n_i - j_tz as f64 / n_j).abs();
            worst = worst.max(value);
            result.cells.push(CellDiscrepancy {
                group: format!("t={t},z={z}"),
                treatment: Some(t),
                instrument: Some(z),
                value,
            });
        }
        result.per_treatment.insert(t, worst);
    }
    Ok(result)
}

/// ε-SP of a z-wise predictor (`py` is evaluated with `TreatmentId(z)` in the treatment slot).
pub fn audit_iv_sp(
    py: &Predictor,
    data: &ObservedDataset,
    future: &FuturePopulation,
) -> Result<AuditResult> {
    if data.is_empty() || future.is_empty() {
        return Err(Error::EmptyGroup("J or I".into()));
    }
    let mut result = AuditResult::new("eps_sp_z");
    for z in [0u32, 1] {
        let zt = TreatmentId(z);
        let on_i: Accumulator = future
            .units()
            .iter()
            .map(|u| py.evaluate(&u.x, zt))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        let on_j: Accumulator = data
            .rows()
            .iter()
            .map(|r| py.evaluate(&r.x, zt))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect();
        let value = (on_i.mean().expect("nonempty") - on_j.mean().expect("nonempty")).abs();
        result.per_treatment.insert(zt, value);
    }
    Ok(result)
}

/// z-wise calibration: `| mean_I y(i, s(i,z)) - mean_I py(x(i), z) |` for `z in {0,1}`.
///
/// `y(i, z)` is read through the exclusion restriction as `y(i, s(i, z))`.
pub fn audit_iv_cfd(py: &Predictor, future: &FuturePopulation) -> Result<AuditResult> {
    let oracle = future.require_oracle("CFD unobservable without ground truth")?;
    let compliance = future.require_compliance()?;
    if future.is_empty() {
        return Err(Error::EmptyGroup("future population I".into()));
    }
    let mut result = AuditResult::new("delta_cfd_z");
    for z in [0u32, 1] {
        let mut gap = Accumulator::new();
        for u in future.units() {
            let taken = compliance.taken(u.id, z).ok_or_else(|| {
                Error::Invalid(format!("no compliance entry for unit {}, z={z}", u.id))
            })?;
            let y = oracle.outcome(u.id, taken).expect("total oracle");
            gap.add(y - py.evaluate(&u.x, TreatmentId(z))?);
        }
        result
            .per_treatment
            .insert(TreatmentId(z), gap.mean().expect("nonempty").abs());
    }
    Ok(result)
}

/// `| mean_{I_tz} y(i, t) - mean_{J_tz} y |` with `z = t`: the stability premise
/// of the bounded-outcome interval for treatment `t` (`I_11`/`J_11` for `t=1`,
/// `I_00`/`J_00` for `t=0`). An empty `I_tt` contributes 0.
pub fn audit_rm_stability(
    data: &ObservedDataset,
    future: &FuturePopulation,
    t: TreatmentId,
) -> Result<f64> {
    let oracle = future.require_oracle("stability unobservable without ground truth")?;
    let compliance = future.require_compliance()?;
    if t.0 > 1 {
        return Err(Error::UnknownTreatment(t));
    }
    let z = t.0;
    let observed: Accumulator = data
        .rows()
        .iter()
        .filter(|r| r.t == t && r.z == Some(z))
        .map(|r| r.y)
        .collect();
    let observed = observed
        .mean()
        .ok_or_else(|| Error::EmptyGroup(format!("J_{t}{z}")))?;
    let fut: Accumulator = future
        .units()
        .iter()
        .filter(|u| compliance.taken(u.id, z) == Some(t))
        .map(|u| oracle.outcome(u.id, t).expect("total oracle"))
        .collect();
    Ok(fut.mean().map_or(0.0, |m| (m - observed).abs()))
}
