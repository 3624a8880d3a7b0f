//! Index-set algebra over the observed and future populations: the
//! subgroups `J_t`, `J^x`, `J_t^x`, `J^U`, `J_t^U`, empirical propensities and
//! common-support checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Accumulator;
use crate::partition::{CovariatePartition, GroupKey, Grouping};
use crate::population::{CovariateValue, FuturePopulation, ObservedDataset, TreatmentId};

/// Covariate filter for [`subgroup`]; at most one of value / cell by construction.
#[derive(Clone, Copy, Debug, Default)]
pub enum CovariateFilter<'a> {
    #[default]
    Any,
    Value(&'a CovariateValue),
    Cell {
        partition: &'a CovariatePartition,
        index: usize,
    },
}

/// Unit ids of `J_t`, `J^x`, `J_t^x`, `J^U` or `J_t^U` depending on the filters.
pub fn subgroup(
    data: &ObservedDataset,
    t: Option<TreatmentId>,
    filter: CovariateFilter<'_>,
) -> Result<BTreeSet<u64>> {
    if let Some(t) = t {
        data.treatments().check(t)?;
    }
    if let CovariateFilter::Cell { partition, index } = filter {
        if index >= partition.len() {
            return Err(Error::Invalid(format!(
                "partition has {} cells, no cell {index}",
                partition.len()
            )));
        }
    }
    let mut ids = BTreeSet::new();
    for row in data.rows() {
        if t.is_some_and(|t| row.t != t) {
            continue;
        }
        let keep = match filter {
            CovariateFilter::Any => true,
            CovariateFilter::Value(x) => &row.x == x,
            CovariateFilter::Cell { partition, index } => partition.cell_of(&row.x)? == index,
        };
        if keep {
            ids.insert(row.id);
        }
    }
    Ok(ids)
}

/// Observed units of one group, with per-treatment outcome sums.
#[derive(Debug, Default, Clone)]
pub(crate) struct ObservedGroup {
    pub count: usize,
    pub by_t: BTreeMap<TreatmentId, Accumulator>,
}

impl ObservedGroup {
    pub fn treated_count(&self, t: TreatmentId) -> usize {
        self.by_t.get(&t).map_or(0, Accumulator::count)
    }

    pub fn treated_mean(&self, t: TreatmentId) -> Option<f64> {
        self.by_t.get(&t).and_then(Accumulator::mean)
    }

    pub fn treated_sum(&self, t: TreatmentId) -> f64 {
        self.by_t.get(&t).map_or(0.0, Accumulator::total)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ObservedGroups {
    pub groups: BTreeMap<GroupKey, ObservedGroup>,
    pub total: usize,
}

pub(crate) fn observed_groups(
    data: &ObservedDataset,
    grouping: Grouping<'_>,
) -> Result<ObservedGroups> {
    let mut groups: BTreeMap<GroupKey, ObservedGroup> = BTreeMap::new();
    for row in data.rows() {
        let g = groups.entry(grouping.key(&row.x)?).or_default();
        g.count += 1;
        g.by_t.entry(row.t).or_default().add(row.y);
    }
    Ok(ObservedGroups {
        groups,
        total: data.len(),
    })
}

/// Future units of one group; outcome sums are filled only in oracle mode.
#[derive(Debug, Default, Clone)]
pub(crate) struct FutureGroup {
    pub count: usize,
    pub outcomes: BTreeMap<TreatmentId, Accumulator>,
}

impl FutureGroup {
    pub fn mean_outcome(&self, t: TreatmentId) -> Option<f64> {
        self.outcomes.get(&t).and_then(Accumulator::mean)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FutureGroups {
    pub groups: BTreeMap<GroupKey, FutureGroup>,
    pub total: usize,
}

pub(crate) fn future_groups(
    future: &FuturePopulation,
    grouping: Grouping<'_>,
) -> Result<FutureGroups> {
    let mut groups: BTreeMap<GroupKey, FutureGroup> = BTreeMap::new();
    for unit in future.units() {
        let g = groups.entry(grouping.key(&unit.x)?).or_default();
        g.count += 1;
        if let Some(oracle) = future.oracle() {
            for t in future.treatments().iter() {
                let y = oracle
                    .outcome(unit.id, t)
                    .expect("oracle totality checked at construction");
                g.outcomes.entry(t).or_default().add(y);
            }
        }
    }
    Ok(FutureGroups {
        groups,
        total: future.len(),
    })
}

/// `|J_t^x| / |J^x|` per observed x (or `|J_t^U| / |J^U|` per cell).
pub fn empirical_propensity(
    data: &ObservedDataset,
    t: TreatmentId,
    grouping: Grouping<'_>,
) -> Result<BTreeMap<GroupKey, f64>> {
    data.treatments().check(t)?;
    let groups = observed_groups(data, grouping)?;
    Ok(groups
        .groups
        .into_iter()
        .map(|(k, g)| {
            let p = g.treated_count(t) as f64 / g.count as f64;
            (k, p)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportViolation {
    pub group: String,
    pub treatment: TreatmentId,
}

/// Outcome of a positivity / common-support check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportReport {
    pub ok: bool,
    pub violations: Vec<SupportViolation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Lists every (x or cell, t) with `J_t^x` empty, over the groups present in `J`.
pub fn common_support_check(
    data: &ObservedDataset,
    grouping: Grouping<'_>,
) -> Result<SupportReport> {
    let treatments: Vec<_> = data.treatments().iter().collect();
    support_for(data, grouping, &treatments)
}

/// Support check restricted to the listed treatments.
pub fn support_for(
    data: &ObservedDataset,
    grouping: Grouping<'_>,
    treatments: &[TreatmentId],
) -> Result<SupportReport> {
    for &t in treatments {
        data.treatments().check(t)?;
    }
    if data.is_empty() {
        return Ok(SupportReport {
            ok: false,
            violations: Vec::new(),
            note: Some("empty dataset: every (x, t) cell is vacuously absent".into()),
        });
    }
    let groups = observed_groups(data, grouping)?;
    let violations: Vec<_> = groups
        .groups
        .iter()
        .flat_map(|(k, g)| {
            treatments
                .iter()
                .filter(|&&t| g.treated_count(t) == 0)
                .map(move |&t| SupportViolation {
                    group: k.to_string(),
                    treatment: t,
                })
        })
        .collect();
    Ok(SupportReport {
        ok: violations.is_empty(),
        violations,
        note: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::p8;

    fn x(level: &str) -> CovariateValue {
        CovariateValue::cat("x", level)
    }

    #[test]
    fn subgroup_filters() {
        let (data, _) = p8();
        let t1 = subgroup(&data, Some(TreatmentId(1)), CovariateFilter::Any).unwrap();
        assert_eq!(t1, BTreeSet::from([1, 3]));
        let a = x("a");
        let t1a = subgroup(&data, Some(TreatmentId(1)), CovariateFilter::Value(&a)).unwrap();
        assert_eq!(t1a, BTreeSet::from([1]));
        assert!(matches!(
            subgroup(&data, Some(TreatmentId(2)), CovariateFilter::Any),
            Err(Error::UnknownTreatment(TreatmentId(2)))
        ));
    }

    #[test]
    fn propensities_on_p8() {
        let (data, _) = p8();
        for t in [0, 1] {
            let p = empirical_propensity(&data, TreatmentId(t), Grouping::Exact).unwrap();
            assert_eq!(p[&GroupKey::Value(x("a"))], 0.5);
            assert_eq!(p[&GroupKey::Value(x("b"))], 0.5);
        }
    }

    #[test]
    fn all_treated_has_zero_control_propensity() {
        let (data, _) = p8();
        let treated = data.filtered(|r| r.t == TreatmentId(1));
        let p = empirical_propensity(&treated, TreatmentId(0), Grouping::Exact).unwrap();
        assert!(p.values().all(|&v| v == 0.0));
    }

    #[test]
    fn support_on_p8_and_after_removing_a_control() {
        let (data, _) = p8();
        assert!(common_support_check(&data, Grouping::Exact).unwrap().ok);
        let without_i2 = data.filtered(|r| r.id != 2);
        let report = common_support_check(&without_i2, Grouping::Exact).unwrap();
        assert!(!report.ok);
        assert_eq!(
            report.violations,
            vec![SupportViolation {
                group: "x=a".into(),
                treatment: TreatmentId(0)
            }]
        );
    }

    #[test]
    fn empty_dataset_fails_support_with_note() {
        let (data, _) = p8();
        let empty = data.filtered(|_| false);
        let report = common_support_check(&empty, Grouping::Exact).unwrap();
        assert!(!report.ok);
        assert!(report.note.is_some());
    }

    #[test]
    fn cell_subgroup_matches_value_union() {
        let (data, _) = p8();
        let part = CovariatePartition::single_cell("all", [&x("a"), &x("b")]).unwrap();
        let cell = subgroup(
            &data,
            Some(TreatmentId(0)),
            CovariateFilter::Cell {
                partition: &part,
                index: 0,
            },
        )
        .unwrap();
        assert_eq!(cell, BTreeSet::from([2, 4]));
    }
}
