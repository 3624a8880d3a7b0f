//! Treatment-wise predictors `p(x, t)` and weight functions `w(x, t)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::index::{future_groups, observed_groups};
use crate::partition::{CovariatePartition, GroupKey, Grouping};
use crate::population::{CovariateValue, FuturePopulation, ObservedDataset, TreatmentId};

pub type RuleFn = Arc<dyn Fn(&CovariateValue, TreatmentId) -> Option<f64> + Send + Sync>;

/// An evaluable rule `(x, t) -> real`.
#[derive(Clone)]
pub enum Predictor {
    /// Per-treatment constant: the mean outcome over `J_t`.
    RctConstant { means: BTreeMap<TreatmentId, f64> },
    /// Cell-mean table over exact covariate values.
    ExactMatching {
        table: BTreeMap<(CovariateValue, TreatmentId), f64>,
    },
    /// Cell-mean table over partition cells.
    CoarsenedMatching {
        partition: CovariatePartition,
        table: BTreeMap<(usize, TreatmentId), f64>,
    },
    /// User-supplied table.
    Tabular {
        label: String,
        table: BTreeMap<(CovariateValue, TreatmentId), f64>,
    },
    /// Opaque model (e.g. a trained ML predictor).
    External { label: String, rule: RuleFn },
}

impl fmt::Debug for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::RctConstant { means } => {
                f.debug_struct("RctConstant").field("means", means).finish()
            }
            Predictor::ExactMatching { table } => f
                .debug_struct("ExactMatching")
                .field("cells", &table.len())
                .finish(),
            Predictor::CoarsenedMatching { table, .. } => f
                .debug_struct("CoarsenedMatching")
                .field("cells", &table.len())
                .finish(),
            Predictor::Tabular { label, table } => f
                .debug_struct("Tabular")
                .field("label", label)
                .field("cells", &table.len())
                .finish(),
            Predictor::External { label, .. } => {
                f.debug_struct("External").field("label", label).finish()
            }
        }
    }
}

impl Predictor {
    /// The degenerate average-outcome predictor `p(x, t) = mean_{J_t} y`.
    pub fn rct(data: &ObservedDataset) -> Result<Self> {
        let mut acc: BTreeMap<TreatmentId, crate::numeric::Accumulator> = BTreeMap::new();
        for row in data.rows() {
            acc.entry(row.t).or_default().add(row.y);
        }
        let means: BTreeMap<_, _> = acc
            .into_iter()
            .filter_map(|(t, a)| a.mean().map(|m| (t, m)))
            .collect();
        if means.is_empty() {
            return Err(Error::EmptyGroup("observed dataset J".into()));
        }
        Ok(Predictor::RctConstant { means })
    }

    /// Point-wise average predictor `p(x, t) = mean_{J_t^x} y`.
    ///
    /// Errors if `J_t^x` is empty for an observed `x` and a requested `t`.
    pub fn exact_matching(data: &ObservedDataset, treatments: &[TreatmentId]) -> Result<Self> {
        let groups = observed_groups(data, Grouping::Exact)?;
        let mut table = BTreeMap::new();
        for &t in treatments {
            data.treatments().check(t)?;
            for (key, g) in &groups.groups {
                let GroupKey::Value(x) = key else {
                    unreachable!()
                };
                let mean = g.treated_mean(t).ok_or_else(|| Error::SupportViolation {
                    group: key.to_string(),
                    treatment: t,
                })?;
                table.insert((x.clone(), t), mean);
            }
        }
        Ok(Predictor::ExactMatching { table })
    }

    /// Coarsened predictor `p(x, t) = mean_{J_t^{U(x)}} y`.
    pub fn coarsened_matching(
        data: &ObservedDataset,
        partition: &CovariatePartition,
        treatments: &[TreatmentId],
    ) -> Result<Self> {
        let groups = observed_groups(data, Grouping::Cells(partition))?;
        let mut table = BTreeMap::new();
        for &t in treatments {
            data.treatments().check(t)?;
            for (key, g) in &groups.groups {
                let GroupKey::Cell { index, .. } = key else {
                    unreachable!()
                };
                let mean = g.treated_mean(t).ok_or_else(|| Error::SupportViolation {
                    group: key.to_string(),
                    treatment: t,
                })?;
                table.insert((*index, t), mean);
            }
        }
        Ok(Predictor::CoarsenedMatching {
            partition: partition.clone(),
            table,
        })
    }

    /// Exact future cell means `mu_t^x(y)`; oracle mode only.
    pub fn future_cell_means(future: &FuturePopulation) -> Result<Self> {
        future.require_oracle("future cell means unobservable without ground truth")?;
        let groups = future_groups(future, Grouping::Exact)?;
        let mut table = BTreeMap::new();
        for (key, g) in groups.groups {
            let GroupKey::Value(x) = key else {
                unreachable!()
            };
            for t in future.treatments().iter() {
                if let Some(m) = g.mean_outcome(t) {
                    table.insert((x.clone(), t), m);
                }
            }
        }
        Ok(Predictor::Tabular {
            label: "future_cell_means".into(),
            table,
        })
    }

    pub fn from_table(
        label: impl Into<String>,
        table: BTreeMap<(CovariateValue, TreatmentId), f64>,
    ) -> Self {
        Predictor::Tabular {
            label: label.into(),
            table,
        }
    }

    pub fn from_fn(
        label: impl Into<String>,
        rule: impl Fn(&CovariateValue, TreatmentId) -> Option<f64> + Send + Sync + 'static,
    ) -> Self {
        Predictor::External {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_fn(format!("constant({c})"), move |_, _| Some(c))
    }

    pub fn label(&self) -> String {
        match self {
            Predictor::RctConstant { .. } => "rct_constant".into(),
            Predictor::ExactMatching { .. } => "exact_matching".into(),
            Predictor::CoarsenedMatching { .. } => "coarsened_matching".into(),
            Predictor::Tabular { label, .. } | Predictor::External { label, .. } => label.clone(),
        }
    }

    pub fn evaluate(&self, x: &CovariateValue, t: TreatmentId) -> Result<f64> {
        let value = match self {
            Predictor::RctConstant { means } => means.get(&t).copied(),
            Predictor::ExactMatching { table } | Predictor::Tabular { table, .. } => {
                table.get(&(x.clone(), t)).copied()
            }
            Predictor::CoarsenedMatching { partition, table } => {
                let cell = partition.cell_of(x)?;
                table.get(&(cell, t)).copied()
            }
            Predictor::External { rule, .. } => rule(x, t),
        };
        match value {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(Error::PredictorUndefined {
                predictor: self.label(),
                x: x.to_string(),
                t,
            }),
        }
    }
}

/// Nonnegative weight `w(x, t)` for the doubly robust estimator.
#[derive(Clone)]
pub enum WeightFunction {
    Constant(f64),
    Table(BTreeMap<(CovariateValue, TreatmentId), f64>),
    External { label: String, rule: RuleFn },
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            WeightFunction::Table(t) => f.debug_struct("Table").field("cells", &t.len()).finish(),
            WeightFunction::External { label, .. } => {
                f.debug_struct("External").field("label", label).finish()
            }
        }
    }
}

impl WeightFunction {
    pub fn one() -> Self {
        WeightFunction::Constant(1.0)
    }

    pub fn from_fn(
        label: impl Into<String>,
        rule: impl Fn(&CovariateValue, TreatmentId) -> Option<f64> + Send + Sync + 'static,
    ) -> Self {
        WeightFunction::External {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    /// Inverse empirical propensity `|J^x| / |J_t^x|` for treatment `t`.
    pub fn inverse_propensity(data: &ObservedDataset, t: TreatmentId) -> Result<Self> {
        data.treatments().check(t)?;
        let groups = observed_groups(data, Grouping::Exact)?;
        let mut table = BTreeMap::new();
        for (key, g) in groups.groups {
            let GroupKey::Value(x) = key else {
                unreachable!()
            };
            let n_t = g.treated_count(t);
            if n_t > 0 {
                table.insert((x, t), g.count as f64 / n_t as f64);
            }
        }
        Ok(WeightFunction::Table(table))
    }

    /// Composition-correcting weights `(|I^x| / |J_t^x|) * (|J| / |I|)`.
    ///
    /// Defined on every future `x` with `J_t^x` nonempty; needs only the
    /// future covariates, not the oracle.
    pub fn composition_weights(
        data: &ObservedDataset,
        future: &FuturePopulation,
        t: TreatmentId,
    ) -> Result<Self> {
        data.treatments().check(t)?;
        if data.is_empty() || future.is_empty() {
            return Err(Error::EmptyGroup("J or I".into()));
        }
        let observed = observed_groups(data, Grouping::Exact)?;
        let fut = future_groups(future, Grouping::Exact)?;
        let scale = observed.total as f64 / fut.total as f64;
        let mut table = BTreeMap::new();
        for (key, g) in fut.groups {
            let n_t = observed.groups.get(&key).map_or(0, |o| o.treated_count(t));
            if n_t == 0 {
                return Err(Error::SupportViolation {
                    group: key.to_string(),
                    treatment: t,
                });
            }
            let GroupKey::Value(x) = key else {
                unreachable!()
            };
            table.insert((x, t), g.count as f64 / n_t as f64 * scale);
        }
        // Observed values absent from I carry no future mass.
        for key in observed.groups.into_keys() {
            let GroupKey::Value(x) = key else {
                unreachable!()
            };
            table.entry((x, t)).or_insert(0.0);
        }
        Ok(WeightFunction::Table(table))
    }

    pub fn evaluate(&self, x: &CovariateValue, t: TreatmentId) -> Result<f64> {
        let value = match self {
            WeightFunction::Constant(c) => Some(*c),
            WeightFunction::Table(table) => table.get(&(x.clone(), t)).copied(),
            WeightFunction::External { rule, .. } => rule(x, t),
        };
        match value {
            Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(Error::WeightUndefined {
                x: x.to_string(),
                t,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::p8;

    #[test]
    fn matching_predictor_is_cell_mean() {
        let (data, _) = p8();
        let p = Predictor::exact_matching(&data, &[TreatmentId(0), TreatmentId(1)]).unwrap();
        assert_eq!(
            p.evaluate(&CovariateValue::cat("x", "a"), TreatmentId(1))
                .unwrap(),
            10.0
        );
        assert_eq!(
            p.evaluate(&CovariateValue::cat("x", "b"), TreatmentId(0))
                .unwrap(),
            2.0
        );
        assert!(p
            .evaluate(&CovariateValue::cat("x", "c"), TreatmentId(0))
            .is_err());
    }

    #[test]
    fn matching_predictor_requires_support() {
        let (data, _) = p8();
        let without_i2 = data.filtered(|r| r.id != 2);
        let err = Predictor::exact_matching(&without_i2, &[TreatmentId(0)]).unwrap_err();
        assert!(matches!(err, Error::SupportViolation { ref group, .. } if group == "x=a"));
    }

    #[test]
    fn composition_weights_on_p8() {
        let (data, future) = p8();
        let w = WeightFunction::composition_weights(&data, &future, TreatmentId(1)).unwrap();
        assert_eq!(
            w.evaluate(&CovariateValue::cat("x", "a"), TreatmentId(1))
                .unwrap(),
            2.0
        );
    }

    #[test]
    fn negative_weights_are_rejected() {
        let w = WeightFunction::Constant(-1.0);
        assert!(w.evaluate(&CovariateValue::new(), TreatmentId(0)).is_err());
    }
}
