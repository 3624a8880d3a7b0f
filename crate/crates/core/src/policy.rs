//! Treatment rules and their value on the future population.
//!
//! A deterministic rule splits both populations into level sets
//! `X_t = pi^{-1}(t)`; each level set is estimated with its own treatment by
//! any APO estimator and the results are combined with future weights.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimate::{ApoMethod, EstimateReport};
use crate::numeric::Accumulator;
use crate::population::{
    CovariateValue, FuturePopulation, ObservedDataset, TreatmentId, TreatmentSet,
};
use crate::predictor::Predictor;

/// Tolerance on probability vectors summing to one.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Constant(TreatmentId),
    /// `x -> t`, with an optional fallback for unlisted values.
    Table {
        assignments: BTreeMap<CovariateValue, TreatmentId>,
        default: Option<TreatmentId>,
    },
    /// `x -> probability vector over T`.
    Stochastic {
        probabilities: BTreeMap<CovariateValue, BTreeMap<TreatmentId, f64>>,
        default: Option<BTreeMap<TreatmentId, f64>>,
    },
}

fn check_vector(
    treatments: &TreatmentSet,
    probs: &BTreeMap<TreatmentId, f64>,
    at: &str,
) -> Result<()> {
    let mut total = 0.0;
    for (&t, &p) in probs {
        treatments.check(t)?;
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidPolicy(format!(
                "probability {p} for t={t} at {at}"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::InvalidPolicy(format!(
            "probabilities at {at} sum to {total}, not 1"
        )));
    }
    Ok(())
}

impl Policy {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Policy::Stochastic { .. })
    }

    /// Checks treatments against `T` and probability vectors against the simplex.
    pub fn validate(&self, treatments: &TreatmentSet) -> Result<()> {
        match self {
            Policy::Constant(t) => treatments.check(*t),
            Policy::Table {
                assignments,
                default,
            } => assignments
                .values()
                .chain(default)
                .try_for_each(|&t| treatments.check(t)),
            Policy::Stochastic {
                probabilities,
                default,
            } => {
                for (x, probs) in probabilities {
                    check_vector(treatments, probs, &x.to_string())?;
                }
                if let Some(d) = default {
                    check_vector(treatments, d, "default")?;
                }
                Ok(())
            }
        }
    }

    /// `pi(x)` for a deterministic rule.
    pub fn assign(&self, x: &CovariateValue) -> Result<TreatmentId> {
        match self {
            Policy::Constant(t) => Ok(*t),
            Policy::Table {
                assignments,
                default,
            } => assignments
                .get(x)
                .or(default.as_ref())
                .copied()
                .ok_or_else(|| Error::InvalidPolicy(format!("no treatment assigned at {x}"))),
            Policy::Stochastic { .. } => Err(Error::InvalidPolicy(
                "a stochastic rule has no level sets; use stochastic_policy_value".into(),
            )),
        }
    }

    /// `pi(. | x)`; deterministic rules give a point mass.
    pub fn probabilities(&self, x: &CovariateValue) -> Result<BTreeMap<TreatmentId, f64>> {
        match self {
            Policy::Stochastic {
                probabilities,
                default,
            } => probabilities
                .get(x)
                .or(default.as_ref())
                .cloned()
                .ok_or_else(|| Error::InvalidPolicy(format!("no probabilities given at {x}"))),
            _ => Ok(BTreeMap::from([(self.assign(x)?, 1.0)])),
        }
    }

    /// Average (numeric) treatment the rule assigns over the given covariates.
    pub fn mean_treatment<'a>(
        &self,
        xs: impl IntoIterator<Item = &'a CovariateValue>,
    ) -> Result<f64> {
        let mut acc = Accumulator::new();
        for x in xs {
            let expected: f64 = self
                .probabilities(x)?
                .iter()
                .map(|(t, p)| f64::from(t.0) * p)
                .sum();
            acc.add(expected);
        }
        acc.mean()
            .ok_or_else(|| Error::EmptyGroup("no covariates to average the rule over".into()))
    }
}

/// Future covariate composition used to weight level sets.
#[derive(Clone, Copy, Debug)]
pub enum FutureComposition<'a> {
    /// The future population itself (covariates only are read).
    Population(&'a FuturePopulation),
    /// Nonnegative weights per covariate value; normalised internally.
    Weights(&'a BTreeMap<CovariateValue, f64>),
}

impl FutureComposition<'_> {
    /// Normalised weight per covariate value.
    fn shares(&self) -> Result<BTreeMap<CovariateValue, f64>> {
        let mut raw: BTreeMap<CovariateValue, f64> = BTreeMap::new();
        match self {
            FutureComposition::Population(future) => {
                for u in future.units() {
                    *raw.entry(u.x.clone()).or_default() += 1.0;
                }
            }
            FutureComposition::Weights(w) => {
                for (x, &v) in w.iter() {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::Invalid(format!("composition weight {v} at {x}")));
                    }
                    raw.insert(x.clone(), v);
                }
            }
        }
        let total: f64 = raw.values().sum();
        if total <= 0.0 {
            return Err(Error::EmptyGroup(
                "future composition has zero total weight".into(),
            ));
        }
        Ok(raw.into_iter().map(|(x, v)| (x, v / total)).collect())
    }
}

fn describe_level_set(members: &[&CovariateValue]) -> String {
    let names: Vec<String> = members.iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", names.join("; "))
}

/// Level-set value of a deterministic rule.
///
/// For each `t` the estimator runs on `J^{X_t}` with treatment `t`; results
/// are combined with the future shares of `X_t`. A level set with zero future
/// weight is skipped; one with positive weight but no observed units fails.
pub fn policy_value_estimate(
    policy: &Policy,
    method: &ApoMethod,
    data: &ObservedDataset,
    composition: FutureComposition<'_>,
) -> Result<EstimateReport> {
    policy.validate(data.treatments())?;
    if !policy.is_deterministic() {
        return Err(Error::InvalidPolicy(
            "level-set evaluation needs a deterministic rule".into(),
        ));
    }
    let shares = composition.shares()?;
    let mut combined = Accumulator::new();
    let mut notes = Vec::new();
    for t in data.treatments().iter() {
        let mut members: Vec<&CovariateValue> = Vec::new();
        let mut weight = 0.0;
        for (x, &w) in &shares {
            if policy.assign(x)? == t {
                members.push(x);
                weight += w;
            }
        }
        let mut level_rows = Vec::new();
        for r in data.rows() {
            if policy.assign(&r.x)? == t {
                level_rows.push(r.id);
            }
        }
        if weight == 0.0 {
            continue;
        }
        let wrap = |source: Error| Error::LevelSet {
            treatment: t,
            level_set: describe_level_set(&members),
            source: Box::new(source),
        };
        if level_rows.is_empty() {
            return Err(wrap(Error::EmptyGroup(
                "no observed units in this level set".into(),
            )));
        }
        let sub = data.filtered(|r| policy.assign(&r.x).is_ok_and(|a| a == t));
        let report = method.estimate(&sub, t).map_err(wrap)?;
        notes.push(format!(
            "t={t}: weight {weight}, estimate {}",
            report.estimate
        ));
        combined.add(weight * report.estimate);
    }
    Ok(EstimateReport {
        method: format!("policy_value/{}", method.name()),
        treatment: None,
        estimate: combined.total(),
        guarantee: None,
        support: None,
        population: data.fingerprint(),
        notes,
    })
}

/// `(1/|J|) sum_J sum_t pi(t | x_i) p(x_i, t)`; zero-probability arms are not evaluated.
pub fn stochastic_policy_value(
    p: &Predictor,
    policy: &Policy,
    data: &ObservedDataset,
) -> Result<EstimateReport> {
    policy.validate(data.treatments())?;
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    let mut acc = Accumulator::new();
    for r in data.rows() {
        let mut value = Accumulator::new();
        for (t, prob) in policy.probabilities(&r.x)? {
            if prob > 0.0 {
                value.add(prob * p.evaluate(&r.x, t)?);
            }
        }
        acc.add(value.total());
    }
    Ok(EstimateReport {
        method: "stochastic_policy_value".into(),
        treatment: None,
        estimate: acc.mean().expect("nonempty"),
        guarantee: None,
        support: None,
        population: data.fingerprint(),
        notes: vec![format!("predictor: {}", p.label())],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{exact_matching_estimate, plugin_estimate};
    use crate::fixtures::p8;

    const T0: TreatmentId = TreatmentId(0);
    const T1: TreatmentId = TreatmentId(1);

    fn x(l: &str) -> CovariateValue {
        CovariateValue::cat("x", l)
    }

    fn a1_b0() -> Policy {
        Policy::Table {
            assignments: BTreeMap::from([(x("a"), T1), (x("b"), T0)]),
            default: None,
        }
    }

    #[test]
    fn level_set_value_on_p8() {
        let (data, future) = p8();
        let v = policy_value_estimate(
            &a1_b0(),
            &ApoMethod::ExactMatching,
            &data,
            FutureComposition::Population(&future),
        )
        .unwrap();
        assert_eq!(v.estimate, 6.0);
        let w = BTreeMap::from([(x("a"), 1.0), (x("b"), 1.0)]);
        let v = policy_value_estimate(
            &a1_b0(),
            &ApoMethod::ExactMatching,
            &data,
            FutureComposition::Weights(&w),
        )
        .unwrap();
        assert_eq!(v.estimate, 6.0);
    }

    #[test]
    fn constant_policy_is_single_treatment_estimate() {
        let (data, future) = p8();
        let v = policy_value_estimate(
            &Policy::Constant(T1),
            &ApoMethod::ExactMatching,
            &data,
            FutureComposition::Population(&future),
        )
        .unwrap();
        assert_eq!(
            v.estimate,
            exact_matching_estimate(&data, T1).unwrap().estimate
        );
        assert_eq!(v.estimate, 7.0);
    }

    #[test]
    fn empty_level_set_with_future_weight_fails() {
        let (data, _) = p8();
        let policy = Policy::Table {
            assignments: BTreeMap::from([(x("a"), T1), (x("b"), T0), (x("c"), T1)]),
            default: None,
        };
        let only_a_observed = data.filtered(|r| r.x == x("a"));
        let w = BTreeMap::from([(x("a"), 1.0), (x("b"), 1.0)]);
        let err = policy_value_estimate(
            &policy,
            &ApoMethod::ExactMatching,
            &only_a_observed,
            FutureComposition::Weights(&w),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::LevelSet { treatment: T0, .. }),
            "{err}"
        );

        // Zero future weight on the empty arm: skipped.
        let w = BTreeMap::from([(x("a"), 1.0), (x("b"), 0.0)]);
        let v = policy_value_estimate(
            &policy,
            &ApoMethod::ExactMatching,
            &only_a_observed,
            FutureComposition::Weights(&w),
        )
        .unwrap();
        assert_eq!(v.estimate, 10.0);
    }

    #[test]
    fn stochastic_values() {
        let (data, _) = p8();
        let p = Predictor::exact_matching(&data, &[T0, T1]).unwrap();
        let half = Policy::Stochastic {
            probabilities: BTreeMap::new(),
            default: Some(BTreeMap::from([(T0, 0.5), (T1, 0.5)])),
        };
        assert_eq!(
            stochastic_policy_value(&p, &half, &data).unwrap().estimate,
            5.5
        );

        let point = Policy::Stochastic {
            probabilities: BTreeMap::new(),
            default: Some(BTreeMap::from([(T1, 1.0)])),
        };
        assert_eq!(
            stochastic_policy_value(&p, &point, &data).unwrap().estimate,
            plugin_estimate(&p, &data, T1).unwrap().estimate
        );

        let split = Policy::Stochastic {
            probabilities: BTreeMap::from([
                (x("a"), BTreeMap::from([(T1, 1.0), (T0, 0.0)])),
                (x("b"), BTreeMap::from([(T1, 0.0), (T0, 1.0)])),
            ]),
            default: None,
        };
        assert_eq!(
            stochastic_policy_value(&p, &split, &data).unwrap().estimate,
            6.0
        );
    }

    #[test]
    fn invalid_probability_vectors() {
        let (data, _) = p8();
        let p = Predictor::constant(1.0);
        let bad = Policy::Stochastic {
            probabilities: BTreeMap::new(),
            default: Some(BTreeMap::from([(T0, 0.5), (T1, 0.6)])),
        };
        assert!(matches!(
            stochastic_policy_value(&p, &bad, &data),
            Err(Error::InvalidPolicy(_))
        ));
        let negative = Policy::Stochastic {
            probabilities: BTreeMap::new(),
            default: Some(BTreeMap::from([(T0, -0.5), (T1, 1.5)])),
        };
        assert!(negative.validate(data.treatments()).is_err());
    }
}
