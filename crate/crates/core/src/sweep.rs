//! Replicated oracle checks over a scenario family.
//!
//! Replication `r` regenerates the scenario with `seed = derive_seed(master, r)`
//! and a population seed derived from it. Replications run in parallel;
//! results are assembled in index order, so a summary depends only on the
//! spec, the methods and the master seed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::audit_dominance;
use crate::bounds::{IvDataset, OutcomeBounds};
use crate::error::{Error, Result};
use crate::population::TreatmentId;
use crate::simulate::{derive_seed, generate, Scenario, ScenarioSpec};
use crate::verify::{
    verify_exact_matching, verify_iv_randomized, verify_rct, verify_robins_manski, Verdict,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Rct,
    ExactMatching,
    IvRandomized,
    RobinsManski,
    /// Passes iff group-level dominance holds on the oracle.
    Dominance,
}

impl SweepMethod {
    pub fn name(self) -> &'static str {
        match self {
            SweepMethod::Rct => "rct",
            SweepMethod::ExactMatching => "exact_matching",
            SweepMethod::IvRandomized => "iv_randomized",
            SweepMethod::RobinsManski => "robins_manski",
            SweepMethod::Dominance => "dominance",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [
            SweepMethod::Rct,
            SweepMethod::ExactMatching,
            SweepMethod::IvRandomized,
            SweepMethod::RobinsManski,
            SweepMethod::Dominance,
        ]
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| Error::Invalid(format!("unknown sweep method `{name}`")))
    }

    fn needs_instrument(self) -> bool {
        matches!(
            self,
            SweepMethod::IvRandomized | SweepMethod::RobinsManski | SweepMethod::Dominance
        )
    }
}

/// Outcome of one method on one replication.
#[derive(Clone, Debug)]
enum Run {
    Checked(Vec<Verdict>),
    /// Precondition failure (e.g. no common support) on this draw.
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Verdicts produced (one per treatment for APO methods).
    pub runs: usize,
    pub passes: usize,
    pub failures: usize,
    /// Replications where the method could not run.
    pub skipped: usize,
    pub pass_rate: Option<f64>,
    /// Nearest-rank quantiles of the verdict errors (`p50`, `p90`, `p99`, `max`).
    pub error_quantiles: BTreeMap<String, f64>,
    /// Share of verdicts whose untestable premises held, when checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premises_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub skip_reasons: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub master_seed: u64,
    pub replications: usize,
    pub methods: BTreeMap<String, MethodSummary>,
}

impl SweepSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn all_pass(&self) -> bool {
        self.methods.values().all(|m| m.failures == 0)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn skip_reason(e: &Error) -> String {
    match e {
        Error::SupportViolation { .. } => "no common support".into(),
        Error::EmptyGroup(_) => "empty group".into(),
        other => other.to_string(),
    }
}

fn run_method(method: SweepMethod, s: &Scenario) -> Result<Run> {
    let treatments = [TreatmentId(0), TreatmentId(1)];
    let outcome = match method {
        SweepMethod::Rct => treatments
            .iter()
            .map(|&t| verify_rct(&s.observed, &s.future, t))
            .collect(),
        SweepMethod::ExactMatching => treatments
            .iter()
            .map(|&t| verify_exact_matching(&s.observed, &s.future, t))
            .collect(),
        SweepMethod::IvRandomized => IvDataset::new(s.observed.clone())
            .and_then(|iv| verify_iv_randomized(&iv, &s.future).map(|v| vec![v])),
        SweepMethod::RobinsManski => {
            let bounds = OutcomeBounds::new(s.spec.outcome.k0, s.spec.outcome.k1)?;
            IvDataset::new(s.observed.clone()).and_then(|iv| {
                treatments
                    .iter()
                    .map(|&t| verify_robins_manski(&iv, &s.future, t, bounds))
                    .collect()
            })
        }
        SweepMethod::Dominance => audit_dominance(&s.future).map(|a| {
            let holds = a.holds == Some(true);
            let worst = a
                .cells
                .iter()
                .map(|c| c.value)
                .fold(f64::INFINITY, f64::min);
            vec![Verdict {
                check: "dominance".into(),
                treatment: None,
                estimate: worst,
                upper: None,
                truth: worst,
                error: (-worst).max(0.0),
                eps: 0.0,
                delta: 0.0,
                budget: 0.0,
                pass: holds,
                premises_hold: Some(holds),
                notes: vec![],
            }]
        }),
    };
    match outcome {
        Ok(verdicts) => Ok(Run::Checked(verdicts)),
        Err(e @ (Error::SupportViolation { .. } | Error::EmptyGroup(_))) => {
            Ok(Run::Skipped(skip_reason(&e)))
        }
        Err(e) => Err(e),
    }
}

fn summarize(runs: &[Run]) -> MethodSummary {
    let verdicts: Vec<&Verdict> = runs
        .iter()
        .filter_map(|r| match r {
            Run::Checked(v) => Some(v),
            Run::Skipped(_) => None,
        })
        .flatten()
        .collect();
    let mut skip_reasons = BTreeMap::new();
    for r in runs {
        if let Run::Skipped(reason) = r {
            *skip_reasons.entry(reason.clone()).or_insert(0) += 1;
        }
    }
    let passes = verdicts.iter().filter(|v| v.pass).count();
    let mut errors: Vec<f64> = verdicts.iter().map(|v| v.error).collect();
    errors.sort_by(f64::total_cmp);
    let error_quantiles = if errors.is_empty() {
        BTreeMap::new()
    } else {
        [("p50", 0.5), ("p90", 0.9), ("p99", 0.99), ("max", 1.0)]
            .into_iter()
            .map(|(name, q)| (name.to_string(), quantile(&errors, q)))
            .collect()
    };
    let checked: Vec<bool> = verdicts.iter().filter_map(|v| v.premises_hold).collect();
    MethodSummary {
        runs: verdicts.len(),
        passes,
        failures: verdicts.len() - passes,
        skipped: runs.len() - runs.iter().filter(|r| matches!(r, Run::Checked(_))).count(),
        pass_rate: (!verdicts.is_empty()).then(|| passes as f64 / verdicts.len() as f64),
        error_quantiles,
        premises_rate: (!checked.is_empty())
            .then(|| checked.iter().filter(|h| **h).count() as f64 / checked.len() as f64),
        skip_reasons,
    }
}

pub fn sweep(
    spec: &ScenarioSpec,
    replications: usize,
    methods: &[SweepMethod],
    master_seed: u64,
) -> Result<SweepSummary> {
    spec.validate()?;
    if let Some(m) = methods
        .iter()
        .find(|m| m.needs_instrument() && spec.instrument.is_none())
    {
        return Err(Error::Invalid(format!(
            "method `{}` needs an instrument scheme",
            m.name()
        )));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let per_replication: Vec<Vec<Run>> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Run>> {
            let mut s = spec.clone();
            s.seed = derive_seed(master_seed, r as u64);
            s.population_seed = None;
            let scenario = generate(&s)?;
            methods.iter().map(|&m| run_method(m, &scenario)).collect()
        })
        .collect::<Result<_>>()?;
    let mut summary = SweepSummary {
        master_seed,
        replications,
        methods: BTreeMap::new(),
    };
    if replications == 0 {
        return Ok(summary);
    }
    for (k, m) in methods.iter().enumerate() {
        let runs: Vec<Run> = per_replication.iter().map(|r| r[k].clone()).collect();
        summary
            .methods
            .insert(m.name().to_string(), summarize(&runs));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::ScenarioSpec;

    fn rct_spec() -> ScenarioSpec {
        ScenarioSpec::from_toml(
            r#"
            observed_size = 40
            future_size = 30
            seed = 0
            [covariates]
            levels = ["a", "b", "c"]
            [outcome]
            base = [[1.0, 3.0], [2.0, 2.5], [0.0, 4.0]]
            noise = 0.5
            k0 = -1.0
            k1 = 5.0
            [assignment]
            kind = "rct"
            p_treat = 0.5
            "#,
        )
        .unwrap()
    }

    #[test]
    fn zero_replications_is_empty() {
        let s = sweep(&rct_spec(), 0, &[SweepMethod::Rct], 1).unwrap();
        assert!(s.methods.is_empty());
        assert!(s.all_pass());
    }

    #[test]
    fn rct_sweep_passes_and_is_deterministic() {
        let a = sweep(
            &rct_spec(),
            50,
            &[SweepMethod::Rct, SweepMethod::ExactMatching],
            3,
        )
        .unwrap();
        assert_eq!(a.methods["rct"].pass_rate, Some(1.0));
        assert!(a.all_pass(), "{}", a.to_json());
        let b = sweep(
            &rct_spec(),
            50,
            &[SweepMethod::ExactMatching, SweepMethod::Rct],
            3,
        )
        .unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn instrument_methods_need_a_scheme() {
        assert!(sweep(&rct_spec(), 2, &[SweepMethod::Dominance], 0).is_err());
    }

    #[test]
    fn quantiles_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.9), 4.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
