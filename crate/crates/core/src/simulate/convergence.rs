use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, generate, ScenarioSpec};
use crate::error::{Error, Result};
use crate::estimate::{exact_matching_estimate, rct_estimate};
use crate::population::TreatmentId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceMethod {
    Rct,
    ExactMatching,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean_abs_error: f64,
    /// Replications that produced an estimate.
    pub used: usize,
    /// Replications without common support.
    pub skipped: usize,
}

/// Mean absolute APO error of `method` over `replications` scenarios per size.
///
/// Each size sets both `|J|` and `|I|`. Replication `r` at size index `k`
/// uses seed `derive_seed(master_seed, k * replications + r)` with the
/// population seed derived from it.
pub fn convergence_check(
    base: &ScenarioSpec,
    sizes: &[usize],
    replications: usize,
    master_seed: u64,
    method: ConvergenceMethod,
    t: TreatmentId,
) -> Result<Vec<CurvePoint>> {
    if replications == 0 {
        return Err(Error::Invalid("replications must be positive".into()));
    }
    sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let errors: Vec<Option<f64>> = (0..replications)
                .into_par_iter()
                .map(|r| -> Result<Option<f64>> {
                    let mut spec = base.clone();
                    spec.observed_size = size;
                    spec.future_size = size;
                    spec.seed = derive_seed(master_seed, (k * replications + r) as u64);
                    spec.population_seed = None;
                    let s = generate(&spec)?;
                    let estimate = match method {
                        ConvergenceMethod::Rct => rct_estimate(&s.observed, t),
                        ConvergenceMethod::ExactMatching => exact_matching_estimate(&s.observed, t),
                    };
                    match estimate {
                        Ok(e) => Ok(Some((e.estimate - s.truth.apo[&t]).abs())),
                        Err(Error::SupportViolation { .. } | Error::EmptyGroup(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
            let used: Vec<f64> = errors.iter().flatten().copied().collect();
            Ok(CurvePoint {
                size,
                mean_abs_error: if used.is_empty() {
                    f64::NAN
                } else {
                    used.iter().sum::<f64>() / used.len() as f64
                },
                used: used.len(),
                skipped: replications - used.len(),
            })
        })
        .collect()
}
