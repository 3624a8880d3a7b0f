use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stream;
use crate::did::PanelDataset;
use crate::error::{Error, Result};

/// Three-group, two-step panel with a known step-1 truth for group C.
///
/// Step-1 outcomes are `base + trend_t + noise`. Group C's step-1 truth is
/// shifted by `violation` on top of either trend, so the via-A prediction
/// misses the treated truth by exactly `violation`. Noise is centered within
/// each group and step, so group means are unaffected by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub sizes: [usize; 3],
    /// Step-0 level of groups A, B, C.
    pub base: [f64; 3],
    pub trend_treated: f64,
    pub trend_control: f64,
    #[serde(default)]
    pub violation: f64,
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelScenario {
    pub panel: PanelDataset,
    /// True step-1 mean of C under `t = 1`.
    pub truth_treated: f64,
    /// True step-1 mean of C under `t = 0`.
    pub truth_control: f64,
}

fn centered_group(n: usize, level: f64, noise: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * noise)
        .collect();
    let centre = draws.iter().sum::<f64>() / n as f64;
    draws.into_iter().map(|e| level + e - centre).collect()
}

pub fn generate_panel(spec: &PanelSpec) -> Result<PanelScenario> {
    if spec.sizes.contains(&0) {
        return Err(Error::Invalid("panel groups need at least one unit".into()));
    }
    let finite = spec.base.iter().chain([
        &spec.trend_treated,
        &spec.trend_control,
        &spec.violation,
        &spec.noise,
    ]);
    if finite.clone().any(|v| !v.is_finite()) || spec.noise < 0.0 {
        return Err(Error::Invalid(
            "panel parameters must be finite with nonnegative noise".into(),
        ));
    }
    let mut rng = stream(spec.seed, 10);
    let [na, nb, nc] = spec.sizes;
    let [a, b, c] = spec.base;
    let mut draw = |n, level| centered_group(n, level, spec.noise, &mut rng);
    let a_step0 = draw(na, a);
    let a_step1_treated = draw(na, a + spec.trend_treated);
    let b_step0 = draw(nb, b);
    let b_step1_control = draw(nb, b + spec.trend_control);
    let c_step0 = draw(nc, c);
    let c_mean = c_step0.iter().sum::<f64>() / nc as f64;
    let first_c1 = (2 * (na + nb) + nc) as u64;
    Ok(PanelScenario {
        panel: PanelDataset {
            a_step0,
            a_step1_treated,
            b_step0,
            b_step1_control,
            c_step0,
            c_step1_units: (first_c1..first_c1 + nc as u64).collect(),
        },
        truth_treated: c_mean + spec.trend_treated + spec.violation,
        truth_control: c_mean + spec.trend_control + spec.violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::did::did_predict;

    fn spec(violation: f64) -> PanelSpec {
        PanelSpec {
            sizes: [5, 7, 3],
            base: [2.0, 1.0, 4.0],
            trend_treated: 3.0,
            trend_control: -0.5,
            violation,
            noise: 1.0,
            seed: 42,
        }
    }

    #[test]
    fn parallel_trends_recover_truth() {
        let s = generate_panel(&spec(0.0)).unwrap();
        let (a, b) = did_predict(&s.panel).unwrap();
        assert!((a.estimate - s.truth_treated).abs() < 1e-12);
        assert!((b.estimate - s.truth_control).abs() < 1e-12);
    }

    #[test]
    fn violation_shows_up_exactly() {
        let s = generate_panel(&spec(0.75)).unwrap();
        let (a, _) = did_predict(&s.panel).unwrap();
        assert!((s.truth_treated - a.estimate - 0.75).abs() < 1e-12);
    }

    #[test]
    fn singleton_groups() {
        let mut sp = spec(0.0);
        sp.sizes = [1, 1, 1];
        let s = generate_panel(&sp).unwrap();
        assert_eq!(s.panel.a_step0, vec![2.0]);
        assert!(did_predict(&s.panel).is_ok());
    }
}
