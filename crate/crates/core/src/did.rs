//! Two-step, three-group difference-in-differences.
//!
//! Group C's step-1 mean under `t=1` is predicted from group A's trend and
//! under `t=0` from group B's trend, each added to C's step-0 mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::EstimateReport;
use crate::numeric::mean;
use crate::population::TreatmentId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub a_step0: Vec<f64>,
    /// Group A at step 1, all treated.
    pub a_step1_treated: Vec<f64>,
    pub b_step0: Vec<f64>,
    /// Group B at step 1, all untreated.
    pub b_step1_control: Vec<f64>,
    pub c_step0: Vec<f64>,
    /// Ids of group C's step-1 units; their outcomes are the prediction target.
    #[serde(default)]
    pub c_step1_units: Vec<u64>,
}

impl PanelDataset {
    fn group_mean(values: &[f64], name: &str) -> Result<f64> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite outcome in group {name}"
            )));
        }
        mean(values.iter().copied()).ok_or_else(|| Error::EmptyGroup(format!("group {name}")))
    }

    fn fingerprint(&self) -> String {
        format!(
            "panel:A{}+{}:B{}+{}:C{}",
            self.a_step0.len(),
            self.a_step1_treated.len(),
            self.b_step0.len(),
            self.b_step1_control.len(),
            self.c_step0.len()
        )
    }
}

/// Predicted step-1 mean of group C: `(via A under t=1, via B under t=0)`.
///
/// Means are unit-weighted within each group.
pub fn did_predict(panel: &PanelDataset) -> Result<(EstimateReport, EstimateReport)> {
    let a0 = PanelDataset::group_mean(&panel.a_step0, "A step 0")?;
    let a1 = PanelDataset::group_mean(&panel.a_step1_treated, "A step 1 (t=1)")?;
    let b0 = PanelDataset::group_mean(&panel.b_step0, "B step 0")?;
    let b1 = PanelDataset::group_mean(&panel.b_step1_control, "B step 1 (t=0)")?;
    let c0 = PanelDataset::group_mean(&panel.c_step0, "C step 0")?;
    let report = |method: &str, t: u32, estimate: f64, note: String| EstimateReport {
        method: method.into(),
        treatment: Some(TreatmentId(t)),
        estimate,
        guarantee: None,
        support: None,
        population: panel.fingerprint(),
        notes: vec![note],
    };
    Ok((
        report(
            "did_via_a",
            1,
            a1 - a0 + c0,
            format!("trend of A: {}", a1 - a0),
        ),
        report(
            "did_via_b",
            0,
            b1 - b0 + c0,
            format!("trend of B: {}", b1 - b0),
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64], c0: &[f64]) -> PanelDataset {
        PanelDataset {
            a_step0: a0.to_vec(),
            a_step1_treated: a1.to_vec(),
            b_step0: b0.to_vec(),
            b_step1_control: b1.to_vec(),
            c_step0: c0.to_vec(),
            c_step1_units: vec![],
        }
    }

    #[test]
    fn fixture_predictions() {
        let p = panel(&[4.0, 6.0], &[9.0], &[3.0], &[2.0, 6.0], &[6.0]);
        let (via_a, via_b) = did_predict(&p).unwrap();
        assert_eq!(via_a.estimate, 10.0);
        assert_eq!(via_b.estimate, 7.0);
    }

    #[test]
    fn flat_panels() {
        let m = [2.5];
        let (a, b) = did_predict(&panel(&m, &m, &m, &m, &m)).unwrap();
        assert_eq!((a.estimate, b.estimate), (2.5, 2.5));
        let (a, _) = did_predict(&panel(&[1.0], &[1.0], &[0.0], &[3.0], &[7.0])).unwrap();
        assert_eq!(a.estimate, 7.0);
    }

    #[test]
    fn c_equal_to_a_recovers_a() {
        let a0 = [1.0, 2.0, 4.5];
        let a1 = [3.0, 8.25];
        let (via_a, _) = did_predict(&panel(&a0, &a1, &[0.0], &[0.0], &a0)).unwrap();
        assert!((via_a.estimate - 5.625).abs() < 1e-12);
    }

    #[test]
    fn empty_group_is_named() {
        let err = did_predict(&panel(&[1.0], &[], &[1.0], &[1.0], &[1.0])).unwrap_err();
        assert!(err.to_string().contains("A step 1"), "{err}");
    }
}
