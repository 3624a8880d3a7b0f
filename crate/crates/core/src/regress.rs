//! Linear outcome models `y = a.x + beta t + c` and the two-step
//! instrument procedure for predicting the value of a treatment level.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::IvDataset;
use crate::error::{Error, Result};
use crate::estimate::EstimateReport;
use crate::numeric::Accumulator;
use crate::policy::Policy;
use crate::population::{CovariateValue, FuturePopulation, Level, ObservedDataset, TreatmentId};

const INTERCEPT: &str = "(intercept)";
const TREATMENT: &str = "t";

/// How one covariate field becomes design columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldEncoding {
    Numeric {
        field: String,
    },
    /// One-hot with the lexicographically first level dropped.
    OneHot {
        field: String,
        levels: Vec<String>,
    },
}

impl FieldEncoding {
    fn column_names(&self) -> Vec<String> {
        match self {
            FieldEncoding::Numeric { field } => vec![field.clone()],
            FieldEncoding::OneHot { field, levels } => levels
                .iter()
                .skip(1)
                .map(|l| format!("{field}={l}"))
                .collect(),
        }
    }

    fn encode(&self, x: &CovariateValue, out: &mut Vec<f64>) -> Result<()> {
        match self {
            FieldEncoding::Numeric { field } => match x.get(field) {
                Some(Level::Num(v)) => out.push(*v),
                _ => {
                    return Err(Error::Invalid(format!(
                        "covariate {x} has no numeric field `{field}`"
                    )))
                }
            },
            FieldEncoding::OneHot { field, levels } => {
                let level = match x.get(field) {
                    Some(Level::Cat(l)) => l,
                    _ => {
                        return Err(Error::Invalid(format!(
                            "covariate {x} has no categorical field `{field}`"
                        )))
                    }
                };
                if !levels.contains(level) {
                    return Err(Error::Invalid(format!(
                        "level `{level}` of `{field}` was not seen when fitting"
                    )));
                }
                out.extend(
                    levels
                        .iter()
                        .skip(1)
                        .map(|l| f64::from(u8::from(l == level))),
                );
            }
        }
        Ok(())
    }
}

/// Design encoding of the covariates, in field-name order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub fields: Vec<FieldEncoding>,
}

impl Encoding {
    pub fn from_data(data: &ObservedDataset) -> Result<Self> {
        let mut kinds: BTreeMap<&str, (bool, bool, std::collections::BTreeSet<&str>)> =
            BTreeMap::new();
        for r in data.rows() {
            for (field, level) in r.x.fields() {
                let entry = kinds.entry(field).or_default();
                match level {
                    Level::Num(_) => entry.0 = true,
                    Level::Cat(l) => {
                        entry.1 = true;
                        entry.2.insert(l);
                    }
                }
            }
        }
        let mut fields = Vec::with_capacity(kinds.len());
        for (field, (numeric, categorical, levels)) in kinds {
            fields.push(match (numeric, categorical) {
                (true, false) => FieldEncoding::Numeric {
                    field: field.into(),
                },
                (false, true) => FieldEncoding::OneHot {
                    field: field.into(),
                    levels: levels.into_iter().map(String::from).collect(),
                },
                _ => {
                    return Err(Error::Invalid(format!(
                        "covariate field `{field}` mixes numeric and categorical values"
                    )))
                }
            });
        }
        Ok(Self { fields })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.fields
            .iter()
            .flat_map(FieldEncoding::column_names)
            .collect()
    }

    pub fn encode(&self, x: &CovariateValue) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for f in &self.fields {
            f.encode(x, &mut out)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub encoding: Encoding,
    /// Covariate column names, aligned with `a`.
    pub columns: Vec<String>,
    pub a: Vec<f64>,
    pub beta: f64,
    pub c: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &CovariateValue, t: f64) -> Result<f64> {
        let row = self.encoding.encode(x)?;
        let ax: Accumulator = row.iter().zip(&self.a).map(|(v, a)| v * a).collect();
        Ok(ax.total() + self.beta * t + self.c)
    }

    fn check_finite(&self) -> Result<()> {
        if self
            .a
            .iter()
            .chain([&self.beta, &self.c])
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Invalid("non-finite regression coefficient".into()))
        }
    }
}

fn treatment_value(t: TreatmentId) -> f64 {
    f64::from(t.0)
}

/// Names the columns that lie in the span of the columns before them, by
/// modified Gram-Schmidt in the order given.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let original = x.column(j).into_owned();
        let scale = original.norm();
        let mut v = original;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let residual = v.norm();
        if scale == 0.0 || residual <= 1e-10 * scale.max(1.0) {
            dependent.push(name.clone());
        } else {
            basis.push(v / residual);
        }
    }
    dependent
}

/// Least-squares fit of `y ~ a.x + beta t + c` (numeric `t`).
///
/// Rank is checked before solving; the solve uses an SVD, so the result
/// depends only on the rows, not on pivoting.
pub fn fit_linear(data: &ObservedDataset) -> Result<LinearModel> {
    let encoding = Encoding::from_data(data)?;
    let columns = encoding.column_names();
    let k = columns.len();
    let n = data.len();
    // Column order for the rank check: intercept, covariates, treatment, so
    // that a constant treatment is the column reported.
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(columns.iter().cloned());
    names.push(TREATMENT.into());
    let mut design = DMatrix::<f64>::zeros(n, k + 2);
    let mut y = DVector::<f64>::zeros(n);
    for (i, r) in data.rows().iter().enumerate() {
        design[(i, 0)] = 1.0;
        for (j, v) in encoding.encode(&r.x)?.into_iter().enumerate() {
            design[(i, j + 1)] = v;
        }
        design[(i, k + 1)] = treatment_value(r.t);
        y[i] = r.y;
    }
    if n < k + 2 {
        return Err(Error::RankDeficient { columns: names });
    }
    let dependent = collinear_columns(&design, &names);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let svd = design.svd(true, true);
    let coef = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Invalid(format!("least-squares solve failed: {e}")))?;
    let model = LinearModel {
        encoding,
        columns,
        a: (1..=k).map(|j| coef[j]).collect(),
        beta: coef[k + 1],
        c: coef[0],
    };
    model.check_finite()?;
    Ok(model)
}

/// Per-cell fit of a linear model against observed cell means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub a: BTreeMap<String, f64>,
    pub beta: f64,
    pub c: f64,
    pub max_cell_residual: f64,
    pub identification_ok: bool,
    /// Covariance of each covariate column with `t` over `J`.
    pub xt_covariance: BTreeMap<String, f64>,
    pub cells_checked: usize,
}

fn covariances_with_t(
    encoding: &Encoding,
    data: &ObservedDataset,
) -> Result<BTreeMap<String, f64>> {
    let names = encoding.column_names();
    let n = data.len() as f64;
    let t_mean = data
        .rows()
        .iter()
        .map(|r| treatment_value(r.t))
        .collect::<Accumulator>()
        .total()
        / n;
    let rows: Vec<Vec<f64>> = data
        .rows()
        .iter()
        .map(|r| encoding.encode(&r.x))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (j, name) in names.into_iter().enumerate() {
        let x_mean = rows
            .iter()
            .map(|row| row[j])
            .collect::<Accumulator>()
            .total()
            / n;
        let cov = rows
            .iter()
            .zip(data.rows())
            .map(|(row, r)| (row[j] - x_mean) * (treatment_value(r.t) - t_mean))
            .collect::<Accumulator>()
            .total()
            / n;
        out.insert(name, cov);
    }
    Ok(out)
}

/// `max over (x,t) of |mean_{J_t^x} y - (a.x + beta t + c)|`, ok iff `<= tolerance`.
pub fn check_linear_identification(
    model: &LinearModel,
    data: &ObservedDataset,
    tolerance: f64,
) -> Result<RegressionReport> {
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    let mut cells: BTreeMap<(CovariateValue, TreatmentId), Accumulator> = BTreeMap::new();
    for r in data.rows() {
        cells.entry((r.x.clone(), r.t)).or_default().add(r.y);
    }
    let mut worst: f64 = 0.0;
    for ((x, t), acc) in &cells {
        let residual =
            (acc.mean().expect("nonempty") - model.predict(x, treatment_value(*t))?).abs();
        worst = worst.max(residual);
    }
    Ok(RegressionReport {
        a: model
            .columns
            .iter()
            .cloned()
            .zip(model.a.iter().copied())
            .collect(),
        beta: model.beta,
        c: model.c,
        max_cell_residual: worst,
        identification_ok: worst <= tolerance,
        xt_covariance: covariances_with_t(&model.encoding, data)?,
        cells_checked: cells.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvbReport {
    /// `|beta_short - beta_long|`.
    pub difference: f64,
    pub beta_short: f64,
    pub beta_long: f64,
    pub xt_covariance: BTreeMap<String, f64>,
}

/// Compares the treatment coefficient of `y ~ t + c` with that of the long model.
pub fn ovb_consistency_check(
    data: &ObservedDataset,
    long_model: &LinearModel,
) -> Result<OvbReport> {
    if data.is_empty() {
        return Err(Error::EmptyGroup("observed dataset J".into()));
    }
    let n = data.len() as f64;
    let t_mean = data
        .rows()
        .iter()
        .map(|r| treatment_value(r.t))
        .collect::<Accumulator>()
        .total()
        / n;
    let y_mean = data
        .rows()
        .iter()
        .map(|r| r.y)
        .collect::<Accumulator>()
        .total()
        / n;
    let mut sxx = Accumulator::new();
    let mut sxy = Accumulator::new();
    for r in data.rows() {
        let dt = treatment_value(r.t) - t_mean;
        sxx.add(dt * dt);
        sxy.add(dt * (r.y - y_mean));
    }
    if sxx.total() <= 0.0 {
        return Err(Error::RankDeficient {
            columns: vec![TREATMENT.into()],
        });
    }
    let beta_short = sxy.total() / sxx.total();
    Ok(OvbReport {
        difference: (beta_short - long_model.beta).abs(),
        beta_short,
        beta_long: long_model.beta,
        xt_covariance: covariances_with_t(&long_model.encoding, data)?,
    })
}

/// Desired future mean treatment, given directly or through a rule.
#[derive(Clone, Debug)]
pub enum TreatmentTarget {
    Level(f64),
    /// The rule's mean treatment, averaged over the observed covariates.
    Policy(Policy),
}

/// Two-step instrument prediction of the value of a treatment target.
///
/// Step 1 picks the instrument arm whose observed mean treatment is within
/// `gamma` (strictly) of the target; among qualifying arms the nearest wins
/// and exact ties go to the larger `z`. Step 2 returns the arm's mean outcome.
pub fn iv_regression_policy_apo(
    data: &IvDataset,
    target: &TreatmentTarget,
    gamma: f64,
) -> Result<EstimateReport> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Invalid(format!(
            "gamma must be nonnegative, got {gamma}"
        )));
    }
    let target_mean = match target {
        TreatmentTarget::Level(v) => *v,
        TreatmentTarget::Policy(p) => p.mean_treatment(data.data().rows().iter().map(|r| &r.x))?,
    };
    let mut arms = Vec::new();
    for z in [0u32, 1] {
        let arm = data.arm(z);
        let t_mean = arm
            .rows()
            .iter()
            .map(|r| treatment_value(r.t))
            .collect::<Accumulator>()
            .mean()
            .ok_or_else(|| Error::EmptyGroup(format!("instrument arm J_{z}")))?;
        let y_mean = arm
            .rows()
            .iter()
            .map(|r| r.y)
            .collect::<Accumulator>()
            .mean()
            .expect("nonempty");
        arms.push((z, t_mean, y_mean));
    }
    // Nearest first; on equal distance the larger z comes first.
    arms.sort_by(|a, b| {
        (a.1 - target_mean)
            .abs()
            .total_cmp(&(b.1 - target_mean).abs())
            .then(b.0.cmp(&a.0))
    });
    let (z, t_mean, y_mean) = arms[0];
    if (t_mean - target_mean).abs() >= gamma {
        return Err(Error::NoQualifyingInstrument {
            target: target_mean,
            gamma,
            closest: t_mean,
            closest_z: z,
        });
    }
    Ok(EstimateReport {
        method: "iv_regression".into(),
        treatment: None,
        estimate: y_mean,
        guarantee: None,
        support: None,
        population: data.data().fingerprint(),
        notes: vec![
            format!("selected z={z} with mean treatment {t_mean} for target {target_mean}"),
            "ties between equally close arms go to the larger z".into(),
        ],
    })
}

/// Largest gap in mean outcome between pairs of random assignments that
/// treat exactly `treated` units each (equal mean treatment); oracle mode only.
pub fn audit_treatment_linearity(
    future: &FuturePopulation,
    treated: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let oracle =
        future.require_oracle("linearity in treatment unobservable without ground truth")?;
    let (t0, t1) = (TreatmentId(0), TreatmentId(1));
    future.treatments().check(t0)?;
    future.treatments().check(t1)?;
    if treated > future.len() {
        return Err(Error::Invalid(format!(
            "cannot treat {treated} of {} units",
            future.len()
        )));
    }
    if future.is_empty() {
        return Err(Error::EmptyGroup("future population I".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u64> = future.units().iter().map(|u| u.id).collect();
    let value = |order: &[u64]| -> f64 {
        let acc: Accumulator = order
            .iter()
            .enumerate()
            .map(|(k, &id)| {
                oracle
                    .outcome(id, if k < treated { t1 } else { t0 })
                    .expect("total oracle")
            })
            .collect();
        acc.mean().expect("nonempty")
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut a = ids.clone();
        let mut b = ids.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        worst = worst.max((value(&a) - value(&b)).abs());
    }
    Ok(worst)
}
