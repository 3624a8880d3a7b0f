//! Simulated finite populations with a known outcome oracle.
//!
//! A [`ScenarioSpec`] fixes the covariate scheme, per-level outcomes, the
//! treatment mechanism and optional instrument. Randomness is split into
//! independent ChaCha8 streams per component, so changing one knob does not
//! reshuffle the draws of another: `population_seed` drives covariates,
//! outcome noise and compliance types; `seed` drives treatment and
//! instrument assignment.

mod concentration;
mod convergence;
mod panel;

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{
    ComplianceOracle, CovariateValue, FuturePopulation, FutureUnit, Observation, ObservedDataset,
    OutcomeOracle, TreatmentId, TreatmentSet,
};

pub use concentration::random_partition_concentration;
pub use convergence::{convergence_check, ConvergenceMethod, CurvePoint};
pub use panel::{generate_panel, PanelScenario, PanelSpec};

const T0: TreatmentId = TreatmentId(0);
const T1: TreatmentId = TreatmentId(1);

// Stream ids; fixed so that reordering code does not change realised draws.
const STREAM_J_COVARIATES: u64 = 1;
const STREAM_I_COVARIATES: u64 = 2;
const STREAM_J_NOISE: u64 = 3;
const STREAM_I_NOISE: u64 = 4;
const STREAM_J_COMPLIANCE: u64 = 5;
const STREAM_I_COMPLIANCE: u64 = 6;
const STREAM_ASSIGNMENT: u64 = 7;
const STREAM_INSTRUMENT: u64 = 8;

/// Independent generator for one component.
pub fn stream(seed: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(component);
    rng
}

/// Seed of scenario `index` in a sweep with master seed `master`:
/// the splitmix64 finaliser of `master + (index + 1) * 0x9e3779b97f4a7c15`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateScheme {
    #[serde(default = "default_field")]
    pub field: String,
    pub levels: Vec<String>,
    /// Level weights in `J`; uniform when omitted.
    #[serde(default)]
    pub observed_weights: Option<Vec<f64>>,
    /// Level weights in `I`; the observed weights when omitted.
    #[serde(default)]
    pub future_weights: Option<Vec<f64>>,
    /// Allocate levels deterministically in proportion to the weights
    /// instead of sampling them.
    #[serde(default)]
    pub balanced: bool,
}

fn default_field() -> String {
    "x".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeScheme {
    /// `[y0, y1]` per level, aligned with `covariates.levels`.
    pub base: Vec<[f64; 2]>,
    /// Half-width of uniform unit-level noise, drawn independently per `(unit, t)`.
    #[serde(default)]
    pub noise: f64,
    pub k0: f64,
    pub k1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assignment {
    Rct {
        p_treat: f64,
    },
    /// Treatment probability per level.
    Propensity {
        by_level: Vec<f64>,
    },
    /// Treated iff the level is listed.
    Confounded {
        treated_levels: Vec<String>,
    },
}

/// Probability of taking the treatment, as one number or one per level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TakeUp {
    Scalar(f64),
    PerLevel(Vec<f64>),
}

impl TakeUp {
    fn at(&self, level: usize) -> f64 {
        match self {
            TakeUp::Scalar(p) => *p,
            TakeUp::PerLevel(v) => v[level],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            TakeUp::Scalar(p) => vec![*p],
            TakeUp::PerLevel(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentScheme {
    pub p_z1: f64,
    pub take_given_z0: TakeUp,
    pub take_given_z1: TakeUp,
    /// Fraction of units whose compliance is reversed in `z`.
    #[serde(default)]
    pub defiers: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Violations {
    /// Added to `y(i, 1)` of future units at `shift_levels` (all levels if empty).
    #[serde(default)]
    pub outcome_shift: f64,
    #[serde(default)]
    pub shift_levels: Vec<String>,
    /// For future units in `I_01` and `I_10`: `y0 += d`, `y1 -= d`.
    #[serde(default)]
    pub dominance_breaker: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub observed_size: usize,
    pub future_size: usize,
    pub seed: u64,
    /// Seed of the population draws; derived from `seed` when omitted.
    #[serde(default)]
    pub population_seed: Option<u64>,
    pub covariates: CovariateScheme,
    pub outcome: OutcomeScheme,
    pub assignment: Assignment,
    #[serde(default)]
    pub instrument: Option<InstrumentScheme>,
    #[serde(default)]
    pub violations: Violations,
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} = {p} is not a probability")))
    }
}

fn check_weights(name: &str, w: &[f64], levels: usize) -> Result<()> {
    if w.len() != levels {
        return Err(Error::Invalid(format!(
            "{name} has {} entries for {levels} levels",
            w.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Invalid(format!(
            "{name} must be nonnegative with a positive sum"
        )));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn population_seed(&self) -> u64 {
        self.population_seed
            .unwrap_or_else(|| derive_seed(self.seed, u64::MAX))
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed_size == 0 || self.future_size == 0 {
            return Err(Error::Invalid(
                "observed_size and future_size must be at least 1".into(),
            ));
        }
        let levels = self.covariates.levels.len();
        if levels == 0 {
            return Err(Error::Invalid(
                "at least one covariate level is required".into(),
            ));
        }
        let mut sorted = self.covariates.levels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != levels {
            return Err(Error::Invalid("covariate levels must be distinct".into()));
        }
        if let Some(w) = &self.covariates.observed_weights {
            check_weights("observed_weights", w, levels)?;
        }
        if let Some(w) = &self.covariates.future_weights {
            check_weights("future_weights", w, levels)?;
        }
        let o = &self.outcome;
        if !(o.k0.is_finite() && o.k1.is_finite() && o.k0 <= o.k1) {
            return Err(Error::Invalid(format!(
                "outcome range [{}, {}] is not an interval",
                o.k0, o.k1
            )));
        }
        if o.base.len() != levels {
            return Err(Error::Invalid(format!(
                "outcome.base has {} entries for {levels} levels",
                o.base.len()
            )));
        }
        for (level, pair) in self.covariates.levels.iter().zip(&o.base) {
            for y in pair {
                if !(o.k0..=o.k1).contains(y) {
                    return Err(Error::Invalid(format!(
                        "base outcome {y} at level {level} lies outside [{}, {}]",
                        o.k0, o.k1
                    )));
                }
            }
        }
        if !(o.noise.is_finite() && o.noise >= 0.0) {
            return Err(Error::Invalid("outcome.noise must be nonnegative".into()));
        }
        match &self.assignment {
            Assignment::Rct { p_treat } => check_probability("p_treat", *p_treat)?,
            Assignment::Propensity { by_level } => {
                if by_level.len() != levels {
                    return Err(Error::Invalid(
                        "assignment.by_level needs one entry per level".into(),
                    ));
                }
                by_level
                    .iter()
                    .try_for_each(|p| check_probability("propensity", *p))?;
            }
            Assignment::Confounded { treated_levels } => {
                if let Some(l) = treated_levels
                    .iter()
                    .find(|l| !self.covariates.levels.contains(l))
                {
                    return Err(Error::Invalid(format!(
                        "treated level `{l}` is not a covariate level"
                    )));
                }
            }
        }
        if let Some(iv) = &self.instrument {
            check_probability("p_z1", iv.p_z1)?;
            check_probability("defiers", iv.defiers)?;
            for take in [&iv.take_given_z0, &iv.take_given_z1] {
                if let TakeUp::PerLevel(v) = take {
                    if v.len() != levels {
                        return Err(Error::Invalid(
                            "per-level take-up needs one entry per level".into(),
                        ));
                    }
                }
                take.values()
                    .iter()
                    .try_for_each(|p| check_probability("take-up", *p))?;
            }
        }
        let v = &self.violations;
        if !(v.outcome_shift.is_finite()
            && v.dominance_breaker.is_finite()
            && v.dominance_breaker >= 0.0)
        {
            return Err(Error::Invalid(
                "violation knobs must be finite, dominance_breaker nonnegative".into(),
            ));
        }
        if let Some(l) = v
            .shift_levels
            .iter()
            .find(|l| !self.covariates.levels.contains(l))
        {
            return Err(Error::Invalid(format!(
                "shift level `{l}` is not a covariate level"
            )));
        }
        if v.dominance_breaker > 0.0 && self.instrument.is_none() {
            return Err(Error::Invalid(
                "dominance_breaker needs an instrument scheme".into(),
            ));
        }
        Ok(())
    }

    fn observed_weights(&self) -> Vec<f64> {
        self.covariates
            .observed_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.covariates.levels.len()])
    }

    fn future_weights(&self) -> Vec<f64> {
        self.covariates
            .future_weights
            .clone()
            .unwrap_or_else(|| self.observed_weights())
    }

    fn covariate(&self, level: usize) -> CovariateValue {
        CovariateValue::cat(
            self.covariates.field.clone(),
            self.covariates.levels[level].clone(),
        )
    }
}

/// Level index per unit: sampled, or allocated by largest remainder.
fn draw_levels(n: usize, weights: &[f64], balanced: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if balanced {
        let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &k in order.iter().take(missing) {
            counts[k] += 1;
        }
        counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
            .collect()
    } else {
        let dist = WeightedIndex::new(weights).expect("weights validated");
        (0..n).map(|_| dist.sample(rng)).collect()
    }
}

/// Compliance type per unit: the uniform draw `u` and the defier flag.
struct ComplianceType {
    u: f64,
    defier: bool,
}

fn draw_compliance(n: usize, defiers: f64, rng: &mut ChaCha8Rng) -> Vec<ComplianceType> {
    (0..n)
        .map(|_| ComplianceType {
            u: rng.random::<f64>(),
            defier: rng.random::<f64>() < defiers,
        })
        .collect()
}

fn takes(iv: &InstrumentScheme, c: &ComplianceType, level: usize, z: u32) -> TreatmentId {
    let effective = if c.defier { 1 - z } else { z };
    let p = if effective == 1 {
        iv.take_given_z1.at(level)
    } else {
        iv.take_given_z0.at(level)
    };
    TreatmentId(u32::from(c.u < p))
}

/// Ground truth recomputed from the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub apo: BTreeMap<TreatmentId, f64>,
    pub ate: f64,
}

impl GroundTruth {
    pub fn from_future(future: &FuturePopulation) -> Result<Self> {
        let mut apo = BTreeMap::new();
        for t in future.treatments().iter() {
            apo.insert(t, future.apo(t)?);
        }
        let ate = apo[&T1] - apo[&T0];
        Ok(Self { apo, ate })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub observed: ObservedDataset,
    pub future: FuturePopulation,
    pub truth: GroundTruth,
    /// Number of potential outcomes clamped into `[k0, k1]`.
    pub clamped: usize,
}

#[derive(Serialize)]
struct FutureRecord<'a> {
    id: u64,
    x: &'a CovariateValue,
    y: BTreeMap<TreatmentId, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    s: BTreeMap<u32, TreatmentId>,
}

#[derive(Serialize)]
struct ScenarioRecord<'a> {
    spec: &'a ScenarioSpec,
    truth: &'a GroundTruth,
    clamped: usize,
    observed: &'a [Observation],
    future: Vec<FutureRecord<'a>>,
}

impl Scenario {
    /// Full deterministic serialization (spec echo, truth, both populations).
    pub fn to_json(&self) -> String {
        let oracle = self.future.oracle().expect("scenarios carry an oracle");
        let future = self
            .future
            .units()
            .iter()
            .map(|u| FutureRecord {
                id: u.id,
                x: &u.x,
                y: self
                    .future
                    .treatments()
                    .iter()
                    .map(|t| (t, oracle.outcome(u.id, t).expect("total")))
                    .collect(),
                s: self
                    .future
                    .compliance()
                    .map(|c| {
                        c.instruments()
                            .map(|z| (z, c.taken(u.id, z).expect("total")))
                            .collect()
                    })
                    .unwrap_or_default(),
            })
            .collect();
        let record = ScenarioRecord {
            spec: &self.spec,
            truth: &self.truth,
            clamped: self.clamped,
            observed: self.observed.rows(),
            future,
        };
        serde_json::to_string_pretty(&record).expect("serializable")
    }

    /// The truth sidecar: spec echo, ground truth and the clamping count.
    pub fn truth_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "spec": self.spec,
            "truth": self.truth,
            "clamped": self.clamped,
        }))
        .expect("serializable")
    }

    pub fn write_files(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::write_observed_csv(
            &self.observed,
            std::fs::File::create(dir.join("observed.csv"))?,
        )?;
        crate::io::write_future_csv(&self.future, std::fs::File::create(dir.join("future.csv"))?)?;
        std::fs::write(dir.join("truth.json"), self.truth_json())?;
        Ok(())
    }
}

/// Draws a scenario. J has ids `0..|J|`, I has ids `|J|..|J|+|I|`.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let pop_seed = spec.population_seed();
    let (n_j, n_i) = (spec.observed_size, spec.future_size);
    let o = &spec.outcome;
    let mut clamped = 0usize;
    let mut clamp = |y: f64| {
        if y < o.k0 || y > o.k1 {
            clamped += 1;
        }
        y.clamp(o.k0, o.k1)
    };

    let j_levels = draw_levels(
        n_j,
        &spec.observed_weights(),
        spec.covariates.balanced,
        &mut stream(pop_seed, STREAM_J_COVARIATES),
    );
    let i_levels = draw_levels(
        n_i,
        &spec.future_weights(),
        spec.covariates.balanced,
        &mut stream(pop_seed, STREAM_I_COVARIATES),
    );

    let noise = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        (2.0 * u - 1.0) * o.noise
    };
    let mut j_noise = stream(pop_seed, STREAM_J_NOISE);
    let j_potential: Vec<[f64; 2]> = j_levels
        .iter()
        .map(|&l| {
            let (e0, e1) = (noise(&mut j_noise), noise(&mut j_noise));
            [o.base[l][0] + e0, o.base[l][1] + e1]
        })
        .collect();
    let mut i_noise = stream(pop_seed, STREAM_I_NOISE);
    let mut i_potential: Vec<[f64; 2]> = i_levels
        .iter()
        .map(|&l| {
            let (e0, e1) = (noise(&mut i_noise), noise(&mut i_noise));
            [o.base[l][0] + e0, o.base[l][1] + e1]
        })
        .collect();

    let v = &spec.violations;
    if v.outcome_shift != 0.0 {
        for (k, &l) in i_levels.iter().enumerate() {
            if v.shift_levels.is_empty() || v.shift_levels.contains(&spec.covariates.levels[l]) {
                i_potential[k][1] += v.outcome_shift;
            }
        }
    }

    // Treatments (and instrument values) in J.
    let mut j_rows = Vec::with_capacity(n_j);
    let mut compliance_oracle = None;
    let j_treatments: Vec<(TreatmentId, Option<u32>)> = match &spec.instrument {
        None => {
            let mut rng = stream(spec.seed, STREAM_ASSIGNMENT);
            j_levels
                .iter()
                .map(|&l| {
                    let treated = match &spec.assignment {
                        Assignment::Rct { p_treat } => rng.random::<f64>() < *p_treat,
                        Assignment::Propensity { by_level } => rng.random::<f64>() < by_level[l],
                        Assignment::Confounded { treated_levels } => {
                            treated_levels.contains(&spec.covariates.levels[l])
                        }
                    };
                    (TreatmentId(u32::from(treated)), None)
                })
                .collect()
        }
        Some(iv) => {
            let j_types =
                draw_compliance(n_j, iv.defiers, &mut stream(pop_seed, STREAM_J_COMPLIANCE));
            let i_types =
                draw_compliance(n_i, iv.defiers, &mut stream(pop_seed, STREAM_I_COMPLIANCE));
            let mut entries = Vec::with_capacity(2 * n_i);
            for (k, c) in i_types.iter().enumerate() {
                let id = (n_j + k) as u64;
                let s0 = takes(iv, c, i_levels[k], 0);
                let s1 = takes(iv, c, i_levels[k], 1);
                entries.push((id, 0, s0));
                entries.push((id, 1, s1));
                if v.dominance_breaker > 0.0 && (s1 == T0 || s0 == T1) {
                    i_potential[k][0] += v.dominance_breaker;
                    i_potential[k][1] -= v.dominance_breaker;
                }
            }
            compliance_oracle = Some(ComplianceOracle::from_entries(entries));
            let mut rng = stream(spec.seed, STREAM_INSTRUMENT);
            j_types
                .iter()
                .zip(&j_levels)
                .map(|(c, &l)| {
                    let z = u32::from(rng.random::<f64>() < iv.p_z1);
                    (takes(iv, c, l, z), Some(z))
                })
                .collect()
        }
    };
    for (k, (&l, &(t, z))) in j_levels.iter().zip(&j_treatments).enumerate() {
        j_rows.push(Observation {
            id: k as u64,
            x: spec.covariate(l),
            t,
            y: clamp(j_potential[k][t.0 as usize]),
            z,
        });
    }

    let mut oracle_entries = Vec::with_capacity(2 * n_i);
    let mut units = Vec::with_capacity(n_i);
    for (k, &l) in i_levels.iter().enumerate() {
        let id = (n_j + k) as u64;
        units.push(FutureUnit {
            id,
            x: spec.covariate(l),
        });
        oracle_entries.push((id, T0, clamp(i_potential[k][0])));
        oracle_entries.push((id, T1, clamp(i_potential[k][1])));
    }

    let observed = ObservedDataset::new(TreatmentSet::binary(), j_rows)?;
    let future = FuturePopulation::new(
        TreatmentSet::binary(),
        units,
        Some(OutcomeOracle::from_entries(oracle_entries)),
        compliance_oracle,
    )?;
    future.check_disjoint(&observed)?;
    let truth = GroundTruth::from_future(&future)?;
    Ok(Scenario {
        spec: spec.clone(),
        observed,
        future,
        truth,
        clamped,
    })
}

/// Observed instrument data mirroring the future compliance composition:
/// one row per future unit, all assigned instrument `z`, taking `s(i, z)`,
/// with outcome `y(i, s(i,z))` plus fresh uniform noise of half-width
/// `noise`, clamped to `[k0, k1]`. Row ids start at `first_id`.
pub fn instrument_mirror(
    future: &FuturePopulation,
    z: u32,
    noise: f64,
    k0: f64,
    k1: f64,
    first_id: u64,
    seed: u64,
) -> Result<ObservedDataset> {
    let oracle = future.require_oracle("mirror needs the outcome oracle")?;
    let compliance = future.require_compliance()?;
    let mut rng = stream(seed, STREAM_J_NOISE);
    let rows = future
        .units()
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let t = compliance.taken(u.id, z).expect("total compliance");
            let e = (2.0 * rng.random::<f64>() - 1.0) * noise;
            Observation {
                id: first_id + k as u64,
                x: u.x.clone(),
                t,
                y: (oracle.outcome(u.id, t).expect("total") + e).clamp(k0, k1),
                z: Some(z),
            }
        })
        .collect();
    ObservedDataset::new(future.treatments().clone(), rows)
}

/// Future population whose cell `x` consists of `copies[x]` replicas of the
/// treated observed outcomes in `J_t^x`, so that future and observed cell
/// means coincide under `t`. Under the other treatments every unit gets
/// `other`. Ids start at `first_id`.
pub fn future_from_observed_cells(
    data: &ObservedDataset,
    t: TreatmentId,
    copies: &BTreeMap<CovariateValue, usize>,
    other: f64,
    first_id: u64,
) -> Result<FuturePopulation> {
    data.treatments().check(t)?;
    let mut units = Vec::new();
    let mut entries = Vec::new();
    let mut id = first_id;
    for (x, &k) in copies {
        let ys: Vec<f64> = data
            .rows()
            .iter()
            .filter(|r| r.t == t && &r.x == x)
            .map(|r| r.y)
            .collect();
        if ys.is_empty() && k > 0 {
            return Err(Error::SupportViolation {
                group: x.to_string(),
                treatment: t,
            });
        }
        for _ in 0..k {
            for &y in &ys {
                units.push(FutureUnit { id, x: x.clone() });
                for s in data.treatments().iter() {
                    entries.push((id, s, if s == t { y } else { other }));
                }
                id += 1;
            }
        }
    }
    FuturePopulation::new(
        data.treatments().clone(),
        units,
        Some(OutcomeOracle::from_entries(entries)),
        None,
    )
}
