//! Finite-population data model.
//!
//! Observed units `J` are triples `(x, t, y)`; future units `I` carry only
//! covariates, plus (in simulation) an outcome oracle `y(i, t)` and an
//! optional compliance oracle `s(i, z)`. Nothing here is a distribution:
//! every quantity is an average over an explicit index set.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{fnv1a, Accumulator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreatmentId(pub u32);

impl fmt::Display for TreatmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Declared finite treatment set with at least two members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TreatmentSet(BTreeSet<TreatmentId>);

impl TreatmentSet {
    pub fn new(ids: impl IntoIterator<Item = u32>) -> Result<Self> {
        let set: BTreeSet<_> = ids.into_iter().map(TreatmentId).collect();
        if set.len() < 2 {
            return Err(Error::Invalid(format!(
                "a treatment set needs at least two treatments, got {}",
                set.len()
            )));
        }
        Ok(Self(set))
    }

    pub fn binary() -> Self {
        Self([TreatmentId(0), TreatmentId(1)].into_iter().collect())
    }

    pub fn contains(&self, t: TreatmentId) -> bool {
        self.0.contains(&t)
    }

    pub fn check(&self, t: TreatmentId) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::UnknownTreatment(t))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TreatmentId> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.0.len() == 2 && self.contains(TreatmentId(0)) && self.contains(TreatmentId(1))
    }
}

impl TryFrom<Vec<u32>> for TreatmentSet {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TreatmentSet> for Vec<u32> {
    fn from(s: TreatmentSet) -> Self {
        s.0.into_iter().map(|t| t.0).collect()
    }
}

/// One covariate component: a categorical level or a finite real.
///
/// Reals compare bitwise so that x-wise grouping is deterministic.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Num(f64),
    Cat(String),
}

impl Level {
    fn rank(&self) -> u8 {
        match self {
            Level::Cat(_) => 0,
            Level::Num(_) => 1,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Level::Num(v) => Some(*v),
            Level::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Level::Cat(s) => Some(s),
            Level::Num(_) => None,
        }
    }
}

impl PartialEq for Level {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Level::Cat(a), Level::Cat(b)) => a == b,
            (Level::Num(a), Level::Num(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Level {}

impl std::hash::Hash for Level {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Level::Cat(s) => {
                0u8.hash(state);
                s.hash(state);
            }
            Level::Num(v) => {
                1u8.hash(state);
                v.to_bits().hash(state);
            }
        }
    }
}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Level::Cat(a), Level::Cat(b)) => a.cmp(b),
            (Level::Num(a), Level::Num(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Cat(s) => f.write_str(s),
            Level::Num(v) => write!(f, "{v}"),
        }
    }
}

/// A unit's representation `x`: named components, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateValue(BTreeMap<String, Level>);

impl CovariateValue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Single categorical component.
    pub fn cat(field: impl Into<String>, level: impl Into<String>) -> Self {
        Self::new().with_cat(field, level)
    }

    /// Single numeric component.
    pub fn num(field: impl Into<String>, value: f64) -> Self {
        Self::new().with_num(field, value)
    }

    pub fn with_cat(mut self, field: impl Into<String>, level: impl Into<String>) -> Self {
        self.0.insert(field.into(), Level::Cat(level.into()));
        self
    }

    pub fn with_num(mut self, field: impl Into<String>, value: f64) -> Self {
        self.0.insert(field.into(), Level::Num(value));
        self
    }

    pub fn get(&self, field: &str) -> Option<&Level> {
        self.0.get(field)
    }

    pub fn fields(&self) -> impl Iterator<Item = (&str, &Level)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("<empty>");
        }
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// One observed datapoint `(x_i, t_i, y_i)`, optionally with the instrument value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: u64,
    pub x: CovariateValue,
    pub t: TreatmentId,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<u32>,
}

/// The observed index set `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedDataset {
    treatments: TreatmentSet,
    rows: Vec<Observation>,
}

impl ObservedDataset {
    /// Validates unique ids, declared treatments and finite outcomes.
    /// Empty datasets are representable (sub-populations can be empty);
    /// estimators reject them.
    pub fn new(treatments: TreatmentSet, rows: Vec<Observation>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(row.id) {
                return Err(Error::Invalid(format!("duplicate unit id {}", row.id)));
            }
            treatments.check(row.t)?;
            if !row.y.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite outcome for unit {}",
                    row.id
                )));
            }
        }
        Ok(Self { treatments, rows })
    }

    pub fn treatments(&self) -> &TreatmentSet {
        &self.treatments
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sub-dataset of the rows satisfying `keep`; same treatment set.
    pub fn filtered(&self, mut keep: impl FnMut(&Observation) -> bool) -> Self {
        Self {
            treatments: self.treatments.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn has_instrument(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.z.is_some())
    }

    /// Stable fingerprint of the unit ids, used to check that two reports
    /// describe the same population.
    pub fn fingerprint(&self) -> String {
        let mut ids: Vec<u64> = self.rows.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        let hash = fnv1a(ids.iter().flat_map(|id| id.to_le_bytes()));
        format!("J{}:{hash:016x}", ids.len())
    }

    pub fn distinct_covariates(&self) -> BTreeSet<CovariateValue> {
        self.rows.iter().map(|r| r.x.clone()).collect()
    }
}

/// Ground-truth outcome function `y(i, t)`; immutable after construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutcomeOracle {
    table: HashMap<(u64, TreatmentId), f64>,
}

impl OutcomeOracle {
    pub fn new(table: HashMap<(u64, TreatmentId), f64>) -> Self {
        Self { table }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u64, TreatmentId, f64)>) -> Self {
        Self {
            table: entries.into_iter().map(|(i, t, y)| ((i, t), y)).collect(),
        }
    }

    pub fn outcome(&self, unit: u64, t: TreatmentId) -> Option<f64> {
        self.table.get(&(unit, t)).copied()
    }
}

/// Instrument-compliance oracle `s(i, z)`: the treatment unit `i` takes under `z`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComplianceOracle {
    instruments: BTreeSet<u32>,
    table: HashMap<(u64, u32), TreatmentId>,
}

impl ComplianceOracle {
    pub fn from_entries(entries: impl IntoIterator<Item = (u64, u32, TreatmentId)>) -> Self {
        let mut instruments = BTreeSet::new();
        let mut table = HashMap::new();
        for (i, z, t) in entries {
            instruments.insert(z);
            table.insert((i, z), t);
        }
        Self { instruments, table }
    }

    pub fn instruments(&self) -> impl Iterator<Item = u32> + '_ {
        self.instruments.iter().copied()
    }

    pub fn taken(&self, unit: u64, z: u32) -> Option<TreatmentId> {
        self.table.get(&(unit, z)).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FutureUnit {
    pub id: u64,
    pub x: CovariateValue,
}

/// The future index set `I`, with oracles in simulation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct FuturePopulation {
    treatments: TreatmentSet,
    units: Vec<FutureUnit>,
    oracle: Option<OutcomeOracle>,
    compliance: Option<ComplianceOracle>,
}

impl FuturePopulation {
    /// Validates unique ids and oracle totality on `units x T` (resp. `units x Z`).
    pub fn new(
        treatments: TreatmentSet,
        units: Vec<FutureUnit>,
        oracle: Option<OutcomeOracle>,
        compliance: Option<ComplianceOracle>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(units.len());
        for u in &units {
            if !seen.insert(u.id) {
                return Err(Error::Invalid(format!("duplicate future unit id {}", u.id)));
            }
        }
        if let Some(oracle) = &oracle {
            for u in &units {
                for t in treatments.iter() {
                    match oracle.outcome(u.id, t) {
                        Some(y) if y.is_finite() => {}
                        Some(_) => {
                            return Err(Error::Invalid(format!(
                                "non-finite oracle outcome for unit {} under t={t}",
                                u.id
                            )))
                        }
                        None => {
                            return Err(Error::Invalid(format!(
                                "outcome oracle is missing unit {} under t={t}",
                                u.id
                            )))
                        }
                    }
                }
            }
        }
        if let Some(compliance) = &compliance {
            for u in &units {
                for z in compliance.instruments() {
                    let t = compliance.taken(u.id, z).ok_or_else(|| {
                        Error::Invalid(format!(
                            "compliance oracle is missing unit {} under z={z}",
                            u.id
                        ))
                    })?;
                    treatments.check(t)?;
                }
            }
        }
        Ok(Self {
            treatments,
            units,
            oracle,
            compliance,
        })
    }

    pub fn treatments(&self) -> &TreatmentSet {
        &self.treatments
    }

    pub fn units(&self) -> &[FutureUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn oracle(&self) -> Option<&OutcomeOracle> {
        self.oracle.as_ref()
    }

    pub fn compliance(&self) -> Option<&ComplianceOracle> {
        self.compliance.as_ref()
    }

    pub fn is_oracle_mode(&self) -> bool {
        self.oracle.is_some()
    }

    /// The same units with both oracles removed (data mode view).
    pub fn without_oracles(&self) -> Self {
        Self {
            treatments: self.treatments.clone(),
            units: self.units.clone(),
            oracle: None,
            compliance: None,
        }
    }

    pub fn filtered(&self, mut keep: impl FnMut(&FutureUnit) -> bool) -> Self {
        Self {
            treatments: self.treatments.clone(),
            units: self.units.iter().filter(|u| keep(u)).cloned().collect(),
            oracle: self.oracle.clone(),
            compliance: self.compliance.clone(),
        }
    }

    pub fn check_disjoint(&self, data: &ObservedDataset) -> Result<()> {
        let observed: HashSet<u64> = data.rows().iter().map(|r| r.id).collect();
        match self.units.iter().find(|u| observed.contains(&u.id)) {
            Some(u) => Err(Error::Invalid(format!(
                "unit id {} appears in both the observed and the future population",
                u.id
            ))),
            None => Ok(()),
        }
    }

    pub fn require_oracle(&self, context: &'static str) -> Result<&OutcomeOracle> {
        self.oracle.as_ref().ok_or(Error::MissingOracle(context))
    }

    pub fn require_compliance(&self) -> Result<&ComplianceOracle> {
        self.compliance.as_ref().ok_or(Error::MissingOracle(
            "compliance is unobservable without an instrument oracle",
        ))
    }

    /// `y(i, t)`; requires the oracle.
    pub fn outcome(&self, unit: u64, t: TreatmentId) -> Result<f64> {
        let oracle = self.require_oracle("outcome unobservable without ground truth")?;
        self.treatments.check(t)?;
        oracle
            .outcome(unit, t)
            .ok_or_else(|| Error::Invalid(format!("no future unit {unit}")))
    }

    /// Average potential outcome `mu_t(y)` over `I`.
    pub fn apo(&self, t: TreatmentId) -> Result<f64> {
        self.treatments.check(t)?;
        let oracle = self.require_oracle("APO unobservable without ground truth")?;
        let acc: Accumulator = self
            .units
            .iter()
            .map(|u| {
                oracle
                    .outcome(u.id, t)
                    .expect("oracle totality checked at construction")
            })
            .collect();
        acc.mean()
            .ok_or_else(|| Error::EmptyGroup("future population I".into()))
    }

    /// `mu_1(y) - mu_0(y)`.
    pub fn ate(&self, treated: TreatmentId, control: TreatmentId) -> Result<f64> {
        Ok(self.apo(treated)? - self.apo(control)?)
    }

    /// `s(i, z)`; requires the compliance oracle.
    pub fn taken(&self, unit: u64, z: u32) -> Result<TreatmentId> {
        self.require_compliance()?
            .taken(unit, z)
            .ok_or_else(|| Error::Invalid(format!("no compliance entry for unit {unit}, z={z}")))
    }

    pub fn distinct_covariates(&self) -> BTreeSet<CovariateValue> {
        self.units.iter().map(|u| u.x.clone()).collect()
    }
}

/// Slack attached to each assumption: `eps` (stable predictions), `delta`
/// (calibration / signed difference) and `gamma` (treatment-average slack).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBudget {
    pub eps: f64,
    pub delta: f64,
    #[serde(default)]
    pub gamma: f64,
}

impl ToleranceBudget {
    pub fn new(eps: f64, delta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("eps", eps), ("delta", delta), ("gamma", gamma)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Invalid(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { eps, delta, gamma })
    }
}

/// `r` and `s` are eps-similar iff `|r - s| < eps` (strict).
pub fn approx_eq(r: f64, s: f64, eps: f64) -> bool {
    debug_assert!(eps >= 0.0, "eps must be nonnegative");
    (r - s).abs() < eps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approx_eq_is_strict() {
        assert!(!approx_eq(1.0, 1.0, 0.0));
        assert!(approx_eq(3.0, 3.4, 0.5));
        assert!(!approx_eq(3.0, 3.5, 0.5));
    }

    #[test]
    fn treatment_set_needs_two() {
        assert!(TreatmentSet::new([1]).is_err());
        assert!(TreatmentSet::new([0, 1, 2]).is_ok());
    }

    #[test]
    fn real_covariates_compare_bitwise() {
        let a = CovariateValue::num("age", 0.1 + 0.2);
        let b = CovariateValue::num("age", 0.3);
        assert_ne!(a, b);
        assert_eq!(a, CovariateValue::num("age", 0.1 + 0.2));
        assert_ne!(
            CovariateValue::num("v", 0.0),
            CovariateValue::num("v", -0.0)
        );
    }

    #[test]
    fn dataset_rejects_duplicates_and_unknown_treatments() {
        let row = |id, t| Observation {
            id,
            x: CovariateValue::cat("x", "a"),
            t: TreatmentId(t),
            y: 1.0,
            z: None,
        };
        assert!(ObservedDataset::new(TreatmentSet::binary(), vec![row(1, 0), row(1, 1)]).is_err());
        assert!(matches!(
            ObservedDataset::new(TreatmentSet::binary(), vec![row(1, 2)]),
            Err(Error::UnknownTreatment(TreatmentId(2)))
        ));
    }

    #[test]
    fn oracle_must_be_total() {
        let units = vec![FutureUnit {
            id: 7,
            x: CovariateValue::cat("x", "a"),
        }];
        let partial = OutcomeOracle::from_entries([(7, TreatmentId(1), 3.0)]);
        assert!(FuturePopulation::new(TreatmentSet::binary(), units, Some(partial), None).is_err());
    }

    #[test]
    fn oracle_reads_are_repeatable() {
        let units = vec![FutureUnit {
            id: 7,
            x: CovariateValue::cat("x", "a"),
        }];
        let oracle =
            OutcomeOracle::from_entries([(7, TreatmentId(1), 3.0), (7, TreatmentId(0), 1.0)]);
        let pop = FuturePopulation::new(TreatmentSet::binary(), units, Some(oracle), None).unwrap();
        let first = pop.outcome(7, TreatmentId(1)).unwrap();
        let _ = pop.outcome(7, TreatmentId(0)).unwrap();
        assert_eq!(
            first.to_bits(),
            pop.outcome(7, TreatmentId(1)).unwrap().to_bits()
        );
        assert!(matches!(
            pop.without_oracles().apo(TreatmentId(1)),
            Err(Error::MissingOracle(_))
        ));
    }
}
