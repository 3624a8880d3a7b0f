//! Finite-population causal inference with treatment-wise predictors.
//!
//! Observed units `J` and future units `I` are explicit finite sets; every
//! target is an average over `I`. Estimators average a predictor over `J`,
//! auditors report how far the assumptions linking the two populations are
//! from holding, and in oracle mode (simulated populations with a known
//! outcome function) the realised error can be checked against the audited
//! budget.

pub mod audit;
pub mod bounds;
pub mod did;
pub mod error;
pub mod estimate;
pub mod fixtures;
pub mod index;
pub mod io;
pub mod numeric;
pub mod partition;
pub mod policy;
pub mod population;
pub mod predictor;
pub mod regress;
pub mod simulate;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};
pub use partition::{CellRule, CovariatePartition, GroupKey, Grouping, PartitionCell};
pub use population::{
    approx_eq, ComplianceOracle, CovariateValue, FuturePopulation, FutureUnit, Level, Observation,
    ObservedDataset, OutcomeOracle, ToleranceBudget, TreatmentId, TreatmentSet,
};
pub use predictor::{Predictor, WeightFunction};
