//! Covariate partitions and the x-wise / cell-wise grouping used by the
//! matching estimators and auditors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{CovariateValue, Level};

/// Membership rule of one partition cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellRule {
    /// Explicit list of covariate values.
    Values { values: Vec<CovariateValue> },
    /// Categorical `field` takes one of `levels`.
    Levels { field: String, levels: Vec<String> },
    /// Numeric `field` lies in `[min, max)`.
    Range { field: String, min: f64, max: f64 },
}

impl CellRule {
    pub fn matches(&self, x: &CovariateValue) -> bool {
        match self {
            CellRule::Values { values } => values.contains(x),
            CellRule::Levels { field, levels } => match x.get(field) {
                Some(Level::Cat(level)) => levels.iter().any(|l| l == level),
                _ => false,
            },
            CellRule::Range { field, min, max } => match x.get(field) {
                Some(Level::Num(v)) => *min <= *v && *v < *max,
                _ => false,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub name: String,
    #[serde(flatten)]
    pub rule: CellRule,
}

/// A partition of the covariate space into named cells.
///
/// Disjointness and exhaustiveness are checked against the values actually
/// present in the data at hand (see [`CovariatePartition::validate`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariatePartition {
    cells: Vec<PartitionCell>,
}

impl CovariatePartition {
    pub fn new(cells: Vec<PartitionCell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Invalid("a partition needs at least one cell".into()));
        }
        let mut names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("partition cell names must be unique".into()));
        }
        Ok(Self { cells })
    }

    /// One cell per listed value.
    pub fn singletons<'a>(values: impl IntoIterator<Item = &'a CovariateValue>) -> Result<Self> {
        Self::new(
            values
                .into_iter()
                .map(|v| PartitionCell {
                    name: v.to_string(),
                    rule: CellRule::Values {
                        values: vec![v.clone()],
                    },
                })
                .collect(),
        )
    }

    /// Everything listed in a single cell.
    pub fn single_cell<'a>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = &'a CovariateValue>,
    ) -> Result<Self> {
        Self::new(vec![PartitionCell {
            name: name.into(),
            rule: CellRule::Values {
                values: values.into_iter().cloned().collect(),
            },
        }])
    }

    /// Groups explicit value lists into named cells.
    pub fn from_groups(groups: Vec<(String, Vec<CovariateValue>)>) -> Result<Self> {
        Self::new(
            groups
                .into_iter()
                .map(|(name, values)| PartitionCell {
                    name,
                    rule: CellRule::Values { values },
                })
                .collect(),
        )
    }

    pub fn cells(&self) -> &[PartitionCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the unique cell containing `x`.
    pub fn cell_of(&self, x: &CovariateValue) -> Result<usize> {
        let mut found = None;
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.rule.matches(x) {
                if found.is_some() {
                    return Err(Error::Partition {
                        value: x.to_string(),
                        problem: "matched by more than one cell",
                    });
                }
                found = Some(i);
            }
        }
        found.ok_or_else(|| Error::Partition {
            value: x.to_string(),
            problem: "not covered by any cell",
        })
    }

    /// Every value must fall in exactly one cell.
    pub fn validate<'a>(&self, values: impl IntoIterator<Item = &'a CovariateValue>) -> Result<()> {
        for v in values {
            self.cell_of(v)?;
        }
        Ok(())
    }
}

/// Group identity: an exact covariate value or a partition cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKey {
    Value(CovariateValue),
    Cell { index: usize, name: String },
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Value(x) => write!(f, "{x}"),
            GroupKey::Cell { name, .. } => f.write_str(name),
        }
    }
}

impl Serialize for GroupKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// How units are grouped: by exact covariate value (`J^x`) or by partition
/// cell (`J^U`).
#[derive(Clone, Copy, Debug, Default)]
pub enum Grouping<'a> {
    #[default]
    Exact,
    Cells(&'a CovariatePartition),
}

impl<'a> Grouping<'a> {
    pub fn from_partition(partition: Option<&'a CovariatePartition>) -> Self {
        partition.map_or(Grouping::Exact, Grouping::Cells)
    }

    pub fn key(&self, x: &CovariateValue) -> Result<GroupKey> {
        match self {
            Grouping::Exact => Ok(GroupKey::Value(x.clone())),
            Grouping::Cells(partition) => {
                let index = partition.cell_of(x)?;
                Ok(GroupKey::Cell {
                    index,
                    name: partition.cells[index].name.clone(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_and_missing_cells_are_rejected() {
        let a = CovariateValue::cat("x", "a");
        let b = CovariateValue::cat("x", "b");
        let c = CovariateValue::cat("x", "c");
        let overlap = CovariatePartition::from_groups(vec![
            ("u1".into(), vec![a.clone(), b.clone()]),
            ("u2".into(), vec![b.clone()]),
        ])
        .unwrap();
        assert!(overlap.validate([&a]).is_ok());
        assert!(overlap.validate([&b]).is_err());
        let partial = CovariatePartition::singletons([&a, &b]).unwrap();
        assert!(partial.validate([&c]).is_err());
    }

    #[test]
    fn range_and_level_rules() {
        let p = CovariatePartition::new(vec![
            PartitionCell {
                name: "young".into(),
                rule: CellRule::Range {
                    field: "age".into(),
                    min: 0.0,
                    max: 40.0,
                },
            },
            PartitionCell {
                name: "old".into(),
                rule: CellRule::Range {
                    field: "age".into(),
                    min: 40.0,
                    max: f64::INFINITY,
                },
            },
        ])
        .unwrap();
        assert_eq!(p.cell_of(&CovariateValue::num("age", 39.9)).unwrap(), 0);
        assert_eq!(p.cell_of(&CovariateValue::num("age", 40.0)).unwrap(), 1);

        let json = r#"{"cells":[{"name":"ab","kind":"levels","field":"x","levels":["a","b"]}]}"#;
        let q: CovariatePartition = serde_json::from_str(json).unwrap();
        assert_eq!(q.cell_of(&CovariateValue::cat("x", "b")).unwrap(), 0);
    }
}
