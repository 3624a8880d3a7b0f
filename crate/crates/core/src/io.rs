//! CSV and JSON file formats.
//!
//! Covariates are spread over columns `xc_<field>` (categorical) and
//! `xn_<field>` (numeric); an empty cell means the field is absent.
//!
//! | table       | columns                                             |
//! |-------------|-----------------------------------------------------|
//! | observed    | `id, t, y, [z], x*`                                 |
//! | future      | `id, x*, [y_t<k> ...], [s_z<k> ...]`                |
//! | predictor   | `t, value, x*`                                      |
//! | weights     | `t, weight, x*`                                     |
//! | policy      | `t, x*` or `p_t<k> ..., x*`                         |
//! | composition | `weight, x*`                                        |
//! | panel       | `group, step, y, [id]` with group in `A`, `B`, `C`  |
//!
//! Parse failures carry the 1-based line number of the offending record.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::did::PanelDataset;
use crate::error::{Error, Result};
use crate::partition::CovariatePartition;
use crate::policy::Policy;
use crate::population::{
    ComplianceOracle, CovariateValue, FuturePopulation, FutureUnit, Level, Observation,
    ObservedDataset, OutcomeOracle, TreatmentId, TreatmentSet,
};
use crate::predictor::{Predictor, WeightFunction};

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => parse_error(line, format!("{kind:?}")),
    }
}

struct CovariateColumn {
    index: usize,
    field: String,
    numeric: bool,
}

/// Parsed header: covariate columns plus every other column by name.
struct Header {
    covariates: Vec<CovariateColumn>,
    named: BTreeMap<String, usize>,
}

impl Header {
    fn parse(record: &csv::StringRecord) -> Result<Self> {
        let mut covariates = Vec::new();
        let mut named = BTreeMap::new();
        for (index, name) in record.iter().enumerate() {
            let name = name.trim();
            if name.is_empty() {
                return Err(parse_error(
                    1,
                    format!("column {} has an empty name", index + 1),
                ));
            }
            let covariate = name
                .strip_prefix("xc_")
                .map(|f| (f, false))
                .or_else(|| name.strip_prefix("xn_").map(|f| (f, true)));
            if let Some((field, numeric)) = covariate {
                if field.is_empty()
                    || covariates
                        .iter()
                        .any(|c: &CovariateColumn| c.field == field)
                {
                    return Err(parse_error(
                        1,
                        format!("bad or repeated covariate column `{name}`"),
                    ));
                }
                covariates.push(CovariateColumn {
                    index,
                    field: field.to_string(),
                    numeric,
                });
            } else if named.insert(name.to_string(), index).is_some() {
                return Err(parse_error(1, format!("repeated column `{name}`")));
            }
        }
        Ok(Self { covariates, named })
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.named
            .get(name)
            .copied()
            .ok_or_else(|| parse_error(1, format!("missing required column `{name}`")))
    }

    /// Columns named `<prefix><k>` for integer `k`, sorted by `k`.
    fn indexed(&self, prefix: &str) -> Result<Vec<(u32, usize)>> {
        let mut out = Vec::new();
        for (name, &index) in &self.named {
            if let Some(k) = name.strip_prefix(prefix) {
                let k = k.parse::<u32>().map_err(|_| {
                    parse_error(1, format!("column `{name}` needs an integer suffix"))
                })?;
                out.push((k, index));
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Rejects columns outside `allowed` and the indexed `prefixes`.
    fn only(&self, allowed: &[&str], prefixes: &[&str]) -> Result<()> {
        match self
            .named
            .keys()
            .find(|n| !allowed.contains(&n.as_str()) && !prefixes.iter().any(|p| n.starts_with(p)))
        {
            Some(n) => Err(parse_error(1, format!("unexpected column `{n}`"))),
            None => Ok(()),
        }
    }

    fn covariate(&self, record: &csv::StringRecord, line: u64) -> Result<CovariateValue> {
        let mut x = CovariateValue::new();
        for c in &self.covariates {
            let cell = record.get(c.index).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            x = if c.numeric {
                let v: f64 = field(cell, &format!("xn_{}", c.field), line)?;
                if !v.is_finite() {
                    return Err(parse_error(
                        line,
                        format!("non-finite covariate xn_{}", c.field),
                    ));
                }
                x.with_num(c.field.clone(), v)
            } else {
                x.with_cat(c.field.clone(), cell)
            };
        }
        Ok(x)
    }
}

fn field<T: FromStr>(cell: &str, column: &str, line: u64) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| parse_error(line, format!("cannot parse `{cell}` in column `{column}`")))
}

fn cell(record: &csv::StringRecord, index: usize) -> &str {
    record.get(index).unwrap_or("").trim()
}

/// Reads every record with its line number after validating the header.
fn records<R: Read>(reader: R) -> Result<(Header, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = Header::parse(rdr.headers().map_err(csv_error)?)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record));
    }
    Ok((header, rows))
}

pub fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Reads observed rows. Without an explicit treatment set, the set is the
/// treatments present together with `{0, 1}`.
pub fn read_observed_csv<R: Read>(
    reader: R,
    treatments: Option<TreatmentSet>,
) -> Result<ObservedDataset> {
    let (header, records) = records(reader)?;
    header.only(&["id", "t", "y", "z"], &[])?;
    let (id, t, y) = (
        header.require("id")?,
        header.require("t")?,
        header.require("y")?,
    );
    let z = header.named.get("z").copied();
    let mut rows = Vec::with_capacity(records.len());
    for (line, r) in &records {
        rows.push(Observation {
            id: field(cell(r, id), "id", *line)?,
            x: header.covariate(r, *line)?,
            t: TreatmentId(field(cell(r, t), "t", *line)?),
            y: field(cell(r, y), "y", *line)?,
            z: match z {
                Some(zi) if !cell(r, zi).is_empty() => Some(field(cell(r, zi), "z", *line)?),
                _ => None,
            },
        });
    }
    let treatments = match treatments {
        Some(set) => set,
        None => TreatmentSet::new(rows.iter().map(|r| r.t.0).chain([0, 1]))?,
    };
    ObservedDataset::new(treatments, rows)
}

fn covariate_columns<'a>(xs: impl IntoIterator<Item = &'a CovariateValue>) -> Vec<(String, bool)> {
    let mut kinds: BTreeMap<String, bool> = BTreeMap::new();
    for x in xs {
        for (f, level) in x.fields() {
            let numeric = matches!(level, Level::Num(_));
            *kinds.entry(f.to_string()).or_insert(numeric) |= numeric;
        }
    }
    kinds.into_iter().collect()
}

fn covariate_header(columns: &[(String, bool)]) -> impl Iterator<Item = String> + '_ {
    columns
        .iter()
        .map(|(f, numeric)| format!("{}{f}", if *numeric { "xn_" } else { "xc_" }))
}

fn covariate_cells<'a>(
    columns: &'a [(String, bool)],
    x: &'a CovariateValue,
) -> impl Iterator<Item = String> + 'a {
    columns
        .iter()
        .map(move |(f, _)| x.get(f).map(|l| l.to_string()).unwrap_or_default())
}

pub fn write_observed_csv<W: Write>(data: &ObservedDataset, writer: W) -> Result<()> {
    let columns = covariate_columns(data.rows().iter().map(|r| &r.x));
    let with_z = data.rows().iter().any(|r| r.z.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "t".into(), "y".into()];
    if with_z {
        header.push("z".into());
    }
    header.extend(covariate_header(&columns));
    w.write_record(&header).map_err(csv_error)?;
    for r in data.rows() {
        let mut row = vec![r.id.to_string(), r.t.0.to_string(), r.y.to_string()];
        if with_z {
            row.push(r.z.map(|z| z.to_string()).unwrap_or_default());
        }
        row.extend(covariate_cells(&columns, &r.x));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads future units. `y_t<k>` columns give the outcome oracle and define
/// the treatment set; `s_z<k>` columns give the compliance oracle. Without
/// outcome columns the treatment set is `treatments` (binary by default).
pub fn read_future_csv<R: Read>(
    reader: R,
    treatments: Option<TreatmentSet>,
) -> Result<FuturePopulation> {
    let (header, records) = records(reader)?;
    header.only(&["id"], &["y_t", "s_z"])?;
    let id = header.require("id")?;
    let outcomes = header.indexed("y_t")?;
    let compliance = header.indexed("s_z")?;
    let treatments = if outcomes.is_empty() {
        treatments.unwrap_or_else(TreatmentSet::binary)
    } else {
        let set = TreatmentSet::new(outcomes.iter().map(|(k, _)| *k))?;
        if let Some(given) = treatments {
            if given != set {
                return Err(parse_error(
                    1,
                    "outcome columns do not match the declared treatments",
                ));
            }
        }
        set
    };
    let mut units = Vec::with_capacity(records.len());
    let mut oracle = Vec::new();
    let mut taken = Vec::new();
    for (line, r) in &records {
        let uid: u64 = field(cell(r, id), "id", *line)?;
        units.push(FutureUnit {
            id: uid,
            x: header.covariate(r, *line)?,
        });
        for &(k, i) in &outcomes {
            oracle.push((
                uid,
                TreatmentId(k),
                field(cell(r, i), &format!("y_t{k}"), *line)?,
            ));
        }
        for &(k, i) in &compliance {
            taken.push((
                uid,
                k,
                TreatmentId(field(cell(r, i), &format!("s_z{k}"), *line)?),
            ));
        }
    }
    FuturePopulation::new(
        treatments,
        units,
        (!outcomes.is_empty()).then(|| OutcomeOracle::from_entries(oracle)),
        (!compliance.is_empty()).then(|| ComplianceOracle::from_entries(taken)),
    )
}

pub fn write_future_csv<W: Write>(future: &FuturePopulation, writer: W) -> Result<()> {
    let columns = covariate_columns(future.units().iter().map(|u| &u.x));
    let treatments: Vec<TreatmentId> = match future.oracle() {
        Some(_) => future.treatments().iter().collect(),
        None => vec![],
    };
    let instruments: Vec<u32> = future
        .compliance()
        .map(|c| {
            c.instruments()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(covariate_header(&columns));
    header.extend(treatments.iter().map(|t| format!("y_t{t}")));
    header.extend(instruments.iter().map(|z| format!("s_z{z}")));
    w.write_record(&header).map_err(csv_error)?;
    for u in future.units() {
        let mut row = vec![u.id.to_string()];
        row.extend(covariate_cells(&columns, &u.x));
        for &t in &treatments {
            row.push(future.outcome(u.id, t)?.to_string());
        }
        for &z in &instruments {
            row.push(future.taken(u.id, z)?.0.to_string());
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `(x, t) -> value` table; `value_column` is `value` or `weight`.
fn read_cell_table<R: Read>(
    reader: R,
    value_column: &str,
) -> Result<BTreeMap<(CovariateValue, TreatmentId), f64>> {
    let (header, records) = records(reader)?;
    header.only(&["t", value_column], &[])?;
    let (t, v) = (header.require("t")?, header.require(value_column)?);
    let mut table = BTreeMap::new();
    for (line, r) in &records {
        let key = (
            header.covariate(r, *line)?,
            TreatmentId(field(cell(r, t), "t", *line)?),
        );
        let value: f64 = field(cell(r, v), value_column, *line)?;
        if !value.is_finite() {
            return Err(parse_error(*line, format!("non-finite {value_column}")));
        }
        if table.insert(key, value).is_some() {
            return Err(parse_error(*line, "repeated (x, t) entry"));
        }
    }
    Ok(table)
}

pub fn read_predictor_csv<R: Read>(reader: R, label: &str) -> Result<Predictor> {
    Ok(Predictor::from_table(
        label,
        read_cell_table(reader, "value")?,
    ))
}

pub fn read_weights_csv<R: Read>(reader: R) -> Result<WeightFunction> {
    let table = read_cell_table(reader, "weight")?;
    if let Some(((x, t), w)) = table.iter().find(|(_, w)| **w < 0.0) {
        return Err(Error::Invalid(format!(
            "negative weight {w} at ({x}, t={t})"
        )));
    }
    Ok(WeightFunction::Table(table))
}

/// A deterministic table (column `t`) or stochastic policy (`p_t<k>` columns).
pub fn read_policy_csv<R: Read>(reader: R) -> Result<Policy> {
    let (header, records) = records(reader)?;
    header.only(&["t"], &["p_t"])?;
    let probability_columns = header.indexed("p_t")?;
    match (
        header.named.get("t").copied(),
        probability_columns.is_empty(),
    ) {
        (Some(t), true) => {
            let mut assignments = BTreeMap::new();
            for (line, r) in &records {
                let x = header.covariate(r, *line)?;
                if assignments
                    .insert(x, TreatmentId(field(cell(r, t), "t", *line)?))
                    .is_some()
                {
                    return Err(parse_error(*line, "repeated covariate value"));
                }
            }
            Ok(Policy::Table {
                assignments,
                default: None,
            })
        }
        (None, false) => {
            let mut probabilities = BTreeMap::new();
            for (line, r) in &records {
                let x = header.covariate(r, *line)?;
                let mut vector = BTreeMap::new();
                for &(k, i) in &probability_columns {
                    vector.insert(
                        TreatmentId(k),
                        field(cell(r, i), &format!("p_t{k}"), *line)?,
                    );
                }
                if probabilities.insert(x, vector).is_some() {
                    return Err(parse_error(*line, "repeated covariate value"));
                }
            }
            Ok(Policy::Stochastic {
                probabilities,
                default: None,
            })
        }
        _ => Err(parse_error(
            1,
            "a policy needs either a `t` column or `p_t<k>` columns",
        )),
    }
}

pub fn read_composition_csv<R: Read>(reader: R) -> Result<BTreeMap<CovariateValue, f64>> {
    let (header, records) = records(reader)?;
    header.only(&["weight"], &[])?;
    let w = header.require("weight")?;
    let mut out = BTreeMap::new();
    for (line, r) in &records {
        let weight: f64 = field(cell(r, w), "weight", *line)?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(parse_error(
                *line,
                format!("weight {weight} must be nonnegative"),
            ));
        }
        if out.insert(header.covariate(r, *line)?, weight).is_some() {
            return Err(parse_error(*line, "repeated covariate value"));
        }
    }
    Ok(out)
}

/// Long-format panel. Step-1 rows of group C only contribute their `id`.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<PanelDataset> {
    let (header, records) = records(reader)?;
    header.only(&["group", "step", "y", "id"], &[])?;
    let (g, s, y) = (
        header.require("group")?,
        header.require("step")?,
        header.require("y")?,
    );
    let id = header.named.get("id").copied();
    let mut panel = PanelDataset {
        a_step0: vec![],
        a_step1_treated: vec![],
        b_step0: vec![],
        b_step1_control: vec![],
        c_step0: vec![],
        c_step1_units: vec![],
    };
    for (line, r) in &records {
        let step: u8 = field(cell(r, s), "step", *line)?;
        if step > 1 {
            return Err(parse_error(*line, format!("step {step} is not 0 or 1")));
        }
        let group = cell(r, g);
        if (group, step) == ("C", 1) {
            let i =
                id.ok_or_else(|| parse_error(*line, "group C step 1 rows need an `id` column"))?;
            panel.c_step1_units.push(field(cell(r, i), "id", *line)?);
            continue;
        }
        let value: f64 = field(cell(r, y), "y", *line)?;
        let target = match (group, step) {
            ("A", 0) => &mut panel.a_step0,
            ("A", 1) => &mut panel.a_step1_treated,
            ("B", 0) => &mut panel.b_step0,
            ("B", 1) => &mut panel.b_step1_control,
            ("C", 0) => &mut panel.c_step0,
            _ => return Err(parse_error(*line, format!("unknown group `{group}`"))),
        };
        target.push(value);
    }
    Ok(panel)
}

/// Partition as JSON: `{"cells": [{"name": .., "kind": "levels" | "range" | "values", ..}]}`.
pub fn read_partition_json(text: &str) -> Result<CovariatePartition> {
    let parsed: CovariatePartition =
        serde_json::from_str(text).map_err(|e| parse_error(e.line() as u64, e.to_string()))?;
    CovariatePartition::new(parsed.cells().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn observed_round_trip() {
        let (data, _) = fixtures::p8();
        let mut buf = Vec::new();
        write_observed_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,t,y,xc_x\n"), "{text}");
        let back = read_observed_csv(text.as_bytes(), None).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn future_round_trip_keeps_oracles() {
        let (_, future) = fixtures::p8();
        let mut buf = Vec::new();
        write_future_csv(&future, &mut buf).unwrap();
        let back = read_future_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back.apo(TreatmentId(1)).unwrap(), 7.0);
        assert_eq!(back, future);
    }

    #[test]
    fn numeric_covariates_and_instrument() {
        let text = "id,t,y,z,xn_age,xc_g\n1,1,2.5,0,30.5,m\n2,0,1,1,,f\n";
        let data = read_observed_csv(text.as_bytes(), None).unwrap();
        assert_eq!(data.rows()[0].x.get("age").unwrap().as_num(), Some(30.5));
        assert!(data.rows()[1].x.get("age").is_none());
        assert_eq!(data.rows()[1].z, Some(1));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = read_observed_csv("id,t,y\n1,1,2\n2,1,oops\n".as_bytes(), None).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 3, .. }), "{bad}");
        let header = read_observed_csv("id,treatment,y\n".as_bytes(), None).unwrap_err();
        assert!(matches!(header, Error::Parse { line: 1, .. }), "{header}");
        let ragged = read_observed_csv("id,t,y\n1,1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(ragged, Error::Parse { line: 2, .. }), "{ragged}");
    }

    #[test]
    fn tables_policies_and_panels() {
        let p = read_predictor_csv("t,value,xc_x\n1,10,a\n0,6,a\n".as_bytes(), "tab").unwrap();
        assert_eq!(
            p.evaluate(&CovariateValue::cat("x", "a"), TreatmentId(0))
                .unwrap(),
            6.0
        );
        assert!(read_weights_csv("t,weight,xc_x\n1,-1,a\n".as_bytes()).is_err());
        let det = read_policy_csv("t,xc_x\n1,a\n0,b\n".as_bytes()).unwrap();
        assert_eq!(
            det.assign(&CovariateValue::cat("x", "b")).unwrap(),
            TreatmentId(0)
        );
        let sto = read_policy_csv("p_t0,p_t1,xc_x\n0.5,0.5,a\n".as_bytes()).unwrap();
        assert!(!sto.is_deterministic());
        let panel = read_panel_csv("group,step,y,id\nA,0,4,1\nA,0,6,2\nA,1,9,1\nB,0,3,3\nB,1,2,3\nB,1,6,4\nC,0,6,5\nC,1,,5\n".as_bytes()).unwrap();
        assert_eq!(panel.c_step1_units, vec![5]);
        assert_eq!(crate::did::did_predict(&panel).unwrap().0.estimate, 10.0);
    }

    #[test]
    fn partition_json() {
        let p = read_partition_json(
            r#"{"cells":[{"name":"all","kind":"levels","field":"x","levels":["a","b"]}]}"#,
        )
        .unwrap();
        assert_eq!(p.len(), 1);
        assert!(read_partition_json("{\"cells\": []}").is_err());
        assert!(matches!(
            read_partition_json("{\n oops").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }
}
