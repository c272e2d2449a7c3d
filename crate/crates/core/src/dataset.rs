//! Column-typed tables of categorical and continuous features plus one target.
//!
//! CSV layout: a header row of `name:kind` cells with kind one of `cat`,
//! `float`, `target_cat`, `target_float`; exactly one target column.
//! Categorical values are stored zero-based in memory and written one-based.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Categorical { codes: Vec<u32>, cardinality: usize },
    Float(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical { codes, .. } => codes.len(),
            Column::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Column::Categorical { .. })
    }

    /// Numeric view: categorical codes as reals.
    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            Column::Categorical { codes, .. } => codes.iter().map(|&c| c as f64).collect(),
            Column::Float(v) => v.clone(),
        }
    }

    pub fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Categorical { codes, cardinality } => Column::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                cardinality: *cardinality,
            },
            Column::Float(v) => Column::Float(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedColumn {
    pub name: String,
    pub column: Column,
}

impl NamedColumn {
    pub fn new(name: impl Into<String>, column: Column) -> Self {
        Self {
            name: name.into(),
            column,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<NamedColumn>,
    target: NamedColumn,
    n_rows: usize,
}

impl Dataset {
    pub fn new(features: Vec<NamedColumn>, target: NamedColumn) -> Result<Self> {
        let n_rows = target.column.len();
        for c in features.iter().chain(std::iter::once(&target)) {
            if c.column.len() != n_rows {
                return Err(Error::Data(format!(
                    "column {} has {} rows, target has {n_rows}",
                    c.name,
                    c.column.len()
                )));
            }
            if let Column::Categorical { codes, cardinality } = &c.column {
                if let Some(row) = codes.iter().position(|&v| v as usize >= *cardinality) {
                    return Err(Error::Data(format!(
                        "column {} row {row}: category {} outside cardinality {cardinality}",
                        c.name, codes[row]
                    )));
                }
            }
        }
        Ok(Self {
            features,
            target,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[NamedColumn] {
        &self.features
    }

    pub fn feature(&self, j: usize) -> &Column {
        &self.features[j].column
    }

    pub fn target(&self) -> &NamedColumn {
        &self.target
    }

    /// Subset of rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self
                .features
                .iter()
                .map(|c| NamedColumn::new(c.name.clone(), c.column.take(rows)))
                .collect(),
            target: NamedColumn::new(self.target.name.clone(), self.target.column.take(rows)),
            n_rows: rows.len(),
        }
    }

    /// Subset of feature columns (zero-based), target kept.
    pub fn select_features(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len());
        for &j in indices {
            let c = self
                .features
                .get(j)
                .ok_or_else(|| Error::Data(format!("feature index {j} out of range ({})", self.features.len())))?;
            features.push(c.clone());
        }
        Ok(Dataset {
            features,
            target: self.target.clone(),
            n_rows: self.n_rows,
        })
    }

    /// Same features with a replacement target column.
    pub fn with_target(&self, target: NamedColumn) -> Result<Dataset> {
        Dataset::new(self.features.clone(), target)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .features
            .iter()
            .map(|c| format!("{}:{}", c.name, kind_name(&c.column, false)))
            .chain(std::iter::once(format!(
                "{}:{}",
                self.target.name,
                kind_name(&self.target.column, true)
            )))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        let cols: Vec<&Column> = self
            .features
            .iter()
            .map(|c| &c.column)
            .chain(std::iter::once(&self.target.column))
            .collect();
        for r in 0..self.n_rows {
            for (i, c) in cols.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match c {
                    Column::Categorical { codes, .. } => write!(out, "{}", codes[r] + 1),
                    Column::Float(v) => write!(out, "{}", v[r]),
                }
                .expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical CSV rendering, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_csv_str(&s, None)
    }

    /// Parses the CSV layout. Categorical cardinalities come from
    /// `cardinalities` when given, otherwise from the largest observed value.
    pub fn from_csv_str(text: &str, cardinalities: Option<&BTreeMap<String, usize>>) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let mut specs = Vec::with_capacity(headers.len());
        for cell in headers.iter() {
            let (name, kind) = cell
                .rsplit_once(':')
                .ok_or_else(|| Error::Schema(format!("header cell {cell:?} is not of the form name:kind")))?;
            let kind = match kind {
                "cat" => (false, true),
                "float" => (false, false),
                "target_cat" => (true, true),
                "target_float" => (true, false),
                other => return Err(Error::Schema(format!("unknown column kind {other:?}"))),
            };
            specs.push((name.to_string(), kind));
        }
        let n_targets = specs.iter().filter(|(_, (t, _))| *t).count();
        if n_targets != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one target column, found {n_targets}"
            )));
        }

        let mut raw: Vec<Vec<f64>> = vec![Vec::new(); specs.len()];
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != specs.len() {
                return Err(Error::Schema(format!(
                    "row {row} has {} cells, header has {}",
                    record.len(),
                    specs.len()
                )));
            }
            for (i, cell) in record.iter().enumerate() {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("row {row}, column {}: cannot parse {cell:?}", specs[i].0)))?;
                raw[i].push(v);
            }
        }

        let mut features = Vec::new();
        let mut target = None;
        for ((name, (is_target, is_cat)), values) in specs.into_iter().zip(raw) {
            let column = if is_cat {
                let mut codes = Vec::with_capacity(values.len());
                for (row, v) in values.iter().enumerate() {
                    if v.fract() != 0.0 || *v < 1.0 || *v > u32::MAX as f64 {
                        return Err(Error::Data(format!(
                            "row {row}, column {name}: categorical value {v} is not a positive integer"
                        )));
                    }
                    codes.push(*v as u32 - 1);
                }
                let observed = codes.iter().max().map_or(0, |&m| m as usize + 1);
                let cardinality = cardinalities.and_then(|c| c.get(&name).copied()).unwrap_or(observed);
                Column::Categorical { codes, cardinality }
            } else {
                Column::Float(values)
            };
            let named = NamedColumn::new(name, column);
            if is_target {
                target = Some(named);
            } else {
                features.push(named);
            }
        }
        Dataset::new(features, target.expect("exactly one target checked above"))
    }

    pub fn cardinalities(&self) -> BTreeMap<String, usize> {
        self.features
            .iter()
            .chain(std::iter::once(&self.target))
            .filter_map(|c| match &c.column {
                Column::Categorical { cardinality, .. } => Some((c.name.clone(), *cardinality)),
                Column::Float(_) => None,
            })
            .collect()
    }
}

fn kind_name(c: &Column, target: bool) -> &'static str {
    match (c, target) {
        (Column::Categorical { .. }, false) => "cat",
        (Column::Float(_), false) => "float",
        (Column::Categorical { .. }, true) => "target_cat",
        (Column::Float(_), true) => "target_float",
    }
}

/// Sidecar written next to a generated CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub experiment: String,
    pub spec: serde_json::Value,
    pub seed: u64,
    /// One-based feature indices that generate the target.
    pub truth: Vec<usize>,
    pub cardinalities: BTreeMap<String, usize>,
    pub dataset_hash: String,
}

impl DatasetMeta {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Zero-based truth indices.
    pub fn truth_zero_based(&self) -> Vec<usize> {
        self.truth.iter().map(|&i| i - 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec![
                NamedColumn::new(
                    "a",
                    Column::Categorical {
                        codes: vec![0, 2, 1],
                        cardinality: 3,
                    },
                ),
                NamedColumn::new("b", Column::Float(vec![0.5, -1.25, 3.0e-7])),
            ],
            NamedColumn::new("y", Column::Float(vec![1.0, 0.0, 1.0])),
        )
        .unwrap()
    }

    #[test]
    fn csv_is_one_based_and_round_trips() {
        let d = small();
        let text = d.to_csv_string();
        assert!(text.starts_with("a:cat,b:float,y:target_float\n1,0.5,1\n3,"));
        let back = Dataset::from_csv_str(&text, None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn missing_target_is_a_schema_error() {
        let err = Dataset::from_csv_str("a:cat,b:float\n1,2\n", None).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn zero_categorical_value_rejected() {
        let err = Dataset::from_csv_str("a:cat,y:target_float\n0,1\n", None).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn codes_outside_cardinality_rejected() {
        let err = Dataset::new(
            vec![NamedColumn::new(
                "a",
                Column::Categorical {
                    codes: vec![0, 5],
                    cardinality: 3,
                },
            )],
            NamedColumn::new("y", Column::Float(vec![0.0, 1.0])),
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn sidecar_cardinality_overrides_observed_max() {
        let mut card = BTreeMap::new();
        card.insert("a".to_string(), 7);
        let d = Dataset::from_csv_str("a:cat,y:target_float\n1,0\n2,1\n", Some(&card)).unwrap();
        assert_eq!(
            d.feature(0),
            &Column::Categorical {
                codes: vec![0, 1],
                cardinality: 7
            }
        );
    }

    #[test]
    fn hash_depends_on_content() {
        let d = small();
        let shuffled = d.take_rows(&[1, 0, 2]);
        assert_eq!(d.content_hash(), small().content_hash());
        assert_ne!(d.content_hash(), shuffled.content_hash());
    }
}
