//! Versioned JSON reports and the consolidated results table.
//!
//! Feature indices in reports are one-based. Wall-clock data lives under
//! `metadata`, which [`SelectionReport::content_hash`] leaves out, so a
//! rerun with the same seed hashes identically.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::knn::RegressionMetrics;
use crate::minerva::Classification;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Minerva,
    Ksg,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Minerva => "minerva",
            Method::Ksg => "ksg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub stage: u8,
    pub step: usize,
    pub mi_nats: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub created_unix: u64,
    pub wall_time_seconds: f64,
}

impl RunMetadata {
    pub fn now(wall_time_seconds: f64) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            created_unix,
            wall_time_seconds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub method: Method,
    pub dataset_hash: String,
    pub n_features: usize,
    pub seed: u64,
    pub selected: Vec<usize>,
    /// Final feature weights (minerva).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Per-feature scores (ksg).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default)]
    pub mi_trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_steps: Option<usize>,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub metadata: RunMetadata,
}

fn check_index_set(name: &str, set: &[usize], d: usize) -> Result<()> {
    if set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Schema(format!("{name} must be strictly increasing")));
    }
    if let Some(&i) = set.iter().find(|&&i| i == 0 || i > d) {
        return Err(Error::Schema(format!("{name} index {i} outside 1..={d}")));
    }
    Ok(())
}

impl SelectionReport {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.dataset_hash.len() != 64 || !self.dataset_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Schema("dataset_hash must be 64 hex digits".into()));
        }
        check_index_set("selected", &self.selected, self.n_features)?;
        for (name, v) in [("weights", &self.weights), ("scores", &self.scores)] {
            if let Some(v) = v {
                if v.len() != self.n_features {
                    return Err(Error::Schema(format!(
                        "{name} has {} entries for {} features",
                        v.len(),
                        self.n_features
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Schema(format!("{name} must be finite")));
                }
            }
        }
        if let Some(t) = &self.truth {
            check_index_set("truth", t, self.n_features)?;
            let zero = |s: &[usize]| s.iter().map(|i| i - 1).collect::<Vec<_>>();
            let expected = crate::minerva::classify_selection(&zero(&self.selected), &zero(t));
            if self.classification != Some(expected) {
                return Err(Error::Schema("classification disagrees with truth".into()));
            }
        } else if self.classification.is_some() {
            return Err(Error::Schema("classification without truth".into()));
        }
        if self.mi_trace.iter().any(|t| !t.mi_nats.is_finite()) {
            return Err(Error::Schema("mi_trace must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the report without `metadata`.
    pub fn content_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("metadata");
        }
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        r.validate()?;
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub dataset_hash: String,
    pub selected: Vec<usize>,
    pub n_features: usize,
    pub regressor: String,
    pub metrics: RegressionMetrics,
    pub config: serde_json::Value,
    pub metadata: RunMetadata,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        check_index_set("selected", &self.selected, self.n_features)?;
        let m = &self.metrics;
        if !m.in_sample_r2.is_finite() || !m.out_of_sample_r2.is_finite() {
            return Err(Error::Schema("R² must be finite".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// One line of the consolidated table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub method: Method,
    pub dataset_hash: String,
    pub seed: u64,
    pub n_selected: usize,
    pub selected: String,
    pub classification: String,
    pub final_mi_nats: Option<f64>,
}

/// Collates reports sorted by method name then seed. All reports must describe
/// the same dataset.
pub fn collate(reports: &[SelectionReport]) -> Result<Vec<TableRow>> {
    if reports.is_empty() {
        return Err(Error::Config("no reports".into()));
    }
    let hashes: BTreeSet<&str> = reports.iter().map(|r| r.dataset_hash.as_str()).collect();
    if hashes.len() > 1 {
        return Err(Error::Config(format!(
            "reports come from {} different datasets",
            hashes.len()
        )));
    }
    let mut rows: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow {
            method: r.method,
            dataset_hash: r.dataset_hash.clone(),
            seed: r.seed,
            n_selected: r.selected.len(),
            selected: r.selected.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
            classification: r
                .classification
                .map_or("unknown", |c| match c {
                    Classification::Exact => "exact",
                    Classification::NonExactTypeI => "non_exact_type_i",
                    Classification::NonExactTypeII => "non_exact_type_ii",
                })
                .to_string(),
            final_mi_nats: r.mi_trace.last().map(|t| t.mi_nats),
        })
        .collect();
    rows.sort_by(|a, b| (a.method.as_str(), a.seed).cmp(&(b.method.as_str(), b.seed)));
    Ok(rows)
}

pub fn rows_to_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn rows_to_text(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>6} {:>4}  {:<20} {:>8}  selected",
        "method", "seed", "n", "classification", "mi"
    );
    for r in rows {
        let mi = r.final_mi_nats.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>4}  {:<20} {:>8}  {}",
            r.method.as_str(),
            r.seed,
            r.n_selected,
            r.classification,
            mi,
            r.selected
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: Method, seed: u64, hash: char) -> SelectionReport {
        SelectionReport {
            schema_version: 1,
            method,
            dataset_hash: hash.to_string().repeat(64),
            n_features: 4,
            seed,
            selected: vec![1, 3],
            weights: None,
            scores: None,
            mi_trace: vec![TraceEntry {
                stage: 1,
                step: 0,
                mi_nats: 0.2,
            }],
            truth: Some(vec![1, 3]),
            classification: Some(Classification::Exact),
            stage1_steps: None,
            stage2_steps: None,
            config: serde_json::json!({}),
            metadata: RunMetadata::default(),
        }
    }

    #[test]
    fn validation_catches_bad_reports() {
        report(Method::Minerva, 0, 'a').validate().unwrap();
        let mut r = report(Method::Minerva, 0, 'a');
        r.selected = vec![0];
        assert!(r.validate().is_err());
        let mut r = report(Method::Minerva, 0, 'a');
        r.classification = Some(Classification::NonExactTypeII);
        assert!(r.validate().is_err());
        let mut r = report(Method::Minerva, 0, 'a');
        r.weights = Some(vec![1.0]);
        assert!(r.validate().is_err());
    }

    #[test]
    fn hash_ignores_metadata() {
        let a = report(Method::Ksg, 1, 'b');
        let mut b = a.clone();
        b.metadata.wall_time_seconds = 99.0;
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.seed = 2;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
    }

    #[test]
    fn collation_sorts_and_guards() {
        let rows = collate(&[
            report(Method::Minerva, 2, 'c'),
            report(Method::Ksg, 0, 'c'),
            report(Method::Minerva, 1, 'c'),
        ])
        .unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.method, r.seed)).collect();
        assert_eq!(keys, vec![(Method::Ksg, 0), (Method::Minerva, 1), (Method::Minerva, 2)]);
        assert!(rows_to_csv(&rows).unwrap().starts_with("method,"));
        assert!(matches!(collate(&[]), Err(Error::Config(m)) if m == "no reports"));
        assert!(collate(&[report(Method::Ksg, 0, 'c'), report(Method::Ksg, 1, 'd')]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(report(Method::Ksg, 0, 'e')).unwrap();
        v.as_object_mut().unwrap().insert("extra".into(), serde_json::json!(1));
        assert!(serde_json::from_value::<SelectionReport>(v).is_err());
    }
}
