//! Run configuration: one JSON document with a section per command. Every
//! flag has a field here and flags win over the file.

use std::path::{Path, PathBuf};

use minerva_core::knn::KnnConfig;
use minerva_core::ksg::KsgConfig;
use minerva_core::report::Method;
use minerva_core::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generate: GenerateSection,
    pub select: SelectSection,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Experiment {
    A,
    B,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub experiment: Option<Experiment>,
    pub d: Option<usize>,
    pub m: Option<usize>,
    pub k0: Option<usize>,
    pub k1: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub j: Option<Vec<usize>>,
    pub i: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub name: Option<String>,
}

/// Network shape knobs exposed on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_width: Option<usize>,
    pub n_residual_blocks: Option<usize>,
    pub clamp_bound: Option<f64>,
    pub embed_cap: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub method: Option<Method>,
    pub data: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub train: Option<TrainConfig>,
    pub network: NetworkSection,
    pub ksg: Option<KsgConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub data: Option<PathBuf>,
    /// One-based feature indices.
    pub selected: Option<Vec<usize>>,
    /// Take the selection from a report instead.
    pub selection_report: Option<PathBuf>,
    pub knn: Option<KnnConfig>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Parses `a..b` (inclusive), `a..=b`, or a comma list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range start {a:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range end {b:?}"))?;
        if b < a {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| format!("bad seed {t:?}")))
        .collect()
}

/// Parses a comma list of one-based indices.
pub fn parse_index_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad index {t:?}")))
        .collect()
}

pub fn parse_float_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_forms() {
        assert_eq!(parse_seeds("0..9").unwrap().len(), 10);
        assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_seeds("4, 1").unwrap(), vec![4, 1]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn strict_sections() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"select": {"mehtod": "ksg"}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"select": {"method": "ksg", "ksg": {"k": 7}}}"#).unwrap();
        assert_eq!(c.select.ksg.unwrap().k, 7);
    }
}
