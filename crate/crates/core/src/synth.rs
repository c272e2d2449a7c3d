//! Seeded synthetic benchmarks with known generating feature sets, and the
//! exact mutual-information oracles used to check them.
//!
//! Experiment A: `d` iid uniform categoricals on `m` values and the binary
//! target `Y = 1{X_k0 = X_k1}`. Every single feature is independent of `Y`,
//! while the pair carries `H(Y)` nats.
//!
//! Experiment B: `d1` categoricals and `d2` uniform(0,1) reals; `Y` is a sum
//! of sines of one set of reals when `X_k0 = X_k1` and a sum of cosines of
//! another set otherwise.
//!
//! Feature indices in `ExpASpec` and `ExpBSpec` are one-based, matching the CLI.

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset, NamedColumn};
use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpASpec {
    pub d: usize,
    pub m: usize,
    pub k0: usize,
    pub k1: usize,
    pub n: usize,
    pub seed: u64,
}

impl ExpASpec {
    pub fn validate(&self) -> Result<()> {
        if self.m <= 2 {
            return Err(Error::Spec(format!("m must exceed 2 (got {})", self.m)));
        }
        if !(1 <= self.k0 && self.k0 < self.k1 && self.k1 <= self.d) {
            return Err(Error::Spec(format!(
                "need 1 <= k0 < k1 <= d (got k0={}, k1={}, d={})",
                self.k0, self.k1, self.d
            )));
        }
        if self.n == 0 {
            return Err(Error::Spec("n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpBSpec {
    pub d1: usize,
    pub d2: usize,
    pub m: usize,
    pub k0: usize,
    pub k1: usize,
    /// Features feeding the sine branch, in `(d1, d1 + d2]`.
    pub j_indices: Vec<usize>,
    /// Features feeding the cosine branch, in `(d1, d1 + d2]`.
    pub i_indices: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl ExpBSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Spec(format!("m must be at least 2 (got {})", self.m)));
        }
        if !(1 <= self.k0 && self.k0 < self.k1 && self.k1 <= self.d1) {
            return Err(Error::Spec(format!(
                "need 1 <= k0 < k1 <= d1 (got k0={}, k1={}, d1={})",
                self.k0, self.k1, self.d1
            )));
        }
        if self.alpha.len() != self.j_indices.len() {
            return Err(Error::Spec(format!(
                "alpha has {} coefficients but j_indices has {} entries",
                self.alpha.len(),
                self.j_indices.len()
            )));
        }
        if self.beta.len() != self.i_indices.len() {
            return Err(Error::Spec(format!(
                "beta has {} coefficients but i_indices has {} entries",
                self.beta.len(),
                self.i_indices.len()
            )));
        }
        let lo = self.d1;
        let hi = self.d1 + self.d2;
        for &idx in self.j_indices.iter().chain(&self.i_indices) {
            if idx <= lo || idx > hi {
                return Err(Error::Spec(format!("continuous index {idx} outside ({lo}, {hi}]")));
            }
        }
        if self.n == 0 {
            return Err(Error::Spec("n must be positive".into()));
        }
        Ok(())
    }
}

/// A generated dataset with its zero-based generating feature set.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub truth: Vec<usize>,
}

pub fn gen_experiment_a(spec: &ExpASpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed, streams::DATA);
    let mut codes = vec![Vec::with_capacity(spec.n); spec.d];
    for _ in 0..spec.n {
        for col in codes.iter_mut() {
            col.push(rng.below(spec.m) as u32);
        }
    }
    let (a, b) = (spec.k0 - 1, spec.k1 - 1);
    let y = (0..spec.n)
        .map(|r| if codes[a][r] == codes[b][r] { 1.0 } else { 0.0 })
        .collect();
    let features = codes
        .into_iter()
        .enumerate()
        .map(|(j, codes)| {
            NamedColumn::new(
                format!("x{}", j + 1),
                Column::Categorical {
                    codes,
                    cardinality: spec.m,
                },
            )
        })
        .collect();
    Ok(Synthetic {
        dataset: Dataset::new(features, NamedColumn::new("y", Column::Float(y)))?,
        truth: vec![a, b],
    })
}

pub fn gen_experiment_b(spec: &ExpBSpec) -> Result<Synthetic> {
    spec.validate()?;
    let overlap: Vec<usize> = spec
        .j_indices
        .iter()
        .filter(|j| spec.i_indices.contains(j))
        .copied()
        .collect();
    if !overlap.is_empty() {
        log::warn!("sine and cosine branches share features {overlap:?}");
    }

    let mut rng = SeededRng::new(spec.seed, streams::DATA);
    let mut cats = vec![Vec::with_capacity(spec.n); spec.d1];
    let mut reals = vec![Vec::with_capacity(spec.n); spec.d2];
    for _ in 0..spec.n {
        for col in cats.iter_mut() {
            col.push(rng.below(spec.m) as u32);
        }
        for col in reals.iter_mut() {
            col.push(rng.uniform());
        }
    }

    let real = |idx: usize, r: usize| reals[idx - spec.d1 - 1][r];
    let tau = std::f64::consts::TAU;
    let y: Vec<f64> = (0..spec.n)
        .map(|r| {
            if cats[spec.k0 - 1][r] == cats[spec.k1 - 1][r] {
                spec.j_indices
                    .iter()
                    .zip(&spec.alpha)
                    .map(|(&j, a)| a * (tau * real(j, r)).sin())
                    .sum()
            } else {
                spec.i_indices
                    .iter()
                    .zip(&spec.beta)
                    .map(|(&i, b)| b * (tau * real(i, r)).cos())
                    .sum()
            }
        })
        .collect();

    let mut features: Vec<NamedColumn> = cats
        .into_iter()
        .enumerate()
        .map(|(j, codes)| {
            NamedColumn::new(
                format!("x{}", j + 1),
                Column::Categorical {
                    codes,
                    cardinality: spec.m,
                },
            )
        })
        .collect();
    features.extend(
        reals
            .into_iter()
            .enumerate()
            .map(|(j, v)| NamedColumn::new(format!("x{}", spec.d1 + j + 1), Column::Float(v))),
    );

    let mut truth: Vec<usize> = [spec.k0, spec.k1]
        .iter()
        .chain(&spec.j_indices)
        .chain(&spec.i_indices)
        .map(|&i| i - 1)
        .collect();
    truth.sort_unstable();
    truth.dedup();

    Ok(Synthetic {
        dataset: Dataset::new(features, NamedColumn::new("y", Column::Float(y)))?,
        truth,
    })
}

/// Closed-form `I(X_k0, X_k1; Y)` for Experiment A, in nats.
pub fn lemma1_pair_mi(m: usize) -> Result<f64> {
    if m <= 2 {
        return Err(Error::Spec(format!("m must exceed 2 (got {m})")));
    }
    let m = m as f64;
    Ok((m - 1.0) / m * (m / (m - 1.0)).ln() + m.ln() / m)
}

/// Joint probability table over a finite `(X, Y)`: `rows[x][y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    rows: Vec<Vec<f64>>,
}

impl JointTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Contract("joint table must be a non-empty rectangle".into()));
        }
        if rows.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Contract("joint table has a negative or non-finite cell".into()));
        }
        let total: f64 = rows.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("joint table sums to {total}, not 1")));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Exact `Σ P(x,y) log(P(x,y) / (P(x) P(y)))`, skipping empty cells.
pub fn brute_force_mi(joint: &JointTable) -> f64 {
    let rows = joint.rows();
    let px: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..rows[0].len()).map(|y| rows.iter().map(|r| r[y]).sum()).collect();
    let mut mi = 0.0;
    for (x, row) in rows.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    mi
}

/// Exact joint of `((X_k0, X_k1), Y)` for Experiment A: `m²` rows, two columns.
pub fn experiment_a_pair_joint(m: usize) -> Result<JointTable> {
    let cell = 1.0 / (m * m) as f64;
    let mut rows = Vec::with_capacity(m * m);
    for x1 in 0..m {
        for x2 in 0..m {
            rows.push(if x1 == x2 { vec![0.0, cell] } else { vec![cell, 0.0] });
        }
    }
    JointTable::new(rows)
}

/// Exact joint of `(X_k0, Y)` for Experiment A, marginalising `X_k1`.
pub fn experiment_a_single_joint(m: usize) -> Result<JointTable> {
    let mut rows = vec![vec![0.0; 2]; m];
    for (x1, row) in rows.iter_mut().enumerate() {
        for x2 in 0..m {
            let y = usize::from(x1 == x2);
            row[y] += 1.0 / (m * m) as f64;
        }
    }
    JointTable::new(rows)
}
