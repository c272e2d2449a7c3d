//! Inverse-distance-weighted k-nearest-neighbour regression, used to check
//! that a selected feature subset predicts the target.
//!
//! Features are z-scored with training statistics and compared in the
//! Euclidean norm. In-sample R² is leave-one-out (a point is never its own
//! neighbour), otherwise every training point would be predicted exactly.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 10,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub in_sample_r2: f64,
    pub out_of_sample_r2: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
}

/// `1 − SS_res/SS_tot`, defined as 0 when the target has no variance.
pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.is_empty() {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[derive(Clone, Debug)]
pub struct KnnRegressor {
    k: usize,
    dim: usize,
    /// Standardised training rows, row-major.
    x: Vec<f64>,
    y: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl KnnRegressor {
    /// `columns[j][i]` is feature j of training row i.
    pub fn fit(columns: &[Vec<f64>], y: Vec<f64>, k: usize) -> Result<Self> {
        let n = y.len();
        if k == 0 || n <= k {
            return Err(Error::Config(format!("k-NN needs more than k = {k} rows, got {n}")));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Data("k-NN feature and target lengths differ".into()));
        }
        let dim = columns.len();
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        for c in columns {
            let m = c.iter().sum::<f64>() / n as f64;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            mean.push(m);
            scale.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let mut x = vec![0.0; n * dim];
        for (j, c) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                x[i * dim + j] = (v - mean[j]) / scale[j];
            }
        }
        Ok(Self {
            k,
            dim,
            x,
            y,
            mean,
            scale,
        })
    }

    fn standardise(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
            .collect()
    }

    fn predict_standardised(&self, q: &[f64], skip: Option<usize>) -> f64 {
        // (squared distance, index) of the k nearest, kept sorted
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for (i, row) in self.x.chunks_exact(self.dim.max(1)).enumerate().take(self.y.len()) {
            if Some(i) == skip {
                continue;
            }
            let d2: f64 = if self.dim == 0 {
                0.0
            } else {
                row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            if best.len() < self.k || d2 < best[best.len() - 1].0 {
                let pos = best.partition_point(|&(d, _)| d <= d2);
                best.insert(pos, (d2, i));
                best.truncate(self.k);
            }
        }
        let exact: Vec<f64> = best.iter().filter(|b| b.0 == 0.0).map(|b| self.y[b.1]).collect();
        if !exact.is_empty() {
            return exact.iter().sum::<f64>() / exact.len() as f64;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, i) in &best {
            let w = 1.0 / d2.sqrt();
            num += w * self.y[i];
            den += w;
        }
        num / den
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.predict_standardised(&self.standardise(row), None)
    }

    /// Leave-one-out predictions for the training rows.
    pub fn predict_training(&self) -> Vec<f64> {
        (0..self.y.len())
            .map(|i| {
                let q = self.x[i * self.dim..(i + 1) * self.dim].to_vec();
                self.predict_standardised(&q, Some(i))
            })
            .collect()
    }
}

/// Fits on a seeded 80/20 split using only `selected` (zero-based) features.
pub fn evaluate_subset(dataset: &Dataset, selected: &[usize], config: &KnnConfig) -> Result<RegressionMetrics> {
    if let Some(&j) = selected.iter().find(|&&j| j >= dataset.n_features()) {
        return Err(Error::Config(format!(
            "selected feature {} out of range for {} features",
            j + 1,
            dataset.n_features()
        )));
    }
    let n = dataset.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(config.seed, streams::EVALUATE_SPLIT).shuffle(&mut order);
    let n_test = ((n as f64) * config.holdout_fraction).round() as usize;
    let (test, train) = order.split_at(n_test.min(n));
    if selected.is_empty() {
        log::warn!("empty feature selection; R² reported as 0");
        return Ok(RegressionMetrics {
            in_sample_r2: 0.0,
            out_of_sample_r2: 0.0,
            n_train: train.len(),
            n_test: test.len(),
            k: config.k,
        });
    }
    let y = dataset.target().column.as_f64();
    let cols: Vec<Vec<f64>> = selected.iter().map(|&j| dataset.feature(j).as_f64()).collect();
    let pick =
        |rows: &[usize]| -> Vec<Vec<f64>> { cols.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect() };
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let model = KnnRegressor::fit(&pick(train), y_train.clone(), config.k)?;
    let in_pred = model.predict_training();
    let test_cols = pick(test);
    let out_pred: Vec<f64> = (0..test.len())
        .map(|i| {
            let row: Vec<f64> = test_cols.iter().map(|c| c[i]).collect();
            model.predict(&row)
        })
        .collect();
    Ok(RegressionMetrics {
        in_sample_r2: r_squared(&y_train, &in_pred),
        out_of_sample_r2: r_squared(&y_test, &out_pred),
        n_train: train.len(),
        n_test: test.len(),
        k: config.k,
    })
}
