//! Kraskov–Stögbauer–Grassberger mutual information estimator (first
//! variant) and the pairwise threshold filter built on it.
//!
//! For each point the joint k-th neighbour distance ε is taken in the max
//! norm, and the marginal counts are the points strictly closer than ε:
//!
//! ```text
//! I ≈ ψ(k) + ψ(n) − ⟨ψ(n_x + 1) + ψ(n_y + 1)⟩
//! ```
//!
//! Neighbour search is exact. Points are swept in x order and each scan
//! stops once the x gap alone reaches the current k-th distance.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsgConfig {
    pub k: usize,
    /// Nats; features must score strictly above it.
    pub threshold: f64,
    /// Jitter amplitude relative to each column's range.
    pub jitter_scale: f64,
    pub seed: u64,
}

impl Default for KsgConfig {
    fn default() -> Self {
        Self {
            k: 5,
            threshold: 0.02,
            jitter_scale: 1e-10,
            seed: 0,
        }
    }
}

impl KsgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("ksg k must be at least 1".into()));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::Config(format!(
                "ksg threshold must be non-negative, got {}",
                self.threshold
            )));
        }
        if !(self.jitter_scale > 0.0 && self.jitter_scale.is_finite()) {
            return Err(Error::Config(format!(
                "jitter_scale must be positive, got {}",
                self.jitter_scale
            )));
        }
        Ok(())
    }
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

/// Adds `scale·range·u`, `u ~ U[0, 1)`, when the column has repeated values.
/// Returns `None` for a constant column.
fn jitter(v: &[f64], scale: f64, rng: &mut SeededRng) -> Option<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return None;
    }
    if !has_ties(v) {
        return Some(v.to_vec());
    }
    let amp = scale * range;
    Some(v.iter().map(|&x| x + amp * rng.uniform()).collect())
}

fn check_columns(x: &[f64], y: &[f64], k: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Data(format!(
            "ksg columns differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if k == 0 || x.len() <= k {
        return Err(Error::Config(format!(
            "ksg needs more than k = {k} samples, got {}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "ksg input",
            row: i % x.len(),
        });
    }
    Ok(())
}

/// Number of entries of sorted `s` strictly inside `(c − r, c + r)`, minus
/// the point itself.
fn count_within(s: &[f64], c: f64, r: f64) -> usize {
    // compare differences, not c ± r, so rounding matches |v − c| < r
    let lo = s.partition_point(|&v| c - v >= r);
    let hi = s.partition_point(|&v| v - c < r);
    (hi - lo).saturating_sub(1)
}

fn estimate(x: &[f64], y: &[f64], k: usize, eps: &[f64]) -> f64 {
    let n = x.len();
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    ys.sort_unstable_by(f64::total_cmp);
    let mut acc = 0.0;
    for i in 0..n {
        let nx = count_within(&xs, x[i], eps[i]);
        let ny = count_within(&ys, y[i], eps[i]);
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    digamma(k as f64) + digamma(n as f64) - acc / n as f64
}

/// Max-norm distance from each point to its k-th neighbour.
fn kth_distances(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]));
    let sx: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let sy: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut out = vec![0.0; n];
    // max-heap of the k smallest distances seen so far
    let mut heap: BinaryHeap<Dist> = BinaryHeap::with_capacity(k + 1);
    for r in 0..n {
        heap.clear();
        let (xi, yi) = (sx[r], sy[r]);
        let (mut left, mut right) = (r, r + 1);
        let mut left_open = r > 0;
        let mut right_open = right < n;
        while left_open || right_open {
            let bound = if heap.len() == k {
                heap.peek().map_or(f64::INFINITY, |d| d.0)
            } else {
                f64::INFINITY
            };
            // take the nearer side in x first
            let go_left = match (left_open, right_open) {
                (true, true) => xi - sx[left - 1] <= sx[right] - xi,
                (l, _) => l,
            };
            let j = if go_left { left - 1 } else { right };
            let dx = (sx[j] - xi).abs();
            if dx >= bound {
                if go_left {
                    left_open = false;
                } else {
                    right_open = false;
                }
                continue;
            }
            let d = dx.max((sy[j] - yi).abs());
            if heap.len() < k {
                heap.push(Dist(d));
            } else if d < bound {
                heap.pop();
                heap.push(Dist(d));
            }
            if go_left {
                left -= 1;
                left_open = left > 0;
            } else {
                right += 1;
                right_open = right < n;
            }
        }
        out[order[r]] = heap.peek().map_or(0.0, |d| d.0);
    }
    out
}

struct Dist(f64);
impl PartialEq for Dist {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Dist {}
impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn prepared(x: &[f64], y: &[f64], config: &KsgConfig, stream_offset: u64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    config.validate()?;
    check_columns(x, y, config.k)?;
    let mut rng = SeededRng::new(config.seed, streams::JITTER + 16 * stream_offset);
    let (Some(xj), Some(yj)) = (
        jitter(x, config.jitter_scale, &mut rng),
        jitter(y, config.jitter_scale, &mut rng),
    ) else {
        log::warn!("ksg: constant column, estimate is 0");
        return Ok(None);
    };
    Ok(Some((xj, yj)))
}

/// KSG estimate in nats with default jitter settings.
pub fn ksg_mi(x: &[f64], y: &[f64], k: usize) -> Result<f64> {
    let config = KsgConfig {
        k,
        ..KsgConfig::default()
    };
    ksg_mi_with(x, y, &config, 0)
}

/// KSG estimate in nats. `stream_offset` separates the jitter draws of
/// different columns under one seed.
pub fn ksg_mi_with(x: &[f64], y: &[f64], config: &KsgConfig, stream_offset: u64) -> Result<f64> {
    let Some((x, y)) = prepared(x, y, config, stream_offset)? else {
        return Ok(0.0);
    };
    let eps = kth_distances(&x, &y, config.k);
    Ok(estimate(&x, &y, config.k, &eps))
}

/// Quadratic-time reference used to check the sweep.
pub fn ksg_mi_brute_force(x: &[f64], y: &[f64], config: &KsgConfig, stream_offset: u64) -> Result<f64> {
    let Some((x, y)) = prepared(x, y, config, stream_offset)? else {
        return Ok(0.0);
    };
    let n = x.len();
    let k = config.k;
    let mut eps = vec![0.0; n];
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        d.clear();
        d.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (x[i] - x[j]).abs().max((y[i] - y[j]).abs())),
        );
        d.sort_unstable_by(f64::total_cmp);
        eps[i] = d[k - 1];
    }
    let mut acc = 0.0;
    for i in 0..n {
        let nx = (0..n).filter(|&j| j != i && (x[i] - x[j]).abs() < eps[i]).count();
        let ny = (0..n).filter(|&j| j != i && (y[i] - y[j]).abs() < eps[i]).count();
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    Ok(digamma(k as f64) + digamma(n as f64) - acc / n as f64)
}

/// Per-feature scores and the features scoring above the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsgSelection {
    pub scores: Vec<f64>,
    /// Zero-based, sorted.
    pub selected: Vec<usize>,
}

/// Scores every feature against the target; categorical codes are treated
/// as jittered reals.
pub fn ksg_filter(dataset: &Dataset, config: &KsgConfig) -> Result<KsgSelection> {
    config.validate()?;
    let y = dataset.target().column.as_f64();
    let mut scores = Vec::with_capacity(dataset.n_features());
    for j in 0..dataset.n_features() {
        let x = dataset.feature(j).as_f64();
        scores.push(ksg_mi_with(&x, &y, config, j as u64 + 1)?);
    }
    let selected = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > config.threshold)
        .map(|(j, _)| j)
        .collect();
    Ok(KsgSelection { scores, selected })
}
