//! Empirical Donsker–Varadhan terms for `p`-gated features.
//!
//! For a batch `(x_i, y_i)` and a permutation `σ`:
//!
//! ```text
//! mu     = (1/n) Σ f(p ⊙ x_i, y_i)
//! log_nu = log (1/n) Σ exp f(p ⊙ x_σ(i), y_i)
//! v      = −mu + log_nu
//! ```
//!
//! `−v` is a lower-bound estimate of `I(p ⊙ X; Y)` in nats.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ndgrad::{Graph, NodeId};
use crate::rng::SeededRng;
use crate::statnet::StatNet;

/// A bijection on `0..n` (zero-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Uniform draw from the symmetric group (Fisher–Yates).
pub fn sample_permutation(n: usize, rng: &mut SeededRng) -> Result<Permutation> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "cannot decouple a batch of {n} rows by shuffling"
        )));
    }
    let mut map: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut map);
    Ok(Permutation(map))
}

/// Rows paired with their targets plus the shuffling permutation.
#[derive(Clone, Debug)]
pub struct Batch {
    pub data: Dataset,
    pub sigma: Permutation,
}

impl Batch {
    pub fn new(data: Dataset, sigma: Permutation) -> Result<Self> {
        if data.n_rows() == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if sigma.len() != data.n_rows() {
            return Err(Error::Contract(format!(
                "permutation of {} for a batch of {}",
                sigma.len(),
                data.n_rows()
            )));
        }
        Ok(Self { data, sigma })
    }

    pub fn len(&self) -> usize {
        self.data.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.n_rows() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// `v = −mu + log_nu`; the MI estimate is `−value`.
    pub value: f64,
    pub mu: f64,
    pub log_nu: f64,
    pub n: usize,
}

impl MiEstimate {
    pub fn mi_nats(&self) -> f64 {
        -self.value
    }
}

/// A test function `f(p ⊙ x, y)` recorded on a graph.
pub trait Critic {
    /// Scores `f(p ⊙ x_i, y_i)`, or `f(p ⊙ x_σ(i), y_i)` when `shuffled`.
    fn scores(&self, g: &mut Graph, p: NodeId, batch: &Batch, shuffled: bool) -> Result<NodeId>;

    /// Joint and shuffled scores together.
    fn score_pair(&self, g: &mut Graph, p: NodeId, batch: &Batch) -> Result<(NodeId, NodeId)> {
        Ok((self.scores(g, p, batch, false)?, self.scores(g, p, batch, true)?))
    }
}

impl Critic for StatNet<'_> {
    fn scores(&self, g: &mut Graph, p: NodeId, batch: &Batch, shuffled: bool) -> Result<NodeId> {
        let proj = self.project(g, p, &batch.data)?;
        let proj = if shuffled {
            g.gather_rows(proj, batch.sigma.as_slice())?
        } else {
            proj
        };
        let target = self.target_repr(g, &batch.data.target().column)?;
        self.head(g, proj, target)
    }

    // Projection is row-wise, so the shuffled pass reuses the joint one.
    fn score_pair(&self, g: &mut Graph, p: NodeId, batch: &Batch) -> Result<(NodeId, NodeId)> {
        let proj = self.project(g, p, &batch.data)?;
        let shuffled = g.gather_rows(proj, batch.sigma.as_slice())?;
        let target = self.target_repr(g, &batch.data.target().column)?;
        let joint = self.head(g, proj, target)?;
        let other = self.head(g, shuffled, target)?;
        Ok((joint, other))
    }
}

fn check_finite(g: &Graph, scores: NodeId, what: &'static str) -> Result<()> {
    match g.value(scores).data().iter().position(|v| !v.is_finite()) {
        Some(row) => Err(Error::Numeric { what, row }),
        None => Ok(()),
    }
}

/// Mean joint score.
pub fn mu_hat(g: &mut Graph, joint_scores: NodeId) -> Result<NodeId> {
    check_finite(g, joint_scores, "joint score")?;
    Ok(g.mean(joint_scores)?)
}

/// Max-shifted log-mean-exp of shuffled scores.
pub fn log_nu_hat(g: &mut Graph, shuffled_scores: NodeId) -> Result<NodeId> {
    check_finite(g, shuffled_scores, "shuffled score")?;
    Ok(g.log_mean_exp(shuffled_scores)?)
}

/// Graph nodes of one evaluation of `v`.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub value: NodeId,
    pub mu: NodeId,
    pub log_nu: NodeId,
    pub n: usize,
}

impl Objective {
    pub fn estimate(&self, g: &Graph) -> MiEstimate {
        let mu = g.value(self.mu).data()[0];
        let log_nu = g.value(self.log_nu).data()[0];
        MiEstimate {
            value: -mu + log_nu,
            mu,
            log_nu,
            n: self.n,
        }
    }
}

/// Records `v(θ, p) = −mu + log_nu` on `g`; differentiable in every
/// trainable leaf the critic and `p` were registered with.
pub fn v_objective(g: &mut Graph, critic: &dyn Critic, p: NodeId, batch: &Batch) -> Result<Objective> {
    let (joint, shuffled) = critic.score_pair(g, p, batch)?;
    let mu = mu_hat(g, joint)?;
    let log_nu = log_nu_hat(g, shuffled)?;
    let value = g.sub(log_nu, mu)?;
    Ok(Objective {
        value,
        mu,
        log_nu,
        n: batch.len(),
    })
}

/// Averages `v` over several batches with the network frozen.
pub fn evaluate_v(critic_batches: impl IntoIterator<Item = MiEstimate>) -> Option<MiEstimate> {
    let mut count = 0usize;
    let mut acc = MiEstimate {
        value: 0.0,
        mu: 0.0,
        log_nu: 0.0,
        n: 0,
    };
    for e in critic_batches {
        acc.value += e.value;
        acc.mu += e.mu;
        acc.log_nu += e.log_nu;
        acc.n += e.n;
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let c = count as f64;
    acc.mu /= c;
    acc.log_nu /= c;
    acc.value = -acc.mu + acc.log_nu;
    Some(acc)
}
