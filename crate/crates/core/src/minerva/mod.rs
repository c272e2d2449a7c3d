//! Two-stage MINERVA feature selection.
//!
//! Stage 1 fits the statistics network with every feature weight held at 1.
//! Stage 2 continues from those parameters and learns the weights `p`
//! jointly, minimising
//!
//! ```text
//! ℓ(φ, p) = v(φ, p) + c1·‖p/‖p‖₂‖₁ + c2·(‖p‖₂ − a)²
//! ```
//!
//! Features whose final weight is at or below the threshold are dropped.

mod optim;
mod train;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mine::{v_objective, Batch, Critic, Objective};
use crate::ndgrad::{Graph, NodeId, Tensor};
use crate::statnet::{NetworkSpec, StatNet, StatNetParams};

pub use optim::OptimizerKind;
pub use train::{select_features, stage1_train, stage2_train, SelectionResult, Stage1Result, Stage2Result, TracePoint};

/// How the feature weights move in stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUpdate {
    /// Plain (sub)gradient step on the whole loss.
    Gradient,
    /// Plain gradient step on the smooth part, then soft-thresholding for
    /// the `c1·‖p‖₁/‖p‖₂` term with `‖p‖₂` frozen at its pre-step value.
    /// `p` ignores [`TrainConfig::optimizer`] in this mode.
    Proximal,
}

/// Training settings. The defaults train the network with Adam and move
/// `p` by proximal SGD towards a unit norm; plain SGD at `1e-4` with
/// `a = √d` is available but learns far too slowly at desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Network step size.
    pub learning_rate: f64,
    /// Step size for `p`; the network learning rate when unset.
    pub weight_learning_rate: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    /// Target norm `a`; `√d` when null.
    pub drift_target: Option<f64>,
    pub threshold: f64,
    pub batch_size: usize,
    pub stage1_max_steps: usize,
    pub stage2_max_steps: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub eval_batches: usize,
    pub min_improvement: f64,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub weight_update: WeightUpdate,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_learning_rate: Some(1e-2),
            c1: 1.0,
            c2: 1.0,
            drift_target: Some(1.0),
            threshold: 1e-5,
            batch_size: 512,
            stage1_max_steps: 5000,
            stage2_max_steps: 10000,
            patience: 10,
            eval_every: 100,
            eval_batches: 20,
            min_improvement: 1e-4,
            clip_norm: 10.0,
            optimizer: OptimizerKind::adam(),
            weight_update: WeightUpdate::Proximal,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The bare update rule: plain SGD at `1e-4` on both the network and
    /// `p` with one shared rate, and `a = √d`.
    pub fn plain_sgd() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_learning_rate: None,
            drift_target: None,
            optimizer: OptimizerKind::Sgd,
            weight_update: WeightUpdate::Gradient,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        if let Some(r) = self.weight_learning_rate {
            positive("weight_learning_rate", r)?;
        }
        positive("clip_norm", self.clip_norm)?;
        if let Some(a) = self.drift_target {
            positive("drift_target", a)?;
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("threshold", self.threshold)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.min_improvement.is_finite() && self.min_improvement >= 0.0) {
            return Err(Error::Config(format!(
                "min_improvement must be non-negative, got {}",
                self.min_improvement
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        for (name, v) in [
            ("eval_every", self.eval_every),
            ("eval_batches", self.eval_batches),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::Config(format!(
                    "bad Adam settings: beta1={beta1}, beta2={beta2}, epsilon={epsilon}"
                )));
            }
        }
        Ok(())
    }

    pub fn drift_target_for(&self, d: usize) -> f64 {
        self.drift_target.unwrap_or((d as f64).sqrt())
    }

    pub fn weight_rate(&self) -> f64 {
        self.weight_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// Learned feature weights, zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureWeights(pub Vec<f64>);

impl FeatureWeights {
    pub fn ones(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Indices with `|p_i| > eps`.
    pub fn selected(&self, eps: f64) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > eps)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sets every weight with `|p_i| ≤ eps` to exactly zero.
    pub fn snap(&mut self, eps: f64) {
        for w in &mut self.0 {
            if w.abs() <= eps {
                *w = 0.0;
            }
        }
    }
}

/// Outcome of comparing a selected set against the true one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Exact,
    /// Some relevant feature was dropped.
    NonExactTypeI,
    /// Every relevant feature was kept, plus at least one more.
    NonExactTypeII,
}

pub fn classify_selection(selected: &[usize], truth: &[usize]) -> Classification {
    let s: BTreeSet<_> = selected.iter().collect();
    let t: BTreeSet<_> = truth.iter().collect();
    if s == t {
        Classification::Exact
    } else if t.is_subset(&s) {
        Classification::NonExactTypeII
    } else {
        Classification::NonExactTypeI
    }
}

/// Nodes of one evaluation of the stage 2 loss.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: NodeId,
    pub objective: Objective,
    /// `‖p/‖p‖₂‖₁`
    pub l1_ratio: NodeId,
    /// `(‖p‖₂ − a)²`
    pub drift: NodeId,
}

/// Norms below this are treated as a collapsed weight vector.
pub const MIN_WEIGHT_NORM: f64 = 1e-12;

/// Records the regularised loss on `g`. `p` is a `1 × d` node.
pub fn minerva_loss(
    g: &mut Graph,
    critic: &dyn Critic,
    p: NodeId,
    batch: &Batch,
    c1: f64,
    c2: f64,
    a: f64,
) -> Result<LossParts> {
    let norm_value = g.value(p).l2_norm();
    if !(norm_value >= MIN_WEIGHT_NORM) {
        return Err(Error::DegenerateWeights { norm: norm_value });
    }
    let objective = v_objective(g, critic, p, batch)?;
    let norm = g.l2_norm(p)?;
    let unit = g.div(p, norm)?;
    let l1_ratio = g.l1_norm(unit)?;
    let off = g.add_scalar(norm, -a)?;
    let drift = g.mul(off, off)?;
    let r1 = g.scale(l1_ratio, c1)?;
    let r2 = g.scale(drift, c2)?;
    let reg = g.add(r1, r2)?;
    let total = g.add(objective.value, reg)?;
    Ok(LossParts {
        total,
        objective,
        l1_ratio,
        drift,
    })
}

/// Loss value for fixed parameters.
pub fn loss(
    spec: &NetworkSpec,
    params: &StatNetParams,
    p: &[f64],
    batch: &Batch,
    c1: f64,
    c2: f64,
    a: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let net = StatNet::bind(&mut g, spec, params, false)?;
    let pn = g.constant(Tensor::matrix(1, p.len(), p.to_vec())?);
    let parts = minerva_loss(&mut g, &net, pn, batch, c1, c2, a)?;
    Ok(g.value(parts.total).data()[0])
}

/// Loss value with its gradients: one tensor per network parameter, then
/// the gradient in `p`.
pub fn loss_gradients(
    spec: &NetworkSpec,
    params: &StatNetParams,
    p: &[f64],
    batch: &Batch,
    c1: f64,
    c2: f64,
    a: f64,
) -> Result<(f64, Vec<Tensor>, Vec<f64>)> {
    let mut g = Graph::new();
    let net = StatNet::bind(&mut g, spec, params, true)?;
    let pn = g.param(Tensor::matrix(1, p.len(), p.to_vec())?);
    let parts = minerva_loss(&mut g, &net, pn, batch, c1, c2, a)?;
    let mut grads = g.backward(parts.total)?;
    let theta = net
        .param_ids()
        .iter()
        .map(|&id| grads.take(id).expect("parameter gradient"))
        .collect();
    let gp = grads.take(pn).expect("weight gradient").into_data();
    Ok((g.value(parts.total).data()[0], theta, gp))
}

/// `c1·‖p/‖p‖₂‖₁ + c2·(‖p‖₂ − a)²` on plain values.
pub fn regularizer(p: &[f64], c1: f64, c2: f64, a: f64) -> Result<f64> {
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= MIN_WEIGHT_NORM) {
        return Err(Error::DegenerateWeights { norm });
    }
    let l1 = p.iter().map(|v| v.abs()).sum::<f64>() / norm;
    Ok(c1 * l1 + c2 * (norm - a).powi(2))
}

/// `sign(z)·max(|z| − λ, 0)`
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}
