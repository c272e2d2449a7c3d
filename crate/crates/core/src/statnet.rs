//! The statistics network scoring `(p ⊙ x, y)` pairs.
//!
//! Layout, in evaluation order:
//! 1. each categorical feature is embedded and soft-clamped to `(-B, B)`;
//!    float features pass through unchanged;
//! 2. feature `j`'s block is multiplied by the gate `p_j`;
//! 3. a linear projection maps the gated features to `hidden_width`;
//! 4. the target (raw real, or its own embedding) is concatenated;
//! 5. residual blocks `h ← h + W₂·relu(W₁·h + b₁) + b₂`;
//! 6. a linear head emits one real per row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset};
use crate::error::{Error, Result};
use crate::ndgrad::{Graph, NodeId, Tensor};
use crate::rng::{streams, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { cardinality: usize },
    Float,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedDimRule {
    /// `min(cap, ceil(sqrt(cardinality)))`
    SqrtCapped {
        cap: usize,
    },
    Fixed {
        width: usize,
    },
}

impl EmbedDimRule {
    pub fn width(self, cardinality: usize) -> usize {
        match self {
            EmbedDimRule::SqrtCapped { cap } => {
                let mut w = (cardinality as f64).sqrt() as usize;
                while w * w < cardinality {
                    w += 1;
                }
                w.min(cap)
            }
            EmbedDimRule::Fixed { width } => width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub features: Vec<FeatureKind>,
    pub target: FeatureKind,
    pub embed_dim_rule: EmbedDimRule,
    pub target_embed_width: usize,
    pub hidden_width: usize,
    pub n_residual_blocks: usize,
    pub clamp_bound: f64,
}

impl NetworkSpec {
    pub const DEFAULT_HIDDEN_WIDTH: usize = 64;
    pub const DEFAULT_BLOCKS: usize = 2;
    pub const DEFAULT_CLAMP: f64 = 5.0;

    pub fn new(features: Vec<FeatureKind>, target: FeatureKind) -> Self {
        Self {
            features,
            target,
            embed_dim_rule: EmbedDimRule::SqrtCapped { cap: 16 },
            target_embed_width: 4,
            hidden_width: Self::DEFAULT_HIDDEN_WIDTH,
            n_residual_blocks: Self::DEFAULT_BLOCKS,
            clamp_bound: Self::DEFAULT_CLAMP,
        }
    }

    pub fn for_dataset(data: &Dataset) -> Self {
        Self::new(
            data.features().iter().map(|c| kind_of(&c.column)).collect(),
            kind_of(&data.target().column),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Config("network needs at least one feature".into()));
        }
        if self.hidden_width == 0 || self.n_residual_blocks == 0 {
            return Err(Error::Config(
                "hidden_width and n_residual_blocks must be at least 1".into(),
            ));
        }
        if !(self.clamp_bound > 0.0) || !self.clamp_bound.is_finite() {
            return Err(Error::Config(format!(
                "clamp bound must be positive, got {}",
                self.clamp_bound
            )));
        }
        for (j, f) in self.features.iter().chain(std::iter::once(&self.target)).enumerate() {
            if let FeatureKind::Categorical { cardinality } = f {
                if *cardinality == 0 {
                    return Err(Error::Config(format!("column {j} has cardinality 0")));
                }
            }
        }
        if self.features.iter().any(
            |f| matches!(f, FeatureKind::Categorical { cardinality } if self.embed_dim_rule.width(*cardinality) == 0),
        ) || (self.target_embed_width == 0 && self.target != FeatureKind::Float)
        {
            return Err(Error::Config("embedding widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Width of each feature's block before gating.
    pub fn feature_widths(&self) -> Vec<usize> {
        self.features
            .iter()
            .map(|f| match f {
                FeatureKind::Categorical { cardinality } => self.embed_dim_rule.width(*cardinality),
                FeatureKind::Float => 1,
            })
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.feature_widths().iter().sum()
    }

    pub fn target_width(&self) -> usize {
        match self.target {
            FeatureKind::Categorical { .. } => self.target_embed_width,
            FeatureKind::Float => 1,
        }
    }

    /// Width of the residual stream (projected features plus target).
    pub fn stream_width(&self) -> usize {
        self.hidden_width + self.target_width()
    }

    /// Shapes of every parameter tensor, in the canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, [usize; 2])> {
        let mut out = Vec::new();
        let mut cat = 0;
        for f in &self.features {
            if let FeatureKind::Categorical { cardinality } = f {
                out.push((
                    format!("embed.{cat}"),
                    [*cardinality, self.embed_dim_rule.width(*cardinality)],
                ));
                cat += 1;
            }
        }
        if let FeatureKind::Categorical { cardinality } = self.target {
            out.push(("target_embed".into(), [cardinality, self.target_embed_width]));
        }
        let (h, s) = (self.hidden_width, self.stream_width());
        out.push(("proj.w".into(), [self.input_width(), h]));
        out.push(("proj.b".into(), [1, h]));
        for b in 0..self.n_residual_blocks {
            out.push((format!("block{b}.w1"), [s, h]));
            out.push((format!("block{b}.b1"), [1, h]));
            out.push((format!("block{b}.w2"), [h, s]));
            out.push((format!("block{b}.b2"), [1, s]));
        }
        out.push(("head.w".into(), [s, 1]));
        out.push(("head.b".into(), [1, 1]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, [r, c])| r * c).sum()
    }
}

fn kind_of(c: &Column) -> FeatureKind {
    match c {
        Column::Categorical { cardinality, .. } => FeatureKind::Categorical {
            cardinality: *cardinality,
        },
        Column::Float(_) => FeatureKind::Float,
    }
}

/// All trainable tensors of the network, in [`NetworkSpec::tensor_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct StatNetParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl StatNetParams {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.tensor_shapes();
        let ok = shapes.len() == self.tensors.len()
            && shapes
                .iter()
                .zip(&self.tensors)
                .all(|((_, s), t)| t.shape() == s.as_slice());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("parameters do not match the network spec".into()))
        }
    }

    /// Checkpoint: `u64` LE header length, JSON header, then every tensor as
    /// little-endian `f64` in header order.
    pub fn save(&self, spec: &NetworkSpec, path: &Path) -> Result<()> {
        let mut offset = 0;
        let tensors = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| {
                let entry = CheckpointTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                entry
            })
            .collect();
        let header = CheckpointHeader {
            schema_version: 1,
            spec: spec.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut f = File::create(path)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        for t in &self.tensors {
            for v in t.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(NetworkSpec, StatNetParams)> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let corrupt = || Error::Data("truncated checkpoint".into());
        let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(corrupt)?.try_into().unwrap()) as usize;
        let header: CheckpointHeader = serde_json::from_slice(bytes.get(8..8 + len).ok_or_else(corrupt)?)?;
        let body = &bytes[8 + len..];
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for t in header.tensors {
            let numel: usize = t.shape.iter().product();
            let start = t.offset * 8;
            let raw = body.get(start..start + numel * 8).ok_or_else(corrupt)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            names.push(t.name);
            tensors.push(Tensor::new(t.shape, data)?);
        }
        let params = StatNetParams { names, tensors };
        params.check_against(&header.spec)?;
        Ok((header.spec, params))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    spec: NetworkSpec,
    tensors: Vec<CheckpointTensor>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<StatNetParams> {
    spec.validate()?;
    let mut rng = SeededRng::new(seed, streams::INIT);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, [fan_in, fan_out]) in spec.tensor_shapes() {
        let numel = fan_in * fan_out;
        let data = if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            vec![0.0; numel]
        } else {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..numel).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect()
        };
        names.push(name);
        tensors.push(Tensor::matrix(fan_in, fan_out, data)?);
    }
    Ok(StatNetParams { names, tensors })
}

/// `B·tanh(x/B)` on a graph node.
pub fn soft_clamp(g: &mut Graph, x: NodeId, bound: f64) -> Result<NodeId> {
    if !(bound > 0.0) {
        return Err(Error::Config(format!("clamp bound must be positive, got {bound}")));
    }
    let scaled = g.scale(x, 1.0 / bound)?;
    let t = g.tanh(scaled)?;
    Ok(g.scale(t, bound)?)
}

/// `B·tanh(x/B)` on a plain value.
pub fn soft_clamp_value(x: f64, bound: f64) -> Result<f64> {
    if !(bound > 0.0) {
        return Err(Error::Config(format!("clamp bound must be positive, got {bound}")));
    }
    Ok(bound * (x / bound).tanh())
}

/// Parameters registered on a graph, ready to score batches.
#[derive(Debug)]
pub struct StatNet<'s> {
    spec: &'s NetworkSpec,
    ids: Vec<NodeId>,
    selector: Tensor,
}

impl<'s> StatNet<'s> {
    /// Registers `params` on `g` (trainable or frozen).
    pub fn bind(g: &mut Graph, spec: &'s NetworkSpec, params: &StatNetParams, trainable: bool) -> Result<Self> {
        params.check_against(spec)?;
        let ids = params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        // Row j spreads p_j over feature j's input block.
        let widths = spec.feature_widths();
        let total: usize = widths.iter().sum();
        let mut sel = vec![0.0; spec.n_features() * total];
        let mut col = 0;
        for (j, w) in widths.iter().enumerate() {
            for c in col..col + w {
                sel[j * total + c] = 1.0;
            }
            col += w;
        }
        Ok(Self {
            spec,
            ids,
            selector: Tensor::matrix(spec.n_features(), total, sel)?,
        })
    }

    /// Parameter node ids, in [`StatNetParams::tensors`] order.
    pub fn param_ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn id(&self, idx: usize) -> NodeId {
        self.ids[idx]
    }

    fn n_embeddings(&self) -> usize {
        self.spec
            .features
            .iter()
            .filter(|f| matches!(f, FeatureKind::Categorical { .. }))
            .count()
            + usize::from(matches!(self.spec.target, FeatureKind::Categorical { .. }))
    }

    /// Gated and projected features, `n × hidden_width`. `p` is a `1 × d` node.
    pub fn project(&self, g: &mut Graph, p: NodeId, x: &Dataset) -> Result<NodeId> {
        let d = self.spec.n_features();
        if x.n_features() != d {
            return Err(Error::Data(format!(
                "batch has {} features, network expects {d}",
                x.n_features()
            )));
        }
        if g.shape(p) != [1, d] {
            return Err(Error::Data(format!(
                "feature weights have shape {:?}, expected [1, {d}]",
                g.shape(p)
            )));
        }
        let n = x.n_rows();
        let mut blocks = Vec::with_capacity(d);
        let mut cat = 0;
        for (j, (kind, col)) in self.spec.features.iter().zip(x.features()).enumerate() {
            match (kind, &col.column) {
                (FeatureKind::Categorical { cardinality }, Column::Categorical { codes, .. }) => {
                    if let Some(row) = codes.iter().position(|&c| c as usize >= *cardinality) {
                        return Err(Error::Data(format!(
                            "feature {j} ({}) row {row}: category {} >= cardinality {cardinality}",
                            col.name, codes[row]
                        )));
                    }
                    let idx: Vec<usize> = codes.iter().map(|&c| c as usize).collect();
                    let e = g.gather_rows(self.id(cat), &idx)?;
                    blocks.push(soft_clamp(g, e, self.spec.clamp_bound)?);
                    cat += 1;
                }
                (FeatureKind::Float, Column::Float(v)) => {
                    blocks.push(g.constant(Tensor::column(v.clone())));
                }
                _ => {
                    return Err(Error::Data(format!(
                        "feature {j} ({}) kind does not match the network spec",
                        col.name
                    )))
                }
            }
        }
        let features = g.concat_cols(&blocks)?;
        let selector = g.constant(self.selector.clone());
        let gate = g.matmul(p, selector)?;
        let gated = g.mul(features, gate)?;
        let base = self.n_embeddings();
        let w = g.matmul(gated, self.id(base))?;
        let out = g.add(w, self.id(base + 1))?;
        debug_assert_eq!(g.shape(out), &[n, self.spec.hidden_width]);
        Ok(out)
    }

    /// Target representation, `n × target_width`.
    pub fn target_repr(&self, g: &mut Graph, y: &Column) -> Result<NodeId> {
        match (self.spec.target, y) {
            (FeatureKind::Float, Column::Float(v)) => Ok(g.constant(Tensor::column(v.clone()))),
            (FeatureKind::Categorical { cardinality }, Column::Categorical { codes, .. }) => {
                if let Some(row) = codes.iter().position(|&c| c as usize >= cardinality) {
                    return Err(Error::Data(format!(
                        "target row {row}: category {} >= cardinality {cardinality}",
                        codes[row]
                    )));
                }
                let idx: Vec<usize> = codes.iter().map(|&c| c as usize).collect();
                Ok(g.gather_rows(self.id(self.n_embeddings() - 1), &idx)?)
            }
            _ => Err(Error::Data("target kind does not match the network spec".into())),
        }
    }

    /// Residual blocks and head over concatenated `[projected, target]`.
    pub fn head(&self, g: &mut Graph, projected: NodeId, target: NodeId) -> Result<NodeId> {
        let mut h = g.concat_cols(&[projected, target])?;
        let mut idx = self.n_embeddings() + 2;
        for _ in 0..self.spec.n_residual_blocks {
            let a = g.matmul(h, self.id(idx))?;
            let a = g.add(a, self.id(idx + 1))?;
            let a = g.relu(a)?;
            let b = g.matmul(a, self.id(idx + 2))?;
            let b = g.add(b, self.id(idx + 3))?;
            h = g.add(h, b)?;
            idx += 4;
        }
        let out = g.matmul(h, self.id(idx))?;
        Ok(g.add(out, self.id(idx + 1))?)
    }

    /// `f(p ⊙ x_i, y_i)` for every row, `n × 1`.
    pub fn forward(&self, g: &mut Graph, p: NodeId, x: &Dataset, y: &Column) -> Result<NodeId> {
        if y.len() != x.n_rows() {
            return Err(Error::Data(format!(
                "{} feature rows but {} target rows",
                x.n_rows(),
                y.len()
            )));
        }
        let projected = self.project(g, p, x)?;
        let target = self.target_repr(g, y)?;
        self.head(g, projected, target)
    }
}

/// One-shot evaluation of the network outside any training loop.
pub fn forward_values(spec: &NetworkSpec, params: &StatNetParams, p: &[f64], batch: &Dataset) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let net = StatNet::bind(&mut g, spec, params, false)?;
    let p = g.constant(Tensor::matrix(1, p.len(), p.to_vec())?);
    let out = net.forward(&mut g, p, batch, &batch.target().column)?;
    Ok(g.value(out).data().to_vec())
}
