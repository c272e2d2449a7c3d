//! Feature selection by neural mutual-information estimation.
//!
//! The pieces, bottom up:
//!
//! - [`ndgrad`]: dense tensors and reverse-mode autodiff.
//! - [`statnet`]: the statistics network `f(p ⊙ x, y)`.
//! - [`mine`]: the Donsker–Varadhan estimate `v = −μ̂ + log ν̂`.
//! - [`minerva`]: the regularised loss and two-stage selection.
//! - [`synth`]: seeded benchmark generators and closed-form MI oracles.
//! - [`ksg`]: the k-nearest-neighbour MI estimator and pairwise filter.
//! - [`knn`]: a k-NN regressor for downstream R² checks.
//! - [`report`]: versioned JSON reports.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod dataset;
pub mod error;
pub mod knn;
pub mod ksg;
pub mod mine;
pub mod minerva;
pub mod ndgrad;
pub mod report;
pub mod rng;
pub mod statnet;
pub mod synth;

pub use dataset::{Column, Dataset, DatasetMeta, NamedColumn};
pub use error::{Error, Result};
pub use mine::{Batch, MiEstimate, Permutation};
pub use minerva::{
    classify_selection, select_features, Classification, FeatureWeights, OptimizerKind, SelectionResult, TrainConfig,
    WeightUpdate,
};
pub use rng::SeededRng;
pub use statnet::{NetworkSpec, StatNetParams};
