//! Rollout-group uncertainty measures and advantage modulation for
//! group-relative policy optimization.
//!
//! The crate is organised around a single unit of work, the [`RolloutGroup`]:
//! the `G` sampled responses of one query together with their embeddings,
//! rewards and (optionally) per-rollout score gradients.
//!
//! - [`rollout`]: data model, JSONL ingestion and validation.
//! - [`clustering`]: greedy entailment clustering into semantic modes.
//! - [`uncertainty`]: token entropy, semantic entropy, cosine dispersion,
//!   barycentric transport and reward dispersion.
//! - [`modulation`]: group-normalized advantages and their reweighting.
//! - [`variance`]: sample-level gradient variance and its entropy/Gini bounds.
//! - [`diagnostics`]: rank correlation, paired bootstrap, retrieval metrics
//!   and held-out regression between measures and gradient variance.
//! - [`simulator`]: synthetic rollout groups, gap experiments and a toy
//!   softmax-policy training loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod diagnostics;
mod error;
pub mod modulation;
pub mod rollout;
pub mod seed;
pub mod simulator;
pub mod stats;
pub mod uncertainty;
pub mod variance;
pub mod vector;

pub use clustering::{cluster_by_labels, greedy_entailment_cluster, ClusterAssignment};
pub use error::{Error, Result};
pub use modulation::{GeoKind, ModulatedAdvantages};
pub use rollout::{DatasetManifest, RolloutGroup};
pub use uncertainty::UncertaintyReport;
pub use variance::VarianceReport;

/// Default entailment probability at or above which a rollout joins a cluster.
pub const DEFAULT_ENTAILMENT_THRESHOLD: f64 = 0.35;
/// Default modulation strength before group-size normalization.
pub const DEFAULT_ALPHA_BASE: f64 = 0.6;
/// Default stabilizer added to the reward standard deviation.
pub const DEFAULT_EPSILON: f64 = 1e-6;
