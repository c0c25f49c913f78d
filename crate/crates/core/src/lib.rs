//! Off-policy next-item recommendation with KL-regularized local policy
//! improvement.
//!
//! A sequence policy (recency-pooled item encoder with a softmax head and a
//! Q head) is trained from logged sessions. The main objective weights each
//! logged action's cross-entropy by `exp(A / beta)`, where `A` is the Q-head
//! advantage over a frozen estimate of the logging policy. Tabular oracles,
//! synthetic worlds with exact values, and ranking and divergence metrics
//! support verification end to end.

// Negated float comparisons deliberately reject NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod objectives;
pub mod policy;
pub mod synth;
pub mod train;

pub use data::{Dataset, Event, ItemId, Split, TrainingExample};
pub use error::{CheckpointError, Error, Result};
pub use objectives::{ObjectiveConfig, ObjectiveKind};
pub use policy::{ContextPolicy, ModelConfig, PolicyModel};
pub use train::TrainConfig;
