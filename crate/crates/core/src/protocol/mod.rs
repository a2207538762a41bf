//! The one-shot protocol: partition, local workers, and the combiner.
//!
//! Round one sends each worker's θ̂_i (a few scalars). Round two sends one
//! p-vector plus a few scalars per candidate penalty. The isotropic variant
//! needs only the second round: θ̂_i travels with β̂_i.

mod cluster;
mod combine;
mod config;
mod message;
mod worker;

pub use cluster::Cluster;
pub use combine::{
    combine_general, combine_isotropic, combine_theta, initial_lambda, make_broadcast, theta_from_summaries, CombineReport,
    DistributedFit, GridPoint, PlanKind, WeightPlan, LOCAL_ALPHA2_FLOOR, ROUND_FIT, ROUND_THETA,
};
pub use config::{partition, split_validation, PartitionStrategy, Shard, WonderConfig, DEFAULT_MULTIPLIERS};
pub use message::{
    read_json, write_json, Broadcast, MessageLog, Payload, ShardSummary, ThetaMessage, Transmission,
    BROADCAST_SCHEMA, SUMMARY_SCHEMA, THETA_SCHEMA,
};
pub use worker::{local_worker, LocalWorker};

use crate::data::Dataset;
use crate::error::Result;

/// Algorithm for general covariance: grid search with equal-split weights.
pub fn wonder_general(shards: &[Shard], config: &WonderConfig, validation: Option<&Dataset>) -> Result<DistributedFit> {
    Cluster::new(shards, config)?.general(validation)
}

/// Algorithm for isotropic designs: one round, closed-form weights.
pub fn wonder_isotropic(shards: &[Shard], config: &WonderConfig) -> Result<DistributedFit> {
    Cluster::new(shards, config)?.isotropic()
}

/// Naive average and first-shard-only estimators.
pub fn baselines(shards: &[Shard], config: &WonderConfig) -> Result<(DistributedFit, DistributedFit)> {
    let cluster = Cluster::new(shards, config)?;
    Ok((cluster.naive()?, cluster.local()?))
}
