//! Federated-learning simulator and label-count recovery from model updates.

pub mod apportion;
pub mod attack;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fedsim;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use attack::{recover_labels, AttackMethod, AttackParams, AttackReport};
pub use data::{dirichlet_partition, make_auxiliary, make_synthetic, plan_batches, BatchPlan, BlobSpec, Dataset, Partition};
pub use error::{Error, Result};
pub use fedsim::{local_train, run_round, server_aggregate, LocalUpdate, Optimizer, Scheme, SchemeConfig, TrainTrace, UpdateHistory};
pub use metrics::{cacc, iacc, summarize, RecoveryScore};
pub use nn::{Activation, Model, Params};
