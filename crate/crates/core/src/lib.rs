//! Federated graph contrastive learning with edge-level differential privacy.
//!
//! Clients hold small labeled graphs. Before a graph touches the model its
//! adjacency is released through the Laplace mechanism, twice, giving two
//! noisy views that double as contrastive augmentations. Each client trains
//! a graph encoder on a weighted sum of InfoNCE (views of the same graph
//! attract, stored graphs with other labels repel) and a supervised loss;
//! the server combines client models with FedAvg.
//!
//! Modules, bottom up:
//!
//! * [`nn`]: dense tensors, a reverse-mode tape and [`nn::ParamStore`].
//! * [`graph`]: graphs, datasets, file format, synthetic data, partitioning.
//! * [`dp`]: the Laplace mechanism on edge tables and an empirical DP check.
//! * [`gnn`]: GCN and TAG encoders, mean readout, the classifier head.
//! * [`contrastive`]: negative stack and loss functions.
//! * [`federated`]: local updates, FedAvg, evaluation, the training loop.
//! * [`experiment`]: configuration, output files, sweeps and DP verification.

pub mod contrastive;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod federated;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/privacy.md")]
    pub struct Privacy;
    #[doc = include_str!("../../../book/src/encoders.md")]
    pub struct Encoders;
    #[doc = include_str!("../../../book/src/contrastive.md")]
    pub struct Contrastive;
    #[doc = include_str!("../../../book/src/federated.md")]
    pub struct Federated;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    pub struct Reproducibility;
}
