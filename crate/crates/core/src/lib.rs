//! Weakly-supervised temporal action localization with three-branch
//! (action instance / action context / background) attention.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision used for training (`f32`) and gradient checking (`f64`).

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod localization;
pub mod network;
pub mod objectives;
pub mod scalar;
pub mod types;

pub use error::{Error, Result};
pub use geometry::{temporal_iou, topk_count, Segment};
pub use scalar::Scalar;
pub use types::{ActionInstance, HyperParams, Proposal, VideoLabel};

pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
pub type BranchActivations32 = network::BranchActivations<f32>;
pub type BranchActivations64 = network::BranchActivations<f64>;
pub type Checkpoint32 = network::checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = network::checkpoint::Checkpoint<f64>;
