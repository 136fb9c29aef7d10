//! Federated supermask learning simulator.
//!
//! Clients search for subnetworks of a shared, randomly initialized and
//! frozen network with edge-popup, then report layer-wise edge rankings. The
//! server combines rankings with a reputation vote. Weight-based baselines
//! (FedAvg, SignSGD, TopK), robust aggregators, poisoning attacks, a
//! closed-form robustness bound and a communication cost model are included
//! for comparison.

pub mod adversary;
pub mod aggregation;
pub mod analytics;
pub mod data;
pub mod dense;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod prng;
pub mod protocols;
pub mod ranking;

pub use error::{FslError, Result};
