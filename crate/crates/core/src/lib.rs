//! Hierarchical federated graph-attention collision avoidance.
//!
//! A protocol library plus a deterministic discrete-event simulator for
//! large UAV swarms. Three layers cooperate: dense temporal attention for
//! immediate local risk, sparse attention with Byzantine-resilient
//! asynchronous federated aggregation and adaptive differential privacy
//! for regional coordination, and a gossip/DHT audit layer for global
//! agreement and tamper-evident logging.

pub mod aggregation;
pub mod attention;
pub mod global;
pub mod gradient;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod simnet;
