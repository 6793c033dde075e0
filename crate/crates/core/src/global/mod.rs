//! Layer-3 machinery: gossip consensus, audit commitments, DHT storage,
//! and logging-cost accounting.

pub mod audit;
pub mod cost;
pub mod dht;
pub mod gossip;
pub mod hash;
