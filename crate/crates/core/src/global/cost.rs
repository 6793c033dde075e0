//! Audit-logging cost model: DHT replication vs. full-broadcast
//! blockchain-style commitment.
//!
//! Both modes are charged against the same record size. Per event:
//!
//! - DHT: `H = ceil(log2 n) + 2` routing messages plus `K` stores;
//!   latency is the routing walk plus one parallel store leg.
//! - Blockchain model: one broadcast to the other `n - 1` nodes plus one
//!   commit-round message from each, and a fixed consensus commit delay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingMode {
    Dht,
    BlockchainModel,
}

/// Constants of the cost model; all config-exposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModelConfig {
    /// Swarm size the log is spread over.
    pub swarm_size: usize,
    /// DHT replication factor.
    pub replication_k: usize,
    /// Serialized audit record size in bytes.
    pub record_bytes: u64,
    /// Fixed per-message framing overhead in bytes.
    pub frame_overhead_bytes: u64,
    /// One-way link latency in seconds.
    pub link_latency_s: f64,
    /// Blockchain consensus commit delay per entry, seconds.
    pub blockchain_commit_s: f64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        Self {
            swarm_size: 100,
            replication_k: 4,
            record_bytes: 128,
            frame_overhead_bytes: 32,
            link_latency_s: 0.005,
            blockchain_commit_s: 0.5,
        }
    }
}

/// Total message/byte counts for `event_count` events plus the per-event
/// logging latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub messages: u64,
    pub bytes: u64,
    /// Latency to log one event; 0 when no events are logged.
    pub latency_s: f64,
}

fn routing_hops(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64 + 2
    }
}

pub fn logging_cost(event_count: u64, mode: LoggingMode, cfg: &CostModelConfig) -> CostReport {
    if event_count == 0 {
        return CostReport {
            messages: 0,
            bytes: 0,
            latency_s: 0.0,
        };
    }
    let n = cfg.swarm_size as u64;
    let k = cfg.replication_k as u64;
    match mode {
        LoggingMode::Dht => {
            let hops = routing_hops(cfg.swarm_size);
            let messages_per_event = hops + k;
            let bytes_per_event =
                messages_per_event * cfg.frame_overhead_bytes + k * cfg.record_bytes;
            CostReport {
                messages: event_count * messages_per_event,
                bytes: event_count * bytes_per_event,
                latency_s: (hops as f64 + 1.0) * cfg.link_latency_s,
            }
        }
        LoggingMode::BlockchainModel => {
            let fanout = n.saturating_sub(1);
            let messages_per_event = 2 * fanout;
            let bytes_per_event =
                messages_per_event * cfg.frame_overhead_bytes + fanout * cfg.record_bytes;
            CostReport {
                messages: event_count * messages_per_event,
                bytes: event_count * bytes_per_event,
                latency_s: cfg.blockchain_commit_s + cfg.link_latency_s,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_events_cost_nothing() {
        let cfg = CostModelConfig::default();
        for mode in [LoggingMode::Dht, LoggingMode::BlockchainModel] {
            let r = logging_cost(0, mode, &cfg);
            assert_eq!((r.messages, r.bytes), (0, 0));
            assert_eq!(r.latency_s, 0.0);
        }
    }

    #[test]
    fn single_event_at_n50_matches_formulas() {
        let cfg = CostModelConfig {
            swarm_size: 50,
            ..CostModelConfig::default()
        };
        let dht = logging_cost(1, LoggingMode::Dht, &cfg);
        // ceil(log2 50) = 6, hops 8, plus 4 stores.
        assert_eq!(dht.messages, 12);
        assert_eq!(dht.bytes, 12 * 32 + 4 * 128);

        let chain = logging_cost(1, LoggingMode::BlockchainModel, &cfg);
        assert_eq!(chain.messages, 2 * 49);
        assert_eq!(chain.bytes, 98 * 32 + 49 * 128);
        let ratio = dht.messages as f64 / chain.messages as f64;
        assert!(ratio < 0.20);
    }

    #[test]
    fn latency_split_matches_the_model() {
        let cfg = CostModelConfig::default();
        let chain = logging_cost(3, LoggingMode::BlockchainModel, &cfg);
        assert!(chain.latency_s >= 0.5);
        let dht = logging_cost(3, LoggingMode::Dht, &cfg);
        assert!(dht.latency_s < 0.5);
    }
}
