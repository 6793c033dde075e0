//! Kademlia-style DHT over the simulated swarm.
//!
//! Nodes keep one bucket per XOR-prefix depth, each holding up to `K`
//! peers (the closest to the owner at that depth). Lookups run in rounds:
//! every round queries the unvisited members of the current best-`K`
//! shortlist in parallel and merges their answers, so the hop count is the
//! number of rounds. Values are replicated onto the `K` nodes closest to
//! the key.
//!
//! Message frames are tagged binary: `tag: u8 | from: 20 bytes | body`.
//! Tags: 0 PING, 1 STORE (key 20 | len: u32 | value), 2 FIND_NODE
//! (target 20), 3 FIND_VALUE (target 20), 4 NODES reply (count: u32 |
//! count x 20), 5 VALUE reply (len: u32 | value).

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::hash::{DhtKey, KEY_BITS};
use crate::gradient::{Reader, WireError};

pub const DEFAULT_REPLICATION: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum DhtError {
    #[error("unknown node {0:?}")]
    UnknownNode(DhtKey),
    #[error("unknown frame tag {0}")]
    UnknownTag(u8),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// One DHT participant: routing buckets plus a local key/value store.
#[derive(Debug, Clone)]
pub struct DhtNode {
    pub node_id: DhtKey,
    /// `buckets[b]` holds peers whose XOR distance to us has prefix
    /// length exactly `b`.
    buckets: Vec<Vec<DhtKey>>,
    pub store: BTreeMap<DhtKey, Vec<u8>>,
    k: usize,
}

impl DhtNode {
    pub fn new(node_id: DhtKey, k: usize) -> Self {
        Self {
            node_id,
            buckets: vec![Vec::new(); KEY_BITS],
            store: BTreeMap::new(),
            k,
        }
    }

    /// Record a peer; each bucket keeps the `k` peers closest to us.
    pub fn observe(&mut self, peer: DhtKey) {
        if peer == self.node_id {
            return;
        }
        // Distinct keys always differ within 160 bits.
        let b = self.node_id.prefix_len(&peer);
        let bucket = &mut self.buckets[b];
        if bucket.contains(&peer) {
            return;
        }
        bucket.push(peer);
        let me = self.node_id;
        bucket.sort_by(|a, b| me.distance(a).cmp(&me.distance(b)).then(a.cmp(b)));
        bucket.truncate(self.k);
    }

    /// The `count` known peers closest to `key` (not including ourselves).
    pub fn closest_known(&self, key: &DhtKey, count: usize) -> Vec<DhtKey> {
        let mut all: Vec<DhtKey> = self.buckets.iter().flatten().copied().collect();
        all.sort_by(|a, b| key.distance(a).cmp(&key.distance(b)).then(a.cmp(b)));
        all.truncate(count);
        all
    }

    pub fn bucket(&self, depth: usize) -> &[DhtKey] {
        &self.buckets[depth]
    }
}

/// Result of one store: where the value landed and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreReceipt {
    pub stored_at: BTreeSet<DhtKey>,
    pub hops: usize,
    pub messages: u64,
    pub bytes: u64,
}

/// Result of one lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupResult {
    pub value: Option<Vec<u8>>,
    pub hops: usize,
    pub messages: u64,
    pub bytes: u64,
}

/// The whole simulated DHT; in-process message passing with per-frame
/// byte accounting.
#[derive(Debug, Clone)]
pub struct DhtNetwork {
    nodes: BTreeMap<DhtKey, DhtNode>,
    k: usize,
}

impl DhtNetwork {
    pub fn new(k: usize) -> Self {
        Self {
            nodes: BTreeMap::new(),
            k,
        }
    }

    /// Build a network of `ids` and bootstrap every routing table by
    /// letting each node observe every other. Buckets cap at `k`, so
    /// tables stay logarithmic despite the full pass.
    pub fn bootstrap(ids: impl IntoIterator<Item = DhtKey>, k: usize) -> Self {
        let mut net = Self::new(k);
        let ids: Vec<DhtKey> = ids.into_iter().collect();
        for id in &ids {
            net.nodes.insert(*id, DhtNode::new(*id, k));
        }
        for a in &ids {
            let node = net.nodes.get_mut(a).expect("bootstrapped node");
            for b in &ids {
                node.observe(*b);
            }
        }
        net
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &DhtKey) -> Option<&DhtNode> {
        self.nodes.get(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &DhtKey> {
        self.nodes.keys()
    }

    /// Brute-force `k`-closest oracle over all live nodes.
    pub fn k_closest_brute_force(&self, key: &DhtKey) -> BTreeSet<DhtKey> {
        let mut all: Vec<DhtKey> = self.nodes.keys().copied().collect();
        all.sort_by(|a, b| key.distance(a).cmp(&key.distance(b)).then(a.cmp(b)));
        all.truncate(self.k);
        all.into_iter().collect()
    }

    /// Iterative node lookup from `origin`. Returns the `k` closest nodes
    /// found, the number of query rounds (hops), and the frames exchanged.
    fn lookup_nodes(
        &self,
        origin: &DhtKey,
        key: &DhtKey,
    ) -> Result<(Vec<DhtKey>, usize, u64, u64), DhtError> {
        let origin_node = self.nodes.get(origin).ok_or(DhtError::UnknownNode(*origin))?;
        let mut seen: BTreeSet<DhtKey> = BTreeSet::new();
        seen.insert(*origin);
        for p in origin_node.closest_known(key, self.k) {
            seen.insert(p);
        }
        let mut queried: BTreeSet<DhtKey> = BTreeSet::new();
        queried.insert(*origin);

        let mut hops = 0usize;
        let mut messages = 0u64;
        let mut bytes = 0u64;

        loop {
            let mut ranked: Vec<DhtKey> = seen.iter().copied().collect();
            ranked.sort_by(|a, b| key.distance(a).cmp(&key.distance(b)).then(a.cmp(b)));
            let pending: Vec<DhtKey> = ranked
                .iter()
                .take(self.k)
                .filter(|n| !queried.contains(n))
                .copied()
                .collect();
            if pending.is_empty() {
                ranked.truncate(self.k);
                return Ok((ranked, hops, messages, bytes));
            }
            hops += 1;
            for peer in pending {
                queried.insert(peer);
                let request = DhtMessage::FindNode {
                    from: *origin,
                    target: *key,
                };
                bytes += encode_message(&request).len() as u64;
                messages += 1;
                let node = self.nodes.get(&peer).ok_or(DhtError::UnknownNode(peer))?;
                let answer = node.closest_known(key, self.k);
                let reply = DhtMessage::Nodes {
                    from: peer,
                    nodes: answer.clone(),
                };
                bytes += encode_message(&reply).len() as u64;
                messages += 1;
                for n in answer {
                    seen.insert(n);
                }
            }
        }
    }

    /// Replicate `value` onto the `k` nodes closest to `key`.
    pub fn store(
        &mut self,
        origin: &DhtKey,
        key: DhtKey,
        value: Vec<u8>,
    ) -> Result<StoreReceipt, DhtError> {
        let (closest, hops, mut messages, mut bytes) = self.lookup_nodes(origin, &key)?;
        let mut stored_at = BTreeSet::new();
        for target in closest {
            let frame = DhtMessage::Store {
                from: *origin,
                key,
                value: value.clone(),
            };
            if target != *origin {
                bytes += encode_message(&frame).len() as u64;
                messages += 1;
            }
            let node = self.nodes.get_mut(&target).ok_or(DhtError::UnknownNode(target))?;
            node.store.insert(key, value.clone());
            stored_at.insert(target);
        }
        Ok(StoreReceipt {
            stored_at,
            hops,
            messages,
            bytes,
        })
    }

    /// Iterative value lookup; returns as soon as a queried node holds the
    /// key.
    pub fn lookup(&self, origin: &DhtKey, key: &DhtKey) -> Result<LookupResult, DhtError> {
        let origin_node = self.nodes.get(origin).ok_or(DhtError::UnknownNode(*origin))?;
        if let Some(v) = origin_node.store.get(key) {
            return Ok(LookupResult {
                value: Some(v.clone()),
                hops: 0,
                messages: 0,
                bytes: 0,
            });
        }

        let mut seen: BTreeSet<DhtKey> = BTreeSet::new();
        seen.insert(*origin);
        for p in origin_node.closest_known(key, self.k) {
            seen.insert(p);
        }
        let mut queried: BTreeSet<DhtKey> = BTreeSet::new();
        queried.insert(*origin);

        let mut hops = 0usize;
        let mut messages = 0u64;
        let mut bytes = 0u64;

        loop {
            let mut ranked: Vec<DhtKey> = seen.iter().copied().collect();
            ranked.sort_by(|a, b| key.distance(a).cmp(&key.distance(b)).then(a.cmp(b)));
            let pending: Vec<DhtKey> = ranked
                .iter()
                .take(self.k)
                .filter(|n| !queried.contains(n))
                .copied()
                .collect();
            if pending.is_empty() {
                return Ok(LookupResult {
                    value: None,
                    hops,
                    messages,
                    bytes,
                });
            }
            hops += 1;
            for peer in pending {
                queried.insert(peer);
                let request = DhtMessage::FindValue {
                    from: *origin,
                    target: *key,
                };
                bytes += encode_message(&request).len() as u64;
                messages += 1;
                let node = self.nodes.get(&peer).ok_or(DhtError::UnknownNode(peer))?;
                if let Some(v) = node.store.get(key) {
                    let reply = DhtMessage::Value {
                        from: peer,
                        value: v.clone(),
                    };
                    bytes += encode_message(&reply).len() as u64;
                    messages += 1;
                    return Ok(LookupResult {
                        value: Some(v.clone()),
                        hops,
                        messages,
                        bytes,
                    });
                }
                let answer = node.closest_known(key, self.k);
                let reply = DhtMessage::Nodes {
                    from: peer,
                    nodes: answer.clone(),
                };
                bytes += encode_message(&reply).len() as u64;
                messages += 1;
                for n in answer {
                    seen.insert(n);
                }
            }
        }
    }
}

/// DHT wire frames.
#[derive(Debug, Clone, PartialEq)]
pub enum DhtMessage {
    Ping { from: DhtKey },
    Store { from: DhtKey, key: DhtKey, value: Vec<u8> },
    FindNode { from: DhtKey, target: DhtKey },
    FindValue { from: DhtKey, target: DhtKey },
    Nodes { from: DhtKey, nodes: Vec<DhtKey> },
    Value { from: DhtKey, value: Vec<u8> },
}

pub fn encode_message(msg: &DhtMessage) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        DhtMessage::Ping { from } => {
            out.push(0);
            out.extend_from_slice(&from.0);
        }
        DhtMessage::Store { from, key, value } => {
            out.push(1);
            out.extend_from_slice(&from.0);
            out.extend_from_slice(&key.0);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
            out.extend_from_slice(value);
        }
        DhtMessage::FindNode { from, target } => {
            out.push(2);
            out.extend_from_slice(&from.0);
            out.extend_from_slice(&target.0);
        }
        DhtMessage::FindValue { from, target } => {
            out.push(3);
            out.extend_from_slice(&from.0);
            out.extend_from_slice(&target.0);
        }
        DhtMessage::Nodes { from, nodes } => {
            out.push(4);
            out.extend_from_slice(&from.0);
            out.extend_from_slice(&(nodes.len() as u32).to_le_bytes());
            for n in nodes {
                out.extend_from_slice(&n.0);
            }
        }
        DhtMessage::Value { from, value } => {
            out.push(5);
            out.extend_from_slice(&from.0);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
            out.extend_from_slice(value);
        }
    }
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<DhtMessage, DhtError> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    let key20 = |r: &mut Reader| -> Result<DhtKey, WireError> {
        let mut out = [0u8; 20];
        out.copy_from_slice(r.bytes_exact(20)?);
        Ok(DhtKey(out))
    };
    let msg = match tag {
        0 => DhtMessage::Ping { from: key20(&mut r)? },
        1 => {
            let from = key20(&mut r)?;
            let key = key20(&mut r)?;
            let len = r.u32()? as usize;
            let value = r.bytes_exact(len)?.to_vec();
            DhtMessage::Store { from, key, value }
        }
        2 => {
            let from = key20(&mut r)?;
            let target = key20(&mut r)?;
            DhtMessage::FindNode { from, target }
        }
        3 => {
            let from = key20(&mut r)?;
            let target = key20(&mut r)?;
            DhtMessage::FindValue { from, target }
        }
        4 => {
            let from = key20(&mut r)?;
            let count = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                nodes.push(key20(&mut r)?);
            }
            DhtMessage::Nodes { from, nodes }
        }
        5 => {
            let from = key20(&mut r)?;
            let len = r.u32()? as usize;
            let value = r.bytes_exact(len)?.to_vec();
            DhtMessage::Value { from, value }
        }
        other => return Err(DhtError::UnknownTag(other)),
    };
    r.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn key_of(i: u64) -> DhtKey {
        DhtKey::of(&i.to_le_bytes())
    }

    fn network(n: u64) -> DhtNetwork {
        DhtNetwork::bootstrap((0..n).map(key_of), DEFAULT_REPLICATION)
    }

    #[test]
    fn single_node_stores_on_itself_with_zero_hops() {
        let mut net = network(1);
        let origin = key_of(0);
        let receipt = net.store(&origin, DhtKey::of(b"k"), b"v".to_vec()).unwrap();
        assert_eq!(receipt.hops, 0);
        assert_eq!(receipt.stored_at, BTreeSet::from([origin]));
        let found = net.lookup(&origin, &DhtKey::of(b"k")).unwrap();
        assert_eq!(found.value.as_deref(), Some(b"v".as_slice()));
        assert_eq!(found.hops, 0);
    }

    #[test]
    fn store_then_lookup_round_trips() {
        let mut net = network(16);
        let origin = key_of(3);
        let key = DhtKey::of(b"payload");
        net.store(&origin, key, b"hello".to_vec()).unwrap();
        for probe in 0..16 {
            let got = net.lookup(&key_of(probe), &key).unwrap();
            assert_eq!(got.value.as_deref(), Some(b"hello".as_slice()));
        }
    }

    #[test]
    fn storing_set_matches_brute_force_and_hops_bounded() {
        let mut net = network(64);
        let mut rng = RngStream::new(5, 0);
        for trial in 0..200u32 {
            let key = DhtKey::of(&rng.next_u64().to_le_bytes());
            let origin = key_of(u64::from(trial) % 64);
            let receipt = net.store(&origin, key, vec![trial as u8]).unwrap();
            assert_eq!(
                receipt.stored_at,
                net.k_closest_brute_force(&key),
                "trial {trial}"
            );
            // ceil(log2 64) + 2 = 8.
            assert!(receipt.hops <= 8, "trial {trial}: {} hops", receipt.hops);
            let got = net.lookup(&origin, &key).unwrap();
            assert_eq!(got.value, Some(vec![trial as u8]));
            assert!(got.hops <= 8);
        }
    }

    #[test]
    fn missing_key_reports_not_found() {
        let net = network(8);
        let got = net.lookup(&key_of(0), &DhtKey::of(b"absent")).unwrap();
        assert_eq!(got.value, None);
    }

    #[test]
    fn buckets_hold_matching_prefixes_only() {
        let net = network(32);
        for id in net.node_ids() {
            let node = net.node(id).unwrap();
            for depth in 0..KEY_BITS {
                let bucket = node.bucket(depth);
                assert!(bucket.len() <= DEFAULT_REPLICATION);
                for peer in bucket {
                    assert_eq!(id.prefix_len(peer), depth);
                }
            }
        }
    }

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            DhtMessage::Ping { from: key_of(1) },
            DhtMessage::Store {
                from: key_of(1),
                key: key_of(2),
                value: vec![1, 2, 3],
            },
            DhtMessage::FindNode {
                from: key_of(1),
                target: key_of(9),
            },
            DhtMessage::FindValue {
                from: key_of(1),
                target: key_of(9),
            },
            DhtMessage::Nodes {
                from: key_of(1),
                nodes: vec![key_of(2), key_of(3)],
            },
            DhtMessage::Value {
                from: key_of(4),
                value: vec![9; 40],
            },
        ];
        for m in msgs {
            assert_eq!(decode_message(&encode_message(&m)).unwrap(), m);
        }
        assert_eq!(decode_message(&[9u8, 0, 0]), Err(DhtError::UnknownTag(9)));
    }
}
