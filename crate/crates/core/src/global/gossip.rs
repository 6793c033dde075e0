//! Gossip event DAG and ancestor-threshold decision ordering.
//!
//! Nodes exchange full event sets pairwise and append one sync event per
//! round, so the DAG records who has seen what. A decision (an event
//! carrying a payload) commits once events from more than `2n/3` distinct
//! creators descend from it; committed decisions are ordered by the median
//! of the per-creator first-seen timestamps, ties broken by event hash.
//! This is a deliberately simplified ordering rule, not a faithful
//! Hashgraph: no rounds, witnesses, or fame elections.
//!
//! Event hash preimage: `creator: u32 | self_parent: 0x00 or 0x01+32 |
//! other_parent: same | payload: 0x00 or 0x01 + len: u32 + bytes |
//! created_at: f64 bits`, integers little-endian. The serialized frame is
//! the preimage plus the 32-byte hash, verified on decode.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::hash::Digest256;
use crate::gradient::{Reader, WireError};

#[derive(Debug, Error, PartialEq)]
pub enum GossipError {
    #[error("event parent {0:?} missing from dag")]
    MissingParent(Digest256),
    #[error("event hash does not match its fields")]
    HashMismatch,
    #[error("fault bound violated: need 3f < n, got f = {f}, n = {n}")]
    FaultBound { f: usize, n: usize },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// One hash-linked gossip event.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipEvent {
    pub creator: u32,
    pub self_parent: Option<Digest256>,
    pub other_parent: Option<Digest256>,
    /// Present iff this event carries a swarm decision.
    pub payload: Option<Vec<u8>>,
    pub created_at: f64,
    pub hash: Digest256,
}

impl GossipEvent {
    pub fn new(
        creator: u32,
        self_parent: Option<Digest256>,
        other_parent: Option<Digest256>,
        payload: Option<Vec<u8>>,
        created_at: f64,
    ) -> Self {
        let mut e = Self {
            creator,
            self_parent,
            other_parent,
            payload,
            created_at,
            hash: Digest256([0; 32]),
        };
        e.hash = Digest256::of(&e.hash_preimage());
        e
    }

    fn hash_preimage(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&self.creator.to_le_bytes());
        for parent in [&self.self_parent, &self.other_parent] {
            match parent {
                None => buf.push(0),
                Some(h) => {
                    buf.push(1);
                    buf.extend_from_slice(h.as_bytes());
                }
            }
        }
        match &self.payload {
            None => buf.push(0),
            Some(p) => {
                buf.push(1);
                buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
                buf.extend_from_slice(p);
            }
        }
        buf.extend_from_slice(&self.created_at.to_bits().to_le_bytes());
        buf
    }
}

pub fn encode_event(e: &GossipEvent) -> Vec<u8> {
    let mut out = e.hash_preimage();
    out.extend_from_slice(e.hash.as_bytes());
    out
}

pub fn decode_event(bytes: &[u8]) -> Result<GossipEvent, GossipError> {
    let mut r = Reader::new(bytes);
    let creator = r.u32()?;
    let parent = |r: &mut Reader| -> Result<Option<Digest256>, WireError> {
        match r.u8()? {
            0 => Ok(None),
            _ => {
                let mut h = [0u8; 32];
                h.copy_from_slice(r.bytes_exact(32)?);
                Ok(Some(Digest256(h)))
            }
        }
    };
    let self_parent = parent(&mut r)?;
    let other_parent = parent(&mut r)?;
    let payload = match r.u8()? {
        0 => None,
        _ => {
            let len = r.u32()? as usize;
            Some(r.bytes_exact(len)?.to_vec())
        }
    };
    let created_at = f64::from_bits(u64::from_le_bytes(
        r.bytes_exact(8)?.try_into().expect("8 bytes"),
    ));
    let mut hash = [0u8; 32];
    hash.copy_from_slice(r.bytes_exact(32)?);
    r.finish()?;

    let rebuilt = GossipEvent::new(creator, self_parent, other_parent, payload, created_at);
    if rebuilt.hash != Digest256(hash) {
        return Err(GossipError::HashMismatch);
    }
    Ok(rebuilt)
}

/// Append-only event DAG; inserts require parents to be present, which
/// keeps the graph acyclic and the insertion order topological.
#[derive(Debug, Clone, Default)]
pub struct Dag {
    events: BTreeMap<Digest256, GossipEvent>,
    children: BTreeMap<Digest256, Vec<Digest256>>,
    order: Vec<Digest256>,
}

impl Dag {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, hash: &Digest256) -> bool {
        self.events.contains_key(hash)
    }

    pub fn get(&self, hash: &Digest256) -> Option<&GossipEvent> {
        self.events.get(hash)
    }

    /// Events in insertion order (parents before children).
    pub fn topological(&self) -> impl Iterator<Item = &GossipEvent> {
        self.order.iter().map(|h| &self.events[h])
    }

    pub fn insert(&mut self, event: GossipEvent) -> Result<(), GossipError> {
        let expected = GossipEvent::new(
            event.creator,
            event.self_parent,
            event.other_parent,
            event.payload.clone(),
            event.created_at,
        );
        if expected.hash != event.hash {
            return Err(GossipError::HashMismatch);
        }
        if self.events.contains_key(&event.hash) {
            return Ok(());
        }
        for parent in [event.self_parent, event.other_parent].into_iter().flatten() {
            if !self.events.contains_key(&parent) {
                return Err(GossipError::MissingParent(parent));
            }
        }
        for parent in [event.self_parent, event.other_parent].into_iter().flatten() {
            self.children.entry(parent).or_default().push(event.hash);
        }
        self.order.push(event.hash);
        self.events.insert(event.hash, event);
        Ok(())
    }

    /// Creators with at least one event descending from `root` (an event
    /// is its own descendant) and, per creator, the earliest such
    /// timestamp.
    fn first_seen_by_creator(&self, root: &Digest256) -> BTreeMap<u32, f64> {
        let mut first_seen: BTreeMap<u32, f64> = BTreeMap::new();
        let mut visited: BTreeSet<Digest256> = BTreeSet::new();
        let mut queue = VecDeque::from([*root]);
        visited.insert(*root);
        while let Some(h) = queue.pop_front() {
            let e = &self.events[&h];
            let entry = first_seen.entry(e.creator).or_insert(f64::INFINITY);
            if e.created_at < *entry {
                *entry = e.created_at;
            }
            if let Some(children) = self.children.get(&h) {
                for c in children {
                    if visited.insert(*c) {
                        queue.push_back(*c);
                    }
                }
            }
        }
        first_seen
    }
}

/// One committed decision in consensus order.
#[derive(Debug, Clone, PartialEq)]
pub struct CommittedDecision {
    pub payload: Vec<u8>,
    pub event_hash: Digest256,
    pub creator: u32,
    pub median_first_seen: f64,
}

/// Deterministic decision order over a DAG: commit on evidence from more
/// than `2n/3` distinct creators, order by median first-seen timestamp,
/// ties by event hash. Pure in the DAG, so any two nodes with equal DAGs
/// agree exactly.
pub fn virtual_vote_order(
    dag: &Dag,
    n: usize,
    f: usize,
) -> Result<Vec<CommittedDecision>, GossipError> {
    if 3 * f >= n {
        return Err(GossipError::FaultBound { f, n });
    }
    let mut committed = Vec::new();
    for event in dag.topological() {
        let Some(payload) = &event.payload else {
            continue;
        };
        let first_seen = dag.first_seen_by_creator(&event.hash);
        // Strict: seen_creators > 2n/3.
        if 3 * first_seen.len() <= 2 * n {
            continue;
        }
        let mut times: Vec<f64> = first_seen.values().copied().collect();
        times.sort_by(f64::total_cmp);
        let median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
        };
        committed.push(CommittedDecision {
            payload: payload.clone(),
            event_hash: event.hash,
            creator: event.creator,
            median_first_seen: median,
        });
    }
    committed.sort_by(|a, b| {
        a.median_first_seen
            .total_cmp(&b.median_first_seen)
            .then_with(|| a.event_hash.cmp(&b.event_hash))
    });
    Ok(committed)
}

/// One gossip participant.
#[derive(Debug, Clone)]
pub struct GossipNode {
    pub node_id: u32,
    pub dag: Dag,
    latest_own: Option<Digest256>,
}

impl GossipNode {
    pub fn new(node_id: u32) -> Self {
        Self {
            node_id,
            dag: Dag::default(),
            latest_own: None,
        }
    }

    pub fn latest_own(&self) -> Option<Digest256> {
        self.latest_own
    }

    /// Append an event of our own; decisions carry a payload.
    pub fn create_event(&mut self, payload: Option<Vec<u8>>, now: f64) -> Digest256 {
        let event = GossipEvent::new(self.node_id, self.latest_own, None, payload, now);
        let hash = event.hash;
        self.dag.insert(event).expect("own parents are present");
        self.latest_own = Some(hash);
        hash
    }
}

/// Outcome of one pairwise sync.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GossipRoundStats {
    pub events_to_a: usize,
    pub events_to_b: usize,
    pub bytes: u64,
}

/// Full pairwise sync: each side learns every event the other knows, then
/// each appends one sync event whose other-parent is the peer's latest
/// pre-round own event.
pub fn gossip_round(a: &mut GossipNode, b: &mut GossipNode, now: f64) -> GossipRoundStats {
    let a_latest = a.latest_own;
    let b_latest = b.latest_own;

    let mut to_b = Vec::new();
    for e in a.dag.topological() {
        if !b.dag.contains(&e.hash) {
            to_b.push(e.clone());
        }
    }
    let mut to_a = Vec::new();
    for e in b.dag.topological() {
        if !a.dag.contains(&e.hash) {
            to_a.push(e.clone());
        }
    }
    let mut bytes = 0u64;
    for e in &to_b {
        bytes += encode_event(e).len() as u64;
    }
    for e in &to_a {
        bytes += encode_event(e).len() as u64;
    }
    let events_to_a = to_a.len();
    let events_to_b = to_b.len();
    for e in to_b {
        b.dag.insert(e).expect("sender ships parents first");
    }
    for e in to_a {
        a.dag.insert(e).expect("sender ships parents first");
    }

    let ea = GossipEvent::new(a.node_id, a.latest_own, b_latest, None, now);
    let ha = ea.hash;
    a.dag.insert(ea).expect("parents synced");
    a.latest_own = Some(ha);

    let eb = GossipEvent::new(b.node_id, b.latest_own, a_latest, None, now);
    let hb = eb.hash;
    b.dag.insert(eb).expect("parents synced");
    b.latest_own = Some(hb);

    GossipRoundStats {
        events_to_a,
        events_to_b,
        bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn sync_of_identical_sets_adds_one_event_each() {
        let mut a = GossipNode::new(0);
        a.create_event(Some(vec![1]), 0.0);
        a.create_event(None, 0.5);
        // Give b a bitwise copy of a's knowledge.
        let mut b = GossipNode::new(1);
        for e in a.dag.topological() {
            b.dag.insert(e.clone()).unwrap();
        }
        let before = a.dag.len();
        let stats = gossip_round(&mut a, &mut b, 1.0);
        assert_eq!(stats.events_to_a, 0);
        assert_eq!(stats.events_to_b, 0);
        // Each side gains exactly its own sync event.
        assert_eq!(a.dag.len(), before + 1);
        assert_eq!(b.dag.len(), before + 1);
    }

    #[test]
    fn events_propagate_to_empty_peer() {
        let mut a = GossipNode::new(0);
        let mut b = GossipNode::new(1);
        let e1 = a.create_event(Some(b"move".to_vec()), 0.0);
        gossip_round(&mut a, &mut b, 0.5);
        assert!(b.dag.contains(&e1));
    }

    #[test]
    fn random_gossip_floods_within_log_rounds() {
        // n = 8 full random gossip: an event reaches everyone within 8
        // rounds, across 20 seeds.
        for seed in 0..20u64 {
            let mut rng = RngStream::new(seed, 0);
            let mut nodes: Vec<GossipNode> = (0..8).map(GossipNode::new).collect();
            let hash = nodes[0].create_event(Some(vec![7]), 0.0);
            let mut rounds = 0;
            while nodes.iter().any(|n| !n.dag.contains(&hash)) {
                rounds += 1;
                assert!(rounds <= 8, "seed {seed} took more than 8 rounds");
                // One round: every node gossips with one random partner.
                for i in 0..nodes.len() {
                    let j = (rng.next_u64() as usize) % (nodes.len() - 1);
                    let j = if j >= i { j + 1 } else { j };
                    let (lo, hi) = (i.min(j), i.max(j));
                    let (left, right) = nodes.split_at_mut(hi);
                    gossip_round(&mut left[lo], &mut right[0], rounds as f64);
                }
            }
        }
    }

    #[test]
    fn single_decision_commits_everywhere_first() {
        let mut nodes: Vec<GossipNode> = (0..4).map(GossipNode::new).collect();
        nodes[2].create_event(Some(b"decision".to_vec()), 0.0);
        // Ring gossip until everyone has everything.
        for round in 1..6 {
            for i in 0..4 {
                let j = (i + 1) % 4;
                let (lo, hi) = (i.min(j), i.max(j));
                let (left, right) = nodes.split_at_mut(hi);
                gossip_round(&mut left[lo], &mut right[0], round as f64);
            }
        }
        for node in &nodes {
            let out = virtual_vote_order(&node.dag, 4, 1).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].payload, b"decision".to_vec());
        }
    }

    #[test]
    fn silent_minority_does_not_block_commit() {
        // n = 4 with one silent node: 3 active creators > 2n/3.
        let mut nodes: Vec<GossipNode> = (0..3).map(GossipNode::new).collect();
        nodes[0].create_event(Some(b"land".to_vec()), 0.0);
        for round in 1..5 {
            for i in 0..3 {
                let j = (i + 1) % 3;
                let (lo, hi) = (i.min(j), i.max(j));
                let (left, right) = nodes.split_at_mut(hi);
                gossip_round(&mut left[lo], &mut right[0], round as f64);
            }
        }
        let out = virtual_vote_order(&nodes[0].dag, 4, 1).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn concurrent_decisions_order_identically() {
        // Two decisions born at different nodes; after full propagation
        // every honest node computes the same order as the centralized
        // full-information oracle.
        for seed in 0..10u64 {
            let mut rng = RngStream::new(seed, 1);
            let mut nodes: Vec<GossipNode> = (0..6).map(GossipNode::new).collect();
            nodes[1].create_event(Some(b"alpha".to_vec()), 0.01);
            nodes[4].create_event(Some(b"beta".to_vec()), 0.012);
            let mut t = 1.0;
            for _ in 0..12 {
                for i in 0..nodes.len() {
                    let j = (rng.next_u64() as usize) % (nodes.len() - 1);
                    let j = if j >= i { j + 1 } else { j };
                    let (lo, hi) = (i.min(j), i.max(j));
                    let (left, right) = nodes.split_at_mut(hi);
                    gossip_round(&mut left[lo], &mut right[0], t);
                    t += 0.01;
                }
            }
            let reference: Vec<_> = virtual_vote_order(&nodes[0].dag, 6, 1)
                .unwrap()
                .into_iter()
                .map(|d| d.event_hash)
                .collect();
            assert_eq!(reference.len(), 2);
            for node in &nodes[1..] {
                let got: Vec<_> = virtual_vote_order(&node.dag, 6, 1)
                    .unwrap()
                    .into_iter()
                    .map(|d| d.event_hash)
                    .collect();
                assert_eq!(got, reference, "seed {seed}");
            }
        }
    }

    #[test]
    fn dag_rejects_orphans_and_bad_hashes() {
        let mut dag = Dag::default();
        let parentless = GossipEvent::new(0, None, None, None, 0.0);
        dag.insert(parentless.clone()).unwrap();
        let orphan = GossipEvent::new(
            1,
            Some(Digest256::of(b"nowhere")),
            None,
            None,
            1.0,
        );
        assert!(matches!(
            dag.insert(orphan),
            Err(GossipError::MissingParent(_))
        ));
        let mut tampered = GossipEvent::new(0, Some(parentless.hash), None, None, 2.0);
        tampered.created_at = 3.0;
        assert_eq!(dag.insert(tampered), Err(GossipError::HashMismatch));
    }

    #[test]
    fn event_frames_verify_hashes_on_decode() {
        let e = GossipEvent::new(3, None, None, Some(vec![1, 2]), 1.5);
        let mut bytes = encode_event(&e);
        assert_eq!(decode_event(&bytes).unwrap(), e);
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert_eq!(decode_event(&bytes), Err(GossipError::HashMismatch));
    }

    #[test]
    fn fault_bound_is_enforced() {
        let dag = Dag::default();
        assert!(matches!(
            virtual_vote_order(&dag, 3, 1),
            Err(GossipError::FaultBound { .. })
        ));
    }
}
