//! Salted-hash audit commitments.
//!
//! Critical actions are logged as commitments
//! `H(action_digest || state_digest || rule_id || salt)` keyed into the
//! DHT by the truncated hash of the commitment. Verification is by reveal;
//! this is a commitment stub, deliberately not a zero-knowledge proof.
//!
//! Record wire layout: `action(32) | state(32) | rule_len: u32 |
//! rule_id bytes | salt(16) | commitment(32)`, integers little-endian.
//! Decoding recomputes and checks the commitment.

use thiserror::Error;

use super::hash::{Digest256, DhtKey};
use crate::gradient::{Reader, WireError};

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("stored commitment does not match the revealed fields")]
    CommitmentMismatch,
    #[error("rule id is not valid utf-8")]
    InvalidRuleId,
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// One committed audit entry, ready for DHT storage.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub action_digest: Digest256,
    pub state_digest: Digest256,
    pub rule_id: String,
    pub salt: [u8; 16],
    pub commitment: Digest256,
    /// DHT key: truncated hash of the commitment.
    pub key: DhtKey,
}

fn commit(
    action_digest: &Digest256,
    state_digest: &Digest256,
    rule_id: &str,
    salt: &[u8; 16],
) -> Digest256 {
    let mut buf = Vec::with_capacity(80 + rule_id.len());
    buf.extend_from_slice(action_digest.as_bytes());
    buf.extend_from_slice(state_digest.as_bytes());
    buf.extend_from_slice(rule_id.as_bytes());
    buf.extend_from_slice(salt);
    Digest256::of(&buf)
}

/// Build the commitment record for one action under one compliance rule.
/// The salt should come from a named rng stream.
pub fn generate_proof(
    action_digest: Digest256,
    state_digest: Digest256,
    rule_id: &str,
    salt: [u8; 16],
) -> AuditRecord {
    let commitment = commit(&action_digest, &state_digest, rule_id, &salt);
    let key = DhtKey::from_digest(&Digest256::of(commitment.as_bytes()));
    AuditRecord {
        action_digest,
        state_digest,
        rule_id: rule_id.to_string(),
        salt,
        commitment,
        key,
    }
}

/// True iff the revealed tuple recommits to the stored commitment.
pub fn verify_proof(
    record: &AuditRecord,
    action_digest: &Digest256,
    state_digest: &Digest256,
    rule_id: &str,
    salt: &[u8; 16],
) -> bool {
    commit(action_digest, state_digest, rule_id, salt) == record.commitment
}

pub fn encode_audit_record(r: &AuditRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(116 + r.rule_id.len());
    out.extend_from_slice(r.action_digest.as_bytes());
    out.extend_from_slice(r.state_digest.as_bytes());
    out.extend_from_slice(&(r.rule_id.len() as u32).to_le_bytes());
    out.extend_from_slice(r.rule_id.as_bytes());
    out.extend_from_slice(&r.salt);
    out.extend_from_slice(r.commitment.as_bytes());
    out
}

pub fn decode_audit_record(bytes: &[u8]) -> Result<AuditRecord, AuditError> {
    let mut r = Reader::new(bytes);
    let mut action = [0u8; 32];
    action.copy_from_slice(r.bytes_exact(32)?);
    let mut state = [0u8; 32];
    state.copy_from_slice(r.bytes_exact(32)?);
    let rule_len = r.u32()? as usize;
    let rule_id = std::str::from_utf8(r.bytes_exact(rule_len)?)
        .map_err(|_| AuditError::InvalidRuleId)?
        .to_string();
    let mut salt = [0u8; 16];
    salt.copy_from_slice(r.bytes_exact(16)?);
    let mut commitment = [0u8; 32];
    commitment.copy_from_slice(r.bytes_exact(32)?);
    r.finish().map_err(AuditError::Wire)?;

    let record = generate_proof(Digest256(action), Digest256(state), &rule_id, salt);
    if record.commitment != Digest256(commitment) {
        return Err(AuditError::CommitmentMismatch);
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use std::collections::HashMap;

    fn digests(tag: u8) -> (Digest256, Digest256) {
        (Digest256::of(&[tag, 1]), Digest256::of(&[tag, 2]))
    }

    #[test]
    fn same_inputs_same_salt_commit_identically() {
        let (a, s) = digests(0);
        let salt = [7u8; 16];
        assert_eq!(
            generate_proof(a, s, "geofence", salt),
            generate_proof(a, s, "geofence", salt)
        );
    }

    #[test]
    fn salt_and_input_binding() {
        let (a, s) = digests(1);
        let base = generate_proof(a, s, "geofence", [0u8; 16]);
        let other_salt = generate_proof(a, s, "geofence", [1u8; 16]);
        assert_ne!(base.commitment, other_salt.commitment);

        // Flipping one bit of the action digest moves the commitment.
        let mut flipped = *a.as_bytes();
        flipped[0] ^= 1;
        let avalanche = generate_proof(Digest256(flipped), s, "geofence", [0u8; 16]);
        assert_ne!(base.commitment, avalanche.commitment);
    }

    #[test]
    fn verification_requires_the_exact_reveal() {
        let (a, s) = digests(2);
        let salt = [9u8; 16];
        let record = generate_proof(a, s, "corridor-keep", salt);
        assert!(verify_proof(&record, &a, &s, "corridor-keep", &salt));
        assert!(!verify_proof(&record, &a, &s, "corridor-keep", &[8u8; 16]));
        assert!(!verify_proof(&record, &a, &s, "corridor-kee", &salt));
    }

    #[test]
    fn decode_checks_the_commitment() {
        let (a, s) = digests(3);
        let record = generate_proof(a, s, "rule", [3u8; 16]);
        let mut bytes = encode_audit_record(&record);
        assert_eq!(decode_audit_record(&bytes).unwrap(), record);
        // Corrupt one salt byte: the stored commitment no longer matches.
        let salt_offset = 32 + 32 + 4 + 4;
        bytes[salt_offset] ^= 0xff;
        assert_eq!(
            decode_audit_record(&bytes),
            Err(AuditError::CommitmentMismatch)
        );
    }

    #[test]
    fn commitment_collision_smoke() {
        // 1e6 distinct random tuples, no two may share a commitment.
        let mut rng = RngStream::new(2024, 0);
        let mut seen: HashMap<Digest256, u64> = HashMap::with_capacity(1 << 20);
        for i in 0..1_000_000u64 {
            let action = Digest256::of(&rng.next_u64().to_le_bytes());
            let state = Digest256::of(&rng.next_u64().to_le_bytes());
            // Counter in the salt makes every tuple distinct by construction.
            let mut salt = [0u8; 16];
            salt[..8].copy_from_slice(&i.to_le_bytes());
            let record = generate_proof(action, state, "r", salt);
            if let Some(prev) = seen.insert(record.commitment, i) {
                panic!("distinct tuples {prev} and {i} share a commitment");
            }
        }
    }
}
