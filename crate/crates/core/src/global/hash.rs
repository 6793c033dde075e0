//! Digest and key types for the global layer.
//!
//! One fixed 256-bit digest (SHA-256) is used everywhere; DHT keys are its
//! 160-bit truncation.

use sha2::{Digest as _, Sha256};

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub fn of(bytes: &[u8]) -> Self {
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(bytes));
        Self(out)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..")
    }
}

/// 160-bit Kademlia key: truncated SHA-256.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtKey(pub [u8; 20]);

pub const KEY_BITS: usize = 160;

impl DhtKey {
    /// Truncate a digest to the key width.
    pub fn from_digest(d: &Digest256) -> Self {
        let mut out = [0u8; 20];
        out.copy_from_slice(&d.0[..20]);
        Self(out)
    }

    pub fn of(bytes: &[u8]) -> Self {
        Self::from_digest(&Digest256::of(bytes))
    }

    /// XOR metric, big-endian: compare distances lexicographically.
    pub fn distance(&self, other: &DhtKey) -> [u8; 20] {
        let mut out = [0u8; 20];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(&other.0)) {
            *o = a ^ b;
        }
        out
    }

    /// Leading zero bits of the XOR distance: the shared prefix length.
    /// Returns [`KEY_BITS`] for identical keys.
    pub fn prefix_len(&self, other: &DhtKey) -> usize {
        let d = self.distance(other);
        let mut bits = 0;
        for byte in d {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros() as usize;
                break;
            }
        }
        bits
    }
}

impl std::fmt::Debug for DhtKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(Digest256::of(b"abc"), Digest256::of(b"abc"));
        assert_ne!(Digest256::of(b"abc"), Digest256::of(b"abd"));
    }

    #[test]
    fn prefix_length_counts_shared_bits() {
        let a = DhtKey([0u8; 20]);
        let mut b = [0u8; 20];
        b[0] = 0b0000_1000;
        assert_eq!(a.prefix_len(&DhtKey(b)), 4);
        assert_eq!(a.prefix_len(&a), KEY_BITS);
    }

    #[test]
    fn distance_orders_lexicographically() {
        let base = DhtKey([0u8; 20]);
        let mut near = [0u8; 20];
        near[19] = 1;
        let mut far = [0u8; 20];
        far[0] = 1;
        assert!(base.distance(&DhtKey(near)) < base.distance(&DhtKey(far)));
    }
}
