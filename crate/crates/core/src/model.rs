//! Shared domain types and the geometric / digest primitives every other
//! module builds on.

use std::fmt;
use std::ops::{Add, Sub};

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Width of every digest produced by [`hash_digest`].
pub const DIGEST_LEN: usize = 16;

/// Stable, unique handle of a simulated node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Canonical little-endian encoding, used for hashing and wire records.
    pub fn to_bytes(self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.x.to_le_bytes());
        out[8..].copy_from_slice(&self.y.to_le_bytes());
        out
    }

    /// Exact bitwise equality; positions travel verbatim through messages.
    pub fn same_bits(&self, other: &Position) -> bool {
        self.x.to_bits() == other.x.to_bits() && self.y.to_bits() == other.y.to_bits()
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3},{:.3})", self.x, self.y)
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Simulated time (or a span of it) in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Rounds to the nearest microsecond; negative inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round().max(0.0) as u64)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Anonymous per-request node handle: a digest of (position, time).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PseudoId(pub [u8; DIGEST_LEN]);

impl fmt::Debug for PseudoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PseudoId({self})")
    }
}

impl fmt::Display for PseudoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Single-digit trust level, 0 (untrusted) through 9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrustLevel(u8);

impl TrustLevel {
    pub const MIN: TrustLevel = TrustLevel(0);
    pub const MAX: TrustLevel = TrustLevel(9);

    pub fn new(level: u8) -> Option<Self> {
        (level <= 9).then_some(TrustLevel(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Lowers the level, flooring at zero.
    pub fn decrease(self, by: u8) -> TrustLevel {
        TrustLevel(self.0.saturating_sub(by))
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Random code a node hands its position servers with every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AuthCode(pub u64);

/// Fixed 128-bit digest: the first 16 bytes of SHA-256.
pub fn hash_digest(bytes: &[u8]) -> [u8; DIGEST_LEN] {
    let full = Sha256::digest(bytes);
    let mut out = [0u8; DIGEST_LEN];
    out.copy_from_slice(&full[..DIGEST_LEN]);
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("sealed payload is too short")]
    Truncated,
    #[error("public key does not match the sealing key")]
    Mismatch,
}

const TAG_LEN: usize = 8;

/// Simulation-grade key pair. This is NOT cryptography: the seal is a
/// keystream XOR plus an integrity tag, both derived from the public half,
/// so it offers round-trip and wrong-key detection and nothing more.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyToken {
    pub owner: NodeId,
    pub secret_part: SecretKey,
    pub public_part: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey(pub [u8; DIGEST_LEN]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; DIGEST_LEN]);

impl SecretKey {
    pub fn public(&self) -> PublicKey {
        let mut buf = Vec::with_capacity(3 + DIGEST_LEN);
        buf.extend_from_slice(b"pub");
        buf.extend_from_slice(&self.0);
        PublicKey(hash_digest(&buf))
    }
}

impl KeyToken {
    pub fn from_secret(owner: NodeId, secret: [u8; DIGEST_LEN]) -> Self {
        let secret_part = SecretKey(secret);
        let public_part = secret_part.public();
        KeyToken {
            owner,
            secret_part,
            public_part,
        }
    }

    pub fn generate<R: rand::Rng + ?Sized>(owner: NodeId, rng: &mut R) -> Self {
        let mut secret = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut secret);
        Self::from_secret(owner, secret)
    }
}

fn keystream_xor(key: &PublicKey, data: &mut [u8]) {
    for (block_idx, chunk) in data.chunks_mut(32).enumerate() {
        let mut h = Sha256::new();
        h.update(b"ks");
        h.update(key.0);
        h.update((block_idx as u64).to_le_bytes());
        let block = h.finalize();
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

fn seal_tag(key: &PublicKey, msg: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(b"tag");
    h.update(key.0);
    h.update(msg);
    let full = h.finalize();
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(&full[..TAG_LEN]);
    out
}

/// Seals `msg` so that only the matching public half opens it.
pub fn seal(secret: &SecretKey, msg: &[u8]) -> Vec<u8> {
    let key = secret.public();
    let mut body = msg.to_vec();
    keystream_xor(&key, &mut body);
    let mut out = Vec::with_capacity(TAG_LEN + body.len());
    out.extend_from_slice(&seal_tag(&key, msg));
    out.extend_from_slice(&body);
    out
}

/// Opens a sealed payload; a key from a different token yields `Mismatch`.
pub fn open(public: &PublicKey, sealed: &[u8]) -> Result<Vec<u8>, KeyError> {
    if sealed.len() < TAG_LEN {
        return Err(KeyError::Truncated);
    }
    let (tag, body) = sealed.split_at(TAG_LEN);
    let mut msg = body.to_vec();
    keystream_xor(public, &mut msg);
    if seal_tag(public, &msg)[..] != tag[..] {
        return Err(KeyError::Mismatch);
    }
    Ok(msg)
}

/// Certificate binding a node id to its public key, sealed by the
/// scenario-wide authority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub sealed: Vec<u8>,
}

impl Certificate {
    pub fn issue(authority: &SecretKey, node: NodeId, key: &PublicKey) -> Self {
        let mut body = Vec::with_capacity(4 + DIGEST_LEN);
        body.extend_from_slice(&node.0.to_le_bytes());
        body.extend_from_slice(&key.0);
        Certificate {
            sealed: seal(authority, &body),
        }
    }

    /// Returns the certified (node, key) pair, or `None` if the authority
    /// key does not open the certificate.
    pub fn verify(&self, authority: &PublicKey) -> Option<(NodeId, PublicKey)> {
        let body = open(authority, &self.sealed).ok()?;
        if body.len() != 4 + DIGEST_LEN {
            return None;
        }
        let node = NodeId(u32::from_le_bytes(body[..4].try_into().ok()?));
        let mut key = [0u8; DIGEST_LEN];
        key.copy_from_slice(&body[4..]);
        Some((node, PublicKey(key)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn distance_examples() {
        assert_eq!(
            distance(Position::new(0.0, 0.0), Position::new(3.0, 4.0)),
            5.0
        );
        assert_eq!(
            distance(Position::new(7.0, 2.0), Position::new(7.0, 2.0)),
            0.0
        );
        assert_eq!(
            distance(Position::new(0.0, 0.0), Position::new(300.0, 0.0)),
            300.0
        );
    }

    #[test]
    fn digest_of_empty_input_is_stable() {
        let a = hash_digest(b"");
        assert_eq!(a, hash_digest(b""));
        assert_eq!(a.len(), DIGEST_LEN);
    }

    #[test]
    fn single_byte_perturbations_never_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let len = rng.gen_range(1..64);
            let mut buf: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let before = hash_digest(&buf);
            let i = rng.gen_range(0..len);
            buf[i] = buf[i].wrapping_add(rng.gen_range(1..=255));
            assert_ne!(before, hash_digest(&buf));
        }
    }

    #[test]
    fn distinct_inputs_have_distinct_digests() {
        let mut seen = HashSet::with_capacity(100_000);
        for i in 0u64..100_000 {
            assert!(seen.insert(hash_digest(&i.to_le_bytes())));
        }
    }

    #[test]
    fn seal_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = KeyToken::generate(NodeId(1), &mut rng);
        let b = KeyToken::generate(NodeId(2), &mut rng);
        let code = 0xDEAD_BEEF_0BAD_F00Du64.to_le_bytes();
        let sealed = seal(&a.secret_part, &code);
        assert_eq!(open(&a.public_part, &sealed).unwrap(), code.to_vec());
        assert_eq!(open(&b.public_part, &sealed), Err(KeyError::Mismatch));
        assert_eq!(sealed, seal(&a.secret_part, &code));
        assert_eq!(open(&a.public_part, &[1, 2]), Err(KeyError::Truncated));
    }

    #[test]
    fn certificates_verify_only_under_the_authority() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let authority = KeyToken::generate(NodeId(u32::MAX), &mut rng);
        let node = KeyToken::generate(NodeId(4), &mut rng);
        let cert = Certificate::issue(&authority.secret_part, node.owner, &node.public_part);
        assert_eq!(
            cert.verify(&authority.public_part),
            Some((NodeId(4), node.public_part))
        );
        assert_eq!(cert.verify(&node.public_part), None);
    }

    #[test]
    fn trust_level_range() {
        assert!(TrustLevel::new(9).is_some());
        assert!(TrustLevel::new(10).is_none());
        assert_eq!(TrustLevel::new(1).unwrap().decrease(3), TrustLevel::MIN);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -1e6..1e6f64
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(ax in coord(), ay in coord(), bx in coord(), by in coord(), cx in coord(), cy in coord()) {
            let (a, b, c) = (Position::new(ax, ay), Position::new(bx, by), Position::new(cx, cy));
            let ab = distance(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, distance(b, a));
            let ac = distance(a, c);
            let cb = distance(c, b);
            prop_assert!(ab <= (ac + cb) * (1.0 + 1e-9) + 1e-9);
        }

        #[test]
        fn seal_round_trips_any_length(msg in proptest::collection::vec(any::<u8>(), 0..1024), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key = KeyToken::generate(NodeId(0), &mut rng);
            let sealed = seal(&key.secret_part, &msg);
            prop_assert_eq!(open(&key.public_part, &sealed).unwrap(), msg);
        }

        #[test]
        fn digest_is_pure(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(hash_digest(&bytes), hash_digest(&bytes));
        }
    }
}
