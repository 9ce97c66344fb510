use std::collections::BTreeMap;

use thiserror::Error;

use crate::message::Rrep;
use crate::model::{open, seal, AuthCode, KeyError, PseudoId, PublicKey, SecretKey};

/// Per-request route state. Holds pseudo-ids only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingTableEntry {
    pub request_id: u64,
    /// `None` at the source.
    pub prev_hop: Option<PseudoId>,
    /// `None` at the destination, or while the next hop is not confirmed.
    pub next_hop: Option<PseudoId>,
    pub own_pseudo: PseudoId,
}

#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    entries: BTreeMap<u64, RoutingTableEntry>,
}

impl RoutingTable {
    pub fn get(&self, request_id: u64) -> Option<&RoutingTableEntry> {
        self.entries.get(&request_id)
    }

    pub fn get_mut(&mut self, request_id: u64) -> Option<&mut RoutingTableEntry> {
        self.entries.get_mut(&request_id)
    }

    pub fn contains(&self, request_id: u64) -> bool {
        self.entries.contains_key(&request_id)
    }

    pub fn insert(&mut self, entry: RoutingTableEntry) {
        self.entries.insert(entry.request_id, entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = &RoutingTableEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds the destination's reply: the auth code sealed under its secret
/// key, an empty trust string and the destination's own pseudo-id as the
/// start of the reverse path.
pub fn originate_rrep(
    secret: &SecretKey,
    code: AuthCode,
    request_id: u64,
    route_hops: u32,
    own_pseudo: PseudoId,
) -> Rrep {
    Rrep {
        request_id,
        sealed_auth: seal(secret, &code.0.to_le_bytes()),
        trust_string: Vec::new(),
        hop_count: 0,
        route_hops,
        path: vec![own_pseudo],
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RrepError {
    #[error("no authentication code was obtained for this destination")]
    NoExpectedCode,
    #[error("sealed code does not open under the destination key: {0}")]
    Key(#[from] KeyError),
    #[error("sealed payload has the wrong length")]
    Malformed,
    #[error("authentication code mismatch")]
    CodeMismatch,
}

/// Source-side check of a reply against the code from the position service.
pub fn verify_rrep(
    dest_public: &PublicKey,
    rrep: &Rrep,
    expected: Option<AuthCode>,
) -> Result<(), RrepError> {
    let expected = expected.ok_or(RrepError::NoExpectedCode)?;
    let plain = open(dest_public, &rrep.sealed_auth)?;
    let bytes: [u8; 8] = plain.try_into().map_err(|_| RrepError::Malformed)?;
    if u64::from_le_bytes(bytes) == expected.0 {
        Ok(())
    } else {
        Err(RrepError::CodeMismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::seeded_rng;
    use crate::model::{KeyToken, NodeId};

    #[test]
    fn authentic_reply_is_accepted() {
        let mut rng = seeded_rng(1);
        let dest = KeyToken::generate(NodeId(9), &mut rng);
        let code = AuthCode(0x1234_5678);
        let rrep = originate_rrep(&dest.secret_part, code, 1, 3, PseudoId([1; 16]));
        assert!(rrep.trust_string.is_empty());
        assert_eq!(verify_rrep(&dest.public_part, &rrep, Some(code)), Ok(()));
        assert_eq!(
            verify_rrep(&dest.public_part, &rrep, Some(AuthCode(1))),
            Err(RrepError::CodeMismatch)
        );
    }

    #[test]
    fn impostor_key_is_rejected() {
        let mut rng = seeded_rng(2);
        let dest = KeyToken::generate(NodeId(9), &mut rng);
        let impostor = KeyToken::generate(NodeId(3), &mut rng);
        let code = AuthCode(77);
        let rrep = originate_rrep(&impostor.secret_part, code, 1, 3, PseudoId([1; 16]));
        assert_eq!(
            verify_rrep(&dest.public_part, &rrep, Some(code)),
            Err(RrepError::Key(KeyError::Mismatch))
        );
    }

    #[test]
    fn missing_position_request_cannot_verify() {
        let mut rng = seeded_rng(3);
        let dest = KeyToken::generate(NodeId(9), &mut rng);
        let rrep = originate_rrep(&dest.secret_part, AuthCode(5), 1, 1, PseudoId([0; 16]));
        assert_eq!(
            verify_rrep(&dest.public_part, &rrep, None),
            Err(RrepError::NoExpectedCode)
        );
    }
}
