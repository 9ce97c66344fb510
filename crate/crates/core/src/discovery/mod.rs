//! Anonymous position-based route discovery: pseudo-ids, receiver
//! classification, three-phase receiver contention and the authenticated
//! route reply.

mod classify;
mod contention;
mod reply;

pub use classify::{classify_receiver, classify_with_width, NodeClass};
pub use contention::{
    contention_elimination, contention_prioritization, contention_yield, eliminate_by_draws,
    run_contention, yield_by_draws, Contender, ContentionConfig, ContentionOutcome, YieldOutcome,
};
pub use reply::{originate_rrep, verify_rrep, RoutingTable, RoutingTableEntry, RrepError};

use crate::model::{hash_digest, Position, PseudoId, SimTime};

/// Pseudo-id for a node at `pos` at time `t`: digest of the canonical
/// encoding of both.
pub fn make_pseudo_id(pos: Position, t: SimTime) -> PseudoId {
    let mut buf = [0u8; 24];
    buf[..16].copy_from_slice(&pos.to_bytes());
    buf[16..].copy_from_slice(&t.0.to_le_bytes());
    PseudoId(hash_digest(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::seeded_rng;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn pseudo_id_is_deterministic() {
        let p = Position::new(12.5, 99.0);
        assert_eq!(make_pseudo_id(p, SimTime(7)), make_pseudo_id(p, SimTime(7)));
    }

    #[test]
    fn distinct_positions_same_time_do_not_collide() {
        let mut rng = seeded_rng(21);
        let mut seen = HashSet::new();
        let t = SimTime(1_000);
        for _ in 0..100_000 {
            let p = Position::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            seen.insert(make_pseudo_id(p, t));
        }
        assert_eq!(seen.len(), 100_000);
    }

    #[test]
    fn one_microsecond_apart_differs() {
        let mut rng = seeded_rng(4);
        for _ in 0..10_000 {
            let p = Position::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            let t = SimTime(rng.gen_range(0..1_000_000_000));
            assert_ne!(make_pseudo_id(p, t), make_pseudo_id(p, t + SimTime(1)));
        }
    }
}
