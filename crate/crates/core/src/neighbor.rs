//! Beacon-driven neighbor table with range and mobility plausibility
//! checks, plus the timed hello handshake that bounds a neighbor's
//! distance by round-trip time.

use std::collections::BTreeMap;

use crate::kernel::SPEED_OF_LIGHT;
use crate::model::{distance, NodeId, Position, PublicKey, SimTime, TrustLevel};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub position: Position,
    pub last_beacon_time: SimTime,
    pub public_key: Option<PublicKey>,
    pub trust_value: TrustLevel,
    pub tusn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    /// Acceptance range threshold in meters.
    pub range_threshold: f64,
    /// Highest plausible node speed in m/s.
    pub max_speed: f64,
    pub trust_penalty: u8,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            range_threshold: 300.0,
            max_speed: 20.0,
            trust_penalty: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeaconVerdict {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    OutOfRange,
    TooFast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconObservation {
    pub sender: NodeId,
    pub claimed: Position,
    pub tusn: u64,
    pub arrival: SimTime,
}

#[derive(Debug, Clone)]
pub struct NeighborTable {
    entries: BTreeMap<NodeId, NeighborEntry>,
    /// Penalties against senders that never made it into the table.
    strikes: BTreeMap<NodeId, u8>,
    initial_trust: TrustLevel,
}

impl NeighborTable {
    pub fn new(initial_trust: TrustLevel) -> Self {
        NeighborTable {
            entries: BTreeMap::new(),
            strikes: BTreeMap::new(),
            initial_trust,
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Current trust in `id`, counting penalties taken before it was listed.
    pub fn trust_of(&self, id: NodeId) -> TrustLevel {
        match self.entries.get(&id) {
            Some(e) => e.trust_value,
            None => self
                .initial_trust
                .decrease(self.strikes.get(&id).copied().unwrap_or(0)),
        }
    }

    pub fn penalize(&mut self, id: NodeId, by: u8) {
        match self.entries.get_mut(&id) {
            Some(e) => e.trust_value = e.trust_value.decrease(by),
            None => {
                let s = self.strikes.entry(id).or_default();
                *s = s.saturating_add(by);
            }
        }
    }

    fn upsert(&mut self, obs: &BeaconObservation) {
        let trust = self.trust_of(obs.sender);
        let e = self
            .entries
            .entry(obs.sender)
            .or_insert_with(|| NeighborEntry {
                id: obs.sender,
                position: obs.claimed,
                last_beacon_time: obs.arrival,
                public_key: None,
                trust_value: trust,
                tusn: obs.tusn,
            });
        e.position = obs.claimed;
        e.last_beacon_time = obs.arrival;
        e.tusn = e.tusn.max(obs.tusn);
    }

    /// Records a neighbor admitted by the hello handshake.
    pub fn admit_verified(&mut self, id: NodeId, position: Position, key: PublicKey, now: SimTime) {
        let trust = self.trust_of(id);
        let e = self.entries.entry(id).or_insert_with(|| NeighborEntry {
            id,
            position,
            last_beacon_time: now,
            public_key: None,
            trust_value: trust,
            tusn: 0,
        });
        e.position = position;
        e.public_key = Some(key);
    }

    /// Refreshes location and bumps the sequence number, as done when a
    /// trusted source's route request is accepted.
    pub fn touch(&mut self, id: NodeId, position: Position, now: SimTime) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.position = position;
            e.last_beacon_time = e.last_beacon_time.max(now);
            e.tusn += 1;
        }
    }
}

/// Range check: a beacon claiming a position farther than the threshold
/// from the receiver is dropped and its sender penalized.
pub fn verify_beacon_range(
    table: &mut NeighborTable,
    own: Position,
    obs: &BeaconObservation,
    cfg: &VerifyConfig,
) -> BeaconVerdict {
    if distance(own, obs.claimed) <= cfg.range_threshold {
        table.upsert(obs);
        BeaconVerdict::Accepted
    } else {
        table.penalize(obs.sender, cfg.trust_penalty);
        BeaconVerdict::Rejected(RejectReason::OutOfRange)
    }
}

/// Average speed implied by two beacons; `None` for a zero interval
/// with movement (always implausible).
pub fn implied_speed(old: Position, t_old: SimTime, new: Position, t_new: SimTime) -> Option<f64> {
    let moved = distance(old, new);
    if t_new <= t_old {
        return (moved == 0.0).then_some(0.0);
    }
    Some(moved / (t_new - t_old).as_secs_f64())
}

/// Mobility check against the previous beacon of the same sender.
pub fn verify_beacon_mobility(
    table: &mut NeighborTable,
    obs: &BeaconObservation,
    cfg: &VerifyConfig,
) -> BeaconVerdict {
    let Some(prev) = table.get(obs.sender) else {
        table.upsert(obs);
        return BeaconVerdict::Accepted;
    };
    match implied_speed(
        prev.position,
        prev.last_beacon_time,
        obs.claimed,
        obs.arrival,
    ) {
        Some(speed) if speed <= cfg.max_speed => {
            table.upsert(obs);
            BeaconVerdict::Accepted
        }
        _ => {
            table.penalize(obs.sender, cfg.trust_penalty);
            BeaconVerdict::Rejected(RejectReason::TooFast)
        }
    }
}

/// Both checks, range first; the table is only touched by a beacon that
/// passes both.
pub fn verify_beacon(
    table: &mut NeighborTable,
    own: Position,
    obs: &BeaconObservation,
    cfg: &VerifyConfig,
) -> BeaconVerdict {
    if distance(own, obs.claimed) > cfg.range_threshold {
        table.penalize(obs.sender, cfg.trust_penalty);
        return BeaconVerdict::Rejected(RejectReason::OutOfRange);
    }
    verify_beacon_mobility(table, obs, cfg)
}

/// Largest distance consistent with a hello round trip of `t1 - t0`,
/// widened by any configured reply processing delay.
pub fn distance_bound(t0: SimTime, t1: SimTime, processing_delay: SimTime) -> f64 {
    let d = t1.saturating_sub(t0).as_secs_f64();
    d / 2.0 * SPEED_OF_LIGHT + processing_delay.as_secs_f64() / 2.0 * SPEED_OF_LIGHT
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HandshakeOutcome {
    Accepted {
        bound: f64,
        claimed_distance: f64,
    },
    /// Claimed distance exceeds what the round trip allows: a wormhole or
    /// a falsified position.
    Suspect {
        bound: f64,
        claimed_distance: f64,
    },
}

/// Evaluates a completed M1/M2 exchange.
pub fn check_handshake(
    own: Position,
    claimed: Position,
    t0: SimTime,
    t1: SimTime,
    processing_delay: SimTime,
) -> HandshakeOutcome {
    let bound = distance_bound(t0, t1, processing_delay);
    let claimed_distance = distance(own, claimed);
    if claimed_distance <= bound {
        HandshakeOutcome::Accepted {
            bound,
            claimed_distance,
        }
    } else {
        HandshakeOutcome::Suspect {
            bound,
            claimed_distance,
        }
    }
}
