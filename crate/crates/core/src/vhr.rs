//! Virtual Home Region position service.
//!
//! Every node id hashes to a fixed center; the position servers sitting
//! within `region_radius` of that center hold the node's position record.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::message::{MobilityAlert, PosReply, PosRequest, PosUpdate};
use crate::model::{distance, hash_digest, AuthCode, NodeId, Position, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VhrConfig {
    pub region_radius: f64,
    /// Movement (m) beyond which a node re-reports its position.
    pub update_threshold: f64,
    pub field_width: f64,
    pub field_height: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum VhrConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("region_radius {radius} must be below half the smaller field dimension ({limit})")]
    RegionTooLarge { radius: f64, limit: f64 },
}

impl VhrConfig {
    pub fn validate(&self) -> Result<(), VhrConfigError> {
        for (name, v) in [
            ("region_radius", self.region_radius),
            ("update_threshold", self.update_threshold),
            ("field_width", self.field_width),
            ("field_height", self.field_height),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(VhrConfigError::NonPositive(name));
            }
        }
        let limit = self.field_width.min(self.field_height) / 2.0;
        if self.region_radius >= limit {
            return Err(VhrConfigError::RegionTooLarge {
                radius: self.region_radius,
                limit,
            });
        }
        Ok(())
    }

    pub fn in_region(&self, node: NodeId, p: Position) -> bool {
        distance(vhr_center(node, self.field_width, self.field_height), p) <= self.region_radius
    }
}

/// Center of a node's home region: the two 8-byte halves of the id digest,
/// each reduced modulo the field dimension (on a millimeter grid).
pub fn vhr_center(id: NodeId, field_width: f64, field_height: f64) -> Position {
    let digest = hash_digest(&id.0.to_le_bytes());
    let hi = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let lo = u64::from_le_bytes(digest[8..].try_into().expect("8 bytes"));
    let reduce = |h: u64, dim: f64| {
        let mm = ((dim * 1000.0).floor() as u64).max(1);
        (h % mm) as f64 / 1000.0
    };
    Position::new(reduce(hi, field_width), reduce(lo, field_height))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionRecord {
    pub node: NodeId,
    pub pos: Position,
    pub update_time: SimTime,
    pub auth_code: AuthCode,
}

/// Position records held by one server.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub server: NodeId,
    pub records: BTreeMap<NodeId, PositionRecord>,
}

impl ServerState {
    pub fn new(server: NodeId) -> Self {
        ServerState {
            server,
            records: BTreeMap::new(),
        }
    }

    /// Stores an update; older updates never overwrite newer ones.
    pub fn apply_update(&mut self, u: &PosUpdate) {
        let fresh = PositionRecord {
            node: u.node,
            pos: u.pos,
            update_time: u.time,
            auth_code: u.code,
        };
        match self.records.get(&u.node) {
            Some(r) if r.update_time > u.time => {}
            _ => {
                self.records.insert(u.node, fresh);
            }
        }
    }

    pub fn handle_pos_request(&self, req: &PosRequest) -> PosReply {
        PosReply {
            target: req.target,
            record: self
                .records
                .get(&req.target)
                .map(|r| (r.pos, r.update_time, r.auth_code)),
        }
    }

    /// Moves the record to the alerted position, keeping its auth code.
    /// An alert for an unknown node creates the record.
    pub fn handle_mobility_notice(&mut self, alert: &MobilityAlert) {
        match self.records.get_mut(&alert.node) {
            Some(r) => {
                if alert.time >= r.update_time {
                    r.pos = alert.new_pos;
                    r.update_time = alert.time;
                }
            }
            None => {
                self.records.insert(
                    alert.node,
                    PositionRecord {
                        node: alert.node,
                        pos: alert.new_pos,
                        update_time: alert.time,
                        auth_code: AuthCode(0),
                    },
                );
            }
        }
    }

    /// Drops records for nodes whose region no longer contains the server.
    pub fn purge(&mut self, server_pos: Position, cfg: &VhrConfig) -> usize {
        let before = self.records.len();
        self.records.retain(|n, _| cfg.in_region(*n, server_pos));
        before - self.records.len()
    }

    pub fn consistent(&self, server_pos: Position, cfg: &VhrConfig) -> bool {
        self.records.keys().all(|n| cfg.in_region(*n, server_pos))
    }
}

/// Servers inside `target`'s region, nearest to `requester_pos` first,
/// ties broken by lowest id.
pub fn servers_for(
    target: NodeId,
    requester_pos: Position,
    servers: &[(NodeId, Position)],
    cfg: &VhrConfig,
) -> Vec<NodeId> {
    let mut inside: Vec<(f64, NodeId)> = servers
        .iter()
        .filter(|(_, p)| cfg.in_region(target, *p))
        .map(|(s, p)| (distance(requester_pos, *p), *s))
        .collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    inside.into_iter().map(|(_, s)| s).collect()
}

/// A node's own view of what it has reported to its home region.
#[derive(Debug, Clone, Default)]
pub struct PositionReporter {
    last_reported: Option<Position>,
    current_code: Option<AuthCode>,
    history: Vec<(Position, AuthCode)>,
}

impl PositionReporter {
    pub fn last_reported(&self) -> Option<Position> {
        self.last_reported
    }

    pub fn current_code(&self) -> Option<AuthCode> {
        self.current_code
    }

    /// Emits an update with a fresh code when the node has moved strictly
    /// more than `threshold` since its last report (always on the first call).
    pub fn maybe_update_position<R: Rng + ?Sized>(
        &mut self,
        node: NodeId,
        now: SimTime,
        pos: Position,
        threshold: f64,
        rng: &mut R,
    ) -> Option<PosUpdate> {
        if let Some(last) = self.last_reported {
            if distance(last, pos) <= threshold {
                return None;
            }
        }
        let code = AuthCode(rng.gen());
        self.last_reported = Some(pos);
        self.current_code = Some(code);
        self.history.push((pos, code));
        Some(PosUpdate {
            node,
            pos,
            time: now,
            code,
        })
    }

    /// Code registered for exactly this position, most recent first.
    pub fn code_for(&self, pos: Position) -> Option<AuthCode> {
        self.history
            .iter()
            .rev()
            .find(|(p, _)| p.same_bits(&pos))
            .map(|(_, c)| *c)
    }

    pub fn owns_position(&self, pos: Position) -> bool {
        self.code_for(pos).is_some()
    }
}
