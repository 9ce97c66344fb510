//! Adversary behaviors and the server-side defenses against them: the
//! forwarding watchdog, the path selector that gates contention winners,
//! and probing of claimed positions.

use std::collections::BTreeMap;

use rand::Rng;

use crate::model::{distance, NodeId, Position, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversaryKind {
    /// Drops each data packet it should forward with probability `p`.
    Dropper { p: f64 },
    /// Claims to sit at `claimed_pos` when contending and beaconing.
    Sybil { claimed_pos: Position },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryProfile {
    pub node: NodeId,
    pub kind: AdversaryKind,
}

impl AdversaryProfile {
    pub fn is_dropper(&self) -> bool {
        matches!(self.kind, AdversaryKind::Dropper { .. })
    }

    pub fn is_sybil(&self) -> bool {
        matches!(self.kind, AdversaryKind::Sybil { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardDecision {
    Forward,
    Drop,
}

/// Whether a node on an active route forwards a data packet.
pub fn adversary_forward_decision<R: Rng + ?Sized>(
    profile: Option<&AdversaryProfile>,
    rng: &mut R,
) -> ForwardDecision {
    match profile.map(|p| p.kind) {
        Some(AdversaryKind::Dropper { p }) if p >= 1.0 || (p > 0.0 && rng.gen_bool(p)) => {
            ForwardDecision::Drop
        }
        _ => ForwardDecision::Forward,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WatchdogConfig {
    pub timeout: SimTime,
    pub flag_threshold: u32,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        WatchdogConfig {
            timeout: SimTime::from_millis(50),
            flag_threshold: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardEvent {
    /// `node` received `packet` that it is expected to pass on.
    Received { node: NodeId, packet: u64 },
    /// `node` transmitted `packet` onward.
    Transmitted { node: NodeId, packet: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// A pending entry was created; check it at `deadline`.
    Pending {
        deadline: SimTime,
    },
    Cleared,
    /// Transmission with nothing pending (duplicate or reordering).
    Ignored,
}

/// Per-server buffer of packets awaiting forwarding, and failure counts.
#[derive(Debug, Clone, Default)]
pub struct Watchdog {
    cfg: WatchdogConfig,
    pending: BTreeMap<(NodeId, u64), SimTime>,
    failure_rate: BTreeMap<NodeId, u32>,
}

impl Watchdog {
    pub fn new(cfg: WatchdogConfig) -> Self {
        Watchdog {
            cfg,
            ..Default::default()
        }
    }

    pub fn observe(&mut self, now: SimTime, ev: ForwardEvent) -> Observation {
        match ev {
            ForwardEvent::Received { node, packet } => {
                let deadline = now + self.cfg.timeout;
                self.pending.insert((node, packet), deadline);
                Observation::Pending { deadline }
            }
            ForwardEvent::Transmitted { node, packet } => {
                if self.pending.remove(&(node, packet)).is_some() {
                    Observation::Cleared
                } else {
                    Observation::Ignored
                }
            }
        }
    }

    /// Charges a failure for every entry whose deadline has passed.
    /// Returns the charged nodes.
    pub fn expire(&mut self, now: SimTime) -> Vec<NodeId> {
        let overdue: Vec<(NodeId, u64)> = self
            .pending
            .iter()
            .filter(|(_, &deadline)| deadline <= now)
            .map(|(k, _)| *k)
            .collect();
        let mut charged = Vec::with_capacity(overdue.len());
        for key in overdue {
            self.pending.remove(&key);
            *self.failure_rate.entry(key.0).or_default() += 1;
            charged.push(key.0);
        }
        charged
    }

    pub fn failure_rate(&self, node: NodeId) -> u32 {
        self.failure_rate.get(&node).copied().unwrap_or(0)
    }

    pub fn failure_rates(&self) -> &BTreeMap<NodeId, u32> {
        &self.failure_rate
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_misbehaving(&self, node: NodeId) -> bool {
        self.failure_rate(node) >= self.cfg.flag_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathDecision {
    Allow,
    /// Nothing is known about the candidate; allowed.
    AllowUnknown,
    Deny,
}

impl PathDecision {
    pub fn allowed(self) -> bool {
        self != PathDecision::Deny
    }
}

/// Gate for a contention winner, resolved to `candidate` (if resolvable),
/// against the watchdogs of every server that watches it.
pub fn pathselector_check<'a>(
    watchdogs: impl IntoIterator<Item = &'a Watchdog>,
    candidate: Option<NodeId>,
) -> PathDecision {
    let Some(node) = candidate else {
        return PathDecision::AllowUnknown;
    };
    let mut any = false;
    for w in watchdogs {
        any = true;
        if w.is_misbehaving(node) {
            return PathDecision::Deny;
        }
    }
    if any {
        PathDecision::Allow
    } else {
        PathDecision::AllowUnknown
    }
}

/// Nodes that would receive a probe sent to `target`.
pub fn probe_recipients(
    target: Position,
    tolerance: f64,
    nodes: impl IntoIterator<Item = (NodeId, Position)>,
) -> Vec<NodeId> {
    nodes
        .into_iter()
        .filter(|(_, p)| distance(*p, target) <= tolerance)
        .map(|(n, _)| n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SybilVerdict {
    Legitimate,
    Sybil,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingProbe {
    pub target: Position,
    pub deadline: SimTime,
    pub requester: NodeId,
    pub validation_id: u64,
}

/// Outstanding probes of one server.
#[derive(Debug, Clone, Default)]
pub struct SybilProber {
    next_id: u64,
    pending: BTreeMap<u64, PendingProbe>,
}

impl SybilProber {
    pub fn start(
        &mut self,
        target: Position,
        now: SimTime,
        timeout: SimTime,
        requester: NodeId,
        validation_id: u64,
    ) -> (u64, PendingProbe) {
        let id = self.next_id;
        self.next_id += 1;
        let probe = PendingProbe {
            target,
            deadline: now + timeout,
            requester,
            validation_id,
        };
        self.pending.insert(id, probe);
        (id, probe)
    }

    /// A reply before the deadline settles the probe as legitimate.
    pub fn on_reply(
        &mut self,
        probe_id: u64,
        now: SimTime,
    ) -> Option<(PendingProbe, SybilVerdict)> {
        match self.pending.get(&probe_id) {
            Some(p) if now <= p.deadline => {
                let p = self.pending.remove(&probe_id).expect("present");
                Some((p, SybilVerdict::Legitimate))
            }
            _ => None,
        }
    }

    /// An unanswered probe at its deadline is a Sybil verdict.
    pub fn on_timeout(&mut self, probe_id: u64) -> Option<(PendingProbe, SybilVerdict)> {
        self.pending
            .remove(&probe_id)
            .map(|p| (p, SybilVerdict::Sybil))
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }
}
