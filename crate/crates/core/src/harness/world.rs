//! Per-node protocol state and the event handler that runs the whole
//! protocol stack on top of the kernel.
//!
//! Link-layer addressing is modeled by a per-node cache from pseudo-id to
//! the radio address it was heard from; the routing tables themselves only
//! hold pseudo-ids.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use super::config::{Flow, ScenarioConfig};
use super::metrics::Metrics;
use super::trace::Actor;
use crate::defense::{
    adversary_forward_decision, pathselector_check, probe_recipients, AdversaryKind,
    AdversaryProfile, ForwardDecision, ForwardEvent, Observation, PathDecision, SybilProber,
    SybilVerdict, Watchdog,
};
use crate::discovery::{
    classify_with_width, contention_elimination, contention_prioritization, contention_yield,
    make_pseudo_id, originate_rrep, verify_rrep, Contender, NodeClass, RoutingTable,
    RoutingTableEntry, YieldOutcome,
};
use crate::kernel::{Channel, Event, EventPayload, Handler, Kernel};
use crate::message::{
    Ack, Beacon, Cnfm, Data, HelloM1, Hrep, HrepValidation, Message, MobilityAlert, Payload,
    PosReply, PosRequest, ReplyM2, Rrep, Rreq, SenderHandle, SybilProbe, SybilProbeReply,
    TrustQuery, ValidationVerdict, Verdict,
};
use crate::model::{
    distance, AuthCode, Certificate, KeyToken, NodeId, Position, PseudoId, PublicKey, SimTime,
};
use crate::neighbor::{
    check_handshake, verify_beacon, BeaconObservation, BeaconVerdict, HandshakeOutcome,
    NeighborTable, VerifyConfig,
};
use crate::trust::{
    append_trust, authenticate_source, avg_trust, on_trust_response, route_select, RouteCandidate,
    SourceCheck, TrustString, TrustTable,
};
use crate::vhr::{servers_for, PositionReporter, ServerState, VhrConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timer {
    Tick,
    Hello,
    SendReplyM2 { to: NodeId },
    Kill,
    FlowPacket { flow: usize },
    WaitWindow { flow: usize, generation: u32 },
    PrioEnd { request_id: u64, attempt: u32 },
    ElimEnd { request_id: u64, attempt: u32 },
    Retry { request_id: u64, attempt: u32 },
    HopTimeout { request_id: u64, attempt: u32 },
    SendHrep { request_id: u64 },
    WatchdogDeadline,
    ProbeTimeout { probe_id: u64 },
    TrustTimeout { source: NodeId },
}

#[derive(Debug, Clone)]
pub struct Server {
    pub state: ServerState,
    pub watchdog: Watchdog,
    pub prober: SybilProber,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum HopStage {
    Contending,
    AwaitHrep,
    Validating { validation_id: u64, hrep: Hrep },
    AwaitAck { hrep: Hrep },
    Done,
    Failed,
}

/// Sender side of one hop of route discovery.
#[derive(Debug, Clone)]
struct HopState {
    rreq: Rreq,
    attempt: u32,
    excluded: Vec<Position>,
    stage: HopStage,
    winner: Option<NodeId>,
}

/// Receiver side: this node contended for a request.
#[derive(Debug, Clone)]
struct Candidacy {
    sender: NodeId,
    rreq: Rreq,
    pseudo: PseudoId,
    claimed: Position,
    class: NodeClass,
}

#[derive(Debug, Clone, Copy)]
struct DestSession {
    reference: Position,
    prev: PseudoId,
}

pub struct NodeState {
    pub id: NodeId,
    pub key: KeyToken,
    pub certificate: Certificate,
    pub neighbors: NeighborTable,
    pub trust: TrustTable,
    pub routes: RoutingTable,
    links: BTreeMap<PseudoId, NodeId>,
    reporter: PositionReporter,
    /// Positions announced by mobility alerts, with the code then current.
    alerted: Vec<(Position, AuthCode)>,
    pub adversary: Option<AdversaryProfile>,
    pub server: Option<Server>,
    tusn: u64,
    hops: BTreeMap<u64, HopState>,
    candidacies: BTreeMap<u64, Candidacy>,
    dest_sessions: BTreeMap<u64, DestSession>,
    hello_sent_at: Option<SimTime>,
    trust_pending: BTreeMap<NodeId, SimTime>,
}

impl NodeState {
    pub fn new(
        id: NodeId,
        key: KeyToken,
        certificate: Certificate,
        trust: TrustTable,
        initial_trust: crate::model::TrustLevel,
    ) -> Self {
        NodeState {
            id,
            key,
            certificate,
            neighbors: NeighborTable::new(initial_trust),
            trust,
            routes: RoutingTable::default(),
            links: BTreeMap::new(),
            reporter: PositionReporter::default(),
            alerted: Vec::new(),
            adversary: None,
            server: None,
            tusn: 0,
            hops: BTreeMap::new(),
            candidacies: BTreeMap::new(),
            dest_sessions: BTreeMap::new(),
            hello_sent_at: None,
            trust_pending: BTreeMap::new(),
        }
    }

    fn is_sybil(&self) -> bool {
        self.adversary.is_some_and(|a| a.is_sybil())
    }

    fn owns(&self, pos: Position) -> bool {
        !self.is_sybil()
            && (self.reporter.owns_position(pos)
                || self.alerted.iter().any(|(p, _)| p.same_bits(&pos)))
    }

    fn code_for(&self, pos: Position) -> Option<AuthCode> {
        self.reporter.code_for(pos).or_else(|| {
            self.alerted
                .iter()
                .rev()
                .find(|(p, _)| p.same_bits(&pos))
                .map(|(_, c)| *c)
        })
    }
}

#[derive(Debug, Clone)]
struct Entrant {
    node: NodeId,
    class: NodeClass,
    aggressive: bool,
}

#[derive(Debug, Clone)]
struct Round {
    attempt: u32,
    entrants: Vec<Entrant>,
    prioritized: Vec<Contender<NodeId>>,
}

/// One route discovery run by a flow's source.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryReport {
    pub started: SimTime,
    pub candidates: Vec<RouteCandidate>,
    /// Index into `candidates`.
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowReport {
    pub source: NodeId,
    pub destination: NodeId,
    pub originated: u32,
    pub delivered: u32,
    pub discoveries: Vec<DiscoveryReport>,
}

#[derive(Debug, Clone)]
struct Discovery {
    generation: u32,
    dest_pos: Option<Position>,
    code: Option<AuthCode>,
    requests: Vec<u64>,
    excluded: Vec<Position>,
    copy_in_flight: bool,
    candidates: Vec<RouteCandidate>,
}

#[derive(Debug, Clone, Copy)]
struct ActiveRoute {
    request_id: u64,
    since: SimTime,
}

#[derive(Debug, Clone)]
struct FlowState {
    spec: Flow,
    originated: u32,
    queue: VecDeque<u64>,
    generation: u32,
    discovery: Option<Discovery>,
    route: Option<ActiveRoute>,
    report: FlowReport,
}

pub struct World {
    pub cfg: ScenarioConfig,
    pub nodes: Vec<NodeState>,
    authority: PublicKey,
    directory: Vec<PublicKey>,
    vhr: VhrConfig,
    verify: VerifyConfig,
    flows: Vec<FlowState>,
    request_flow: BTreeMap<u64, usize>,
    rounds: BTreeMap<(NodeId, u64), Round>,
    /// Validation id → node that actually sent the hrep.
    validations: BTreeMap<u64, NodeId>,
    next_validation: u64,
    next_packet: u64,
    packet_flow: BTreeMap<u64, usize>,
    delivered: BTreeSet<u64>,
    /// Reception times of packets each relay was expected to forward.
    opportunities: BTreeMap<NodeId, Vec<SimTime>>,
    /// First flag per node, with the number of forwarding opportunities
    /// whose watch window had closed by then.
    pub flagged: BTreeMap<NodeId, u32>,
    pub metrics: Metrics,
    hop_sum: u64,
    trust_sum: f64,
    trust_n: u64,
}

fn msg(k: &Kernel<Timer>, sender: SenderHandle, payload: Payload) -> Message {
    Message::new(k.now(), sender, payload)
}

fn trace(
    k: &mut Kernel<Timer>,
    kind: &'static str,
    node: NodeId,
    details: Vec<(&'static str, String)>,
) {
    let now = k.now();
    k.trace.emit(now, kind, Actor::Node(node), details);
}

impl World {
    pub fn new(
        cfg: ScenarioConfig,
        nodes: Vec<NodeState>,
        authority: PublicKey,
        flows: Vec<Flow>,
    ) -> Self {
        let vhr = VhrConfig {
            region_radius: cfg.protocol.region_radius,
            update_threshold: cfg.protocol.update_threshold,
            field_width: cfg.field.width,
            field_height: cfg.field.height,
        };
        let verify = if cfg.defenses.beacons {
            VerifyConfig {
                range_threshold: cfg.range_threshold(),
                max_speed: cfg.mobility.max_speed,
                trust_penalty: cfg.protocol.trust_penalty,
            }
        } else {
            VerifyConfig {
                range_threshold: f64::INFINITY,
                max_speed: f64::INFINITY,
                trust_penalty: 0,
            }
        };
        let directory = nodes.iter().map(|n| n.key.public_part).collect();
        let flows = flows
            .into_iter()
            .map(|spec| FlowState {
                spec,
                originated: 0,
                queue: VecDeque::new(),
                generation: 0,
                discovery: None,
                route: None,
                report: FlowReport {
                    source: spec.source,
                    destination: spec.destination,
                    originated: 0,
                    delivered: 0,
                    discoveries: Vec::new(),
                },
            })
            .collect();
        World {
            cfg,
            nodes,
            authority,
            directory,
            vhr,
            verify,
            flows,
            request_flow: BTreeMap::new(),
            rounds: BTreeMap::new(),
            validations: BTreeMap::new(),
            next_validation: 0,
            next_packet: 0,
            packet_flow: BTreeMap::new(),
            delivered: BTreeSet::new(),
            opportunities: BTreeMap::new(),
            flagged: BTreeMap::new(),
            metrics: Metrics::default(),
            hop_sum: 0,
            trust_sum: 0.0,
            trust_n: 0,
        }
    }

    pub fn flows(&self) -> Vec<FlowReport> {
        self.flows.iter().map(|f| f.report.clone()).collect()
    }

    pub fn flow_specs(&self) -> Vec<Flow> {
        self.flows.iter().map(|f| f.spec).collect()
    }

    /// Final metrics; control overhead is taken from the kernel counters.
    pub fn finish(&mut self, k: &Kernel<Timer>) -> Metrics {
        let mut m = self.metrics.clone();
        m.control_overhead = k
            .tx_counts()
            .iter()
            .filter(|(kind, _)| **kind != crate::message::MessageKind::Data)
            .map(|(k, v)| (*k, *v))
            .collect();
        m.finish_ratios();
        m.mean_hops = if m.routes_found == 0 {
            f64::NAN
        } else {
            self.hop_sum as f64 / m.routes_found as f64
        };
        m.chosen_path_avg_trust = if self.trust_n == 0 {
            f64::NAN
        } else {
            self.trust_sum / self.trust_n as f64
        };
        m
    }

    /// Highest failure rate any server holds for each node.
    pub fn failure_rates(&self) -> BTreeMap<NodeId, u32> {
        let mut out = BTreeMap::new();
        for s in self.nodes.iter().filter_map(|n| n.server.as_ref()) {
            for (n, r) in s.watchdog.failure_rates() {
                let e = out.entry(*n).or_insert(0);
                *e = (*e).max(*r);
            }
        }
        out
    }

    pub fn routing_snapshot(&self) -> BTreeMap<NodeId, Vec<RoutingTableEntry>> {
        self.nodes
            .iter()
            .map(|n| (n.id, n.routes.entries().copied().collect()))
            .collect()
    }

    fn claimed_pos(&self, k: &Kernel<Timer>, n: NodeId) -> Position {
        match self.nodes[n.0 as usize].adversary.map(|a| a.kind) {
            Some(AdversaryKind::Sybil { claimed_pos }) => claimed_pos,
            _ => k.position(n),
        }
    }

    fn alive_servers(&self, k: &Kernel<Timer>) -> Vec<(NodeId, Position)> {
        self.nodes
            .iter()
            .filter(|n| n.server.is_some() && k.is_alive(n.id))
            .map(|n| (n.id, k.position(n.id)))
            .collect()
    }

    /// Servers whose position lies in `node`'s home region.
    fn watchers(&self, k: &Kernel<Timer>, node: NodeId) -> Vec<NodeId> {
        self.alive_servers(k)
            .into_iter()
            .filter(|(_, p)| self.vhr.in_region(node, *p))
            .map(|(s, _)| s)
            .collect()
    }

    fn node(&mut self, n: NodeId) -> &mut NodeState {
        &mut self.nodes[n.0 as usize]
    }

    fn needs_validation(&self) -> bool {
        self.cfg.defenses.pathselector || self.cfg.defenses.sybil
    }

    fn hop_allowance(&self) -> SimTime {
        let c = &self.cfg.protocol.contention;
        let lat = self.cfg.protocol.service_latency.0;
        c.yield_time()
            + SimTime(2 * c.slot.0 + 4 * lat)
            + self.cfg.protocol.probe_timeout
            + SimTime::from_millis(2)
    }

    // ---- timers -------------------------------------------------------

    fn on_timer(&mut self, k: &mut Kernel<Timer>, node: NodeId, timer: Timer) {
        match timer {
            Timer::Tick => self.on_tick(k, node),
            Timer::Hello => {
                self.node(node).hello_sent_at = Some(k.now());
                let cert = self.nodes[node.0 as usize].certificate.clone();
                let m = msg(
                    k,
                    SenderHandle::Node(node),
                    Payload::HelloM1(HelloM1 { certificate: cert }),
                );
                k.broadcast(node, m);
            }
            Timer::SendReplyM2 { to } => self.send_reply_m2(k, node, to),
            Timer::Kill => k.kill(node),
            Timer::FlowPacket { flow } => self.originate_packet(k, flow),
            Timer::WaitWindow { flow, generation } => self.close_discovery(k, flow, generation),
            Timer::PrioEnd {
                request_id,
                attempt,
            } => self.prio_end(k, node, request_id, attempt),
            Timer::ElimEnd {
                request_id,
                attempt,
            } => self.elim_end(k, node, request_id, attempt),
            Timer::Retry {
                request_id,
                attempt,
            }
            | Timer::HopTimeout {
                request_id,
                attempt,
            } => {
                let Some(hop) = self.nodes[node.0 as usize].hops.get(&request_id) else {
                    return;
                };
                if hop.attempt != attempt || matches!(hop.stage, HopStage::Done | HopStage::Failed)
                {
                    return;
                }
                if matches!(timer, Timer::HopTimeout { .. }) {
                    trace(
                        k,
                        "hop_timeout",
                        node,
                        vec![("req", request_id.to_string())],
                    );
                }
                self.retry_or_dead_end(k, node, request_id);
            }
            Timer::SendHrep { request_id } => self.send_hrep(k, node, request_id),
            Timer::WatchdogDeadline => self.watchdog_deadline(k, node),
            Timer::ProbeTimeout { probe_id } => {
                let Some(server) = self.node(node).server.as_mut() else {
                    return;
                };
                if let Some((probe, SybilVerdict::Sybil)) = server.prober.on_timeout(probe_id) {
                    let winner = self.validations.get(&probe.validation_id).copied();
                    if winner.is_some_and(|w| self.nodes[w.0 as usize].is_sybil()) {
                        self.metrics.sybil_tp += 1;
                    } else {
                        self.metrics.sybil_fp += 1;
                    }
                    trace(k, "sybil", node, vec![("target", probe.target.to_string())]);
                    self.send_verdict(
                        k,
                        node,
                        probe.requester,
                        probe.validation_id,
                        Verdict::Sybil,
                    );
                }
            }
            Timer::TrustTimeout { source } => {
                if self.node(node).trust_pending.remove(&source).is_some() {
                    trace(
                        k,
                        "trust_timeout",
                        node,
                        vec![("source", source.to_string())],
                    );
                }
            }
        }
    }

    fn on_tick(&mut self, k: &mut Kernel<Timer>, n: NodeId) {
        let interval = self.cfg.protocol.beacon_interval;
        k.schedule_timer_in(interval, n, Timer::Tick);
        let pos = k.position(n);
        let claimed = self.claimed_pos(k, n);

        let node = self.node(n);
        node.tusn += 1;
        let beacon = Beacon {
            sender: n,
            position: claimed,
            tusn: node.tusn,
        };
        let m = msg(k, SenderHandle::Node(n), Payload::Beacon(beacon));
        k.broadcast(n, m);

        let threshold = self.cfg.protocol.update_threshold;
        let now = k.now();
        let update = self.nodes[n.0 as usize]
            .reporter
            .maybe_update_position(n, now, pos, threshold, &mut k.rng);
        if let Some(u) = update {
            let servers = servers_for(n, pos, &self.alive_servers(k), &self.vhr);
            if servers.is_empty() {
                self.metrics.position_service_failures += 1;
                trace(k, "pos_fail", n, vec![("reason", "no_server".into())]);
            }
            for s in servers {
                let m = msg(k, SenderHandle::Node(n), Payload::PosUpdate(u));
                k.service_send(n, s, m, self.cfg.protocol.service_latency);
            }
        }

        if self.cfg.defenses.alerts {
            self.check_alerts(k, n, pos);
        }

        let vhr = self.vhr;
        if let Some(server) = self.node(n).server.as_mut() {
            server.state.purge(pos, &vhr);
        }
    }

    fn check_alerts(&mut self, k: &mut Kernel<Timer>, n: NodeId, pos: Position) {
        let threshold = self.cfg.alert_threshold();
        let now = k.now();
        let moved: Vec<(u64, PseudoId)> = self.nodes[n.0 as usize]
            .dest_sessions
            .iter()
            .filter(|(_, s)| distance(s.reference, pos) > threshold)
            .map(|(r, s)| (*r, s.prev))
            .collect();
        if moved.is_empty() {
            return;
        }
        let node = self.node(n);
        if node.code_for(pos).is_none() {
            if let Some(code) = node.reporter.current_code() {
                node.alerted.push((pos, code));
            }
        }
        for (req, prev) in &moved {
            if let Some(s) = node.dest_sessions.get_mut(req) {
                s.reference = pos;
            }
            let _ = prev;
        }
        let servers = servers_for(n, pos, &self.alive_servers(k), &self.vhr);
        for (req, prev) in moved {
            let alert = MobilityAlert {
                request_id: req,
                node: n,
                new_pos: pos,
                time: now,
            };
            trace(
                k,
                "alert",
                n,
                vec![("req", req.to_string()), ("pos", pos.to_string())],
            );
            if let Some(&to) = self.nodes[n.0 as usize].links.get(&prev) {
                let own = self.nodes[n.0 as usize]
                    .routes
                    .get(req)
                    .map(|e| e.own_pseudo);
                let sender = own.map_or(SenderHandle::Node(n), SenderHandle::Pseudo);
                let m = msg(k, sender, Payload::MobilityAlert(alert));
                k.unicast(n, to, m);
            }
            for s in &servers {
                let m = msg(k, SenderHandle::Node(n), Payload::MobilityAlert(alert));
                k.service_send(n, *s, m, self.cfg.protocol.service_latency);
            }
        }
    }

    // ---- flows and discovery at the source -----------------------------

    fn originate_packet(&mut self, k: &mut Kernel<Timer>, fi: usize) {
        let flow = &mut self.flows[fi];
        let src = flow.spec.source;
        flow.originated += 1;
        flow.report.originated += 1;
        if flow.originated < flow.spec.packets {
            k.schedule_timer_in(flow.spec.interval, src, Timer::FlowPacket { flow: fi });
        }
        let packet = self.next_packet;
        self.next_packet += 1;
        self.packet_flow.insert(packet, fi);
        self.flows[fi].queue.push_back(packet);
        self.metrics.data_originated += 1;
        trace(
            k,
            "originate",
            src,
            vec![
                ("pkt", packet.to_string()),
                ("dst", self.flows[fi].spec.destination.to_string()),
            ],
        );
        self.pump(k, fi);
    }

    /// Sends queued packets if a usable route exists, otherwise makes sure
    /// a discovery is running.
    fn pump(&mut self, k: &mut Kernel<Timer>, fi: usize) {
        let now = k.now();
        let lifetime = self.cfg.protocol.route_lifetime;
        let flow = &mut self.flows[fi];
        if let (Some(r), Some(life)) = (flow.route, lifetime) {
            if now.saturating_sub(r.since) >= life {
                flow.route = None;
            }
        }
        match flow.route {
            Some(r) => {
                while let Some(p) = self.flows[fi].queue.pop_front() {
                    self.send_data(k, fi, r.request_id, p);
                }
            }
            None => {
                if flow.discovery.is_none() {
                    self.start_discovery(k, fi);
                }
            }
        }
    }

    fn send_data(&mut self, k: &mut Kernel<Timer>, fi: usize, request_id: u64, packet: u64) {
        let src = self.flows[fi].spec.source;
        let node = &self.nodes[src.0 as usize];
        let Some(entry) = node.routes.get(request_id) else {
            return;
        };
        let Some(next) = entry.next_hop.and_then(|p| node.links.get(&p).copied()) else {
            trace(
                k,
                "drop",
                src,
                vec![
                    ("pkt", packet.to_string()),
                    ("reason", "no_next_hop".into()),
                ],
            );
            return;
        };
        let own = entry.own_pseudo;
        self.metrics.data_sent += 1;
        let m = msg(
            k,
            SenderHandle::Pseudo(own),
            Payload::Data(Data {
                request_id,
                packet_id: packet,
            }),
        );
        k.unicast(src, next, m);
    }

    fn start_discovery(&mut self, k: &mut Kernel<Timer>, fi: usize) {
        let flow = &mut self.flows[fi];
        flow.generation += 1;
        let generation = flow.generation;
        let (src, dst) = (flow.spec.source, flow.spec.destination);
        flow.discovery = Some(Discovery {
            generation,
            dest_pos: None,
            code: None,
            requests: Vec::new(),
            excluded: Vec::new(),
            copy_in_flight: false,
            candidates: Vec::new(),
        });
        flow.report.discoveries.push(DiscoveryReport {
            started: k.now(),
            candidates: Vec::new(),
            selected: None,
        });
        self.metrics.route_discoveries += 1;
        trace(
            k,
            "discover",
            src,
            vec![("dst", dst.to_string()), ("gen", generation.to_string())],
        );

        let servers = servers_for(dst, k.position(src), &self.alive_servers(k), &self.vhr);
        let Some(&server) = servers.first() else {
            self.metrics.position_service_failures += 1;
            trace(k, "pos_fail", src, vec![("target", dst.to_string())]);
            self.fail_discovery(k, fi);
            return;
        };
        let lat = self.cfg.protocol.service_latency;
        let m = msg(
            k,
            SenderHandle::Node(src),
            Payload::PosRequest(PosRequest {
                requester: src,
                target: dst,
            }),
        );
        k.service_send(src, server, m, lat);
        let window = SimTime(2 * lat.0) + self.cfg.protocol.wait_window;
        k.schedule_timer_in(
            window,
            src,
            Timer::WaitWindow {
                flow: fi,
                generation,
            },
        );
    }

    fn fail_discovery(&mut self, k: &mut Kernel<Timer>, fi: usize) {
        let flow = &mut self.flows[fi];
        flow.discovery = None;
        let src = flow.spec.source;
        let dropped: Vec<u64> = flow.queue.drain(..).collect();
        trace(
            k,
            "discovery_fail",
            src,
            vec![("dst", flow.spec.destination.to_string())],
        );
        for p in dropped {
            trace(
                k,
                "drop",
                src,
                vec![("pkt", p.to_string()), ("reason", "no_route".into())],
            );
        }
    }

    fn on_pos_reply(&mut self, k: &mut Kernel<Timer>, n: NodeId, reply: PosReply) {
        let waiting: Vec<usize> = self
            .flows
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                f.spec.source == n
                    && f.spec.destination == reply.target
                    && f.discovery.as_ref().is_some_and(|d| d.dest_pos.is_none())
            })
            .map(|(i, _)| i)
            .collect();
        for fi in waiting {
            match reply.record {
                Some((pos, _, code)) => {
                    let d = self.flows[fi].discovery.as_mut().expect("filtered");
                    d.dest_pos = Some(pos);
                    d.code = Some(code);
                    self.launch_copy(k, fi);
                }
                None => {
                    self.metrics.position_service_failures += 1;
                    trace(k, "pos_fail", n, vec![("target", reply.target.to_string())]);
                    self.fail_discovery(k, fi);
                }
            }
        }
    }

    /// Starts the next route request copy, avoiding the first hops (and
    /// denied positions) of earlier copies.
    fn launch_copy(&mut self, k: &mut Kernel<Timer>, fi: usize) {
        let max = self.cfg.protocol.route_candidates as usize;
        let src = self.flows[fi].spec.source;
        let Some(d) = self.flows[fi].discovery.as_mut() else {
            return;
        };
        if d.copy_in_flight || d.requests.len() >= max {
            return;
        }
        let Some(dest_pos) = d.dest_pos else {
            return;
        };
        let request_id: u64 = k.rng.gen();
        d.requests.push(request_id);
        d.copy_in_flight = true;
        let excluded = d.excluded.clone();
        self.request_flow.insert(request_id, fi);

        let claimed = self.claimed_pos(k, src);
        let own = make_pseudo_id(claimed, k.now());
        self.node(src).routes.insert(RoutingTableEntry {
            request_id,
            prev_hop: None,
            next_hop: None,
            own_pseudo: own,
        });
        let rreq = Rreq {
            request_id,
            dest_pos,
            sender_to_dest: distance(claimed, dest_pos),
            sender_pseudo: own,
            hop_count: 0,
            excluded,
            source_id: self.cfg.protocol.real_id_rreq.then_some(src),
        };
        self.start_hop(k, src, rreq);
    }

    fn copy_finished(
        &mut self,
        k: &mut Kernel<Timer>,
        node: NodeId,
        request_id: u64,
        first_hop: Option<Position>,
    ) {
        let Some(&fi) = self.request_flow.get(&request_id) else {
            return;
        };
        if self.flows[fi].spec.source != node {
            return;
        }
        let hop_excluded = self.nodes[node.0 as usize]
            .hops
            .get(&request_id)
            .map(|h| h.excluded.clone())
            .unwrap_or_default();
        let Some(d) = self.flows[fi].discovery.as_mut() else {
            return;
        };
        if !d.requests.contains(&request_id) {
            return;
        }
        d.copy_in_flight = false;
        for p in hop_excluded {
            if !d.excluded.iter().any(|e| e.same_bits(&p)) {
                d.excluded.push(p);
            }
        }
        if let Some(p) = first_hop {
            d.excluded.push(p);
            self.launch_copy(k, fi);
        }
    }

    fn on_source_rrep(&mut self, k: &mut Kernel<Timer>, n: NodeId, rrep: Rrep) {
        let Some(&fi) = self.request_flow.get(&rrep.request_id) else {
            return;
        };
        let dst = self.flows[fi].spec.destination;
        let Some(d) = self.flows[fi].discovery.as_ref() else {
            return;
        };
        if !d.requests.contains(&rrep.request_id) {
            return;
        }
        if let Err(e) = verify_rrep(&self.directory[dst.0 as usize], &rrep, d.code) {
            self.metrics.rrep_rejected += 1;
            trace(
                k,
                "rrep_reject",
                n,
                vec![("req", rrep.request_id.to_string()), ("err", e.to_string())],
            );
            return;
        }
        let own = self.nodes[n.0 as usize]
            .routes
            .get(rrep.request_id)
            .map(|e| e.own_pseudo)
            .expect("source entry");
        let mut path = vec![own];
        path.extend(rrep.path.iter().rev().copied());
        let distinct: BTreeSet<PseudoId> = path.iter().copied().collect();
        if distinct.len() != path.len() {
            self.metrics.looped_routes += 1;
            trace(k, "loop", n, vec![("req", rrep.request_id.to_string())]);
            return;
        }
        let trust_string = TrustString(rrep.trust_string);
        trace(
            k,
            "candidate",
            n,
            vec![
                ("req", rrep.request_id.to_string()),
                ("hops", rrep.route_hops.to_string()),
                ("trust", trust_string.to_string()),
            ],
        );
        let d = self.flows[fi].discovery.as_mut().expect("checked");
        d.candidates.push(RouteCandidate {
            request_id: rrep.request_id,
            path,
            hop_count: rrep.route_hops,
            trust_string,
        });
    }

    fn close_discovery(&mut self, k: &mut Kernel<Timer>, fi: usize, generation: u32) {
        let flow = &mut self.flows[fi];
        let Some(d) = flow.discovery.as_ref() else {
            return;
        };
        if d.generation != generation {
            return;
        }
        let src = flow.spec.source;
        let candidates = d.candidates.clone();
        let report = flow.report.discoveries.last_mut().expect("started");
        report.candidates = candidates.clone();
        let Ok(idx) = route_select(self.cfg.protocol.mode, &candidates) else {
            self.fail_discovery(k, fi);
            return;
        };
        report.selected = Some(idx);
        let chosen = &candidates[idx];
        flow.discovery = None;
        flow.route = Some(ActiveRoute {
            request_id: chosen.request_id,
            since: k.now(),
        });
        self.metrics.routes_found += 1;
        self.hop_sum += chosen.hop_count as u64;
        let avg = avg_trust(&chosen.trust_string);
        if let Some(a) = avg {
            self.trust_sum += a;
            self.trust_n += 1;
        }
        trace(
            k,
            "select",
            src,
            vec![
                ("req", chosen.request_id.to_string()),
                ("mode", self.cfg.protocol.mode.number().to_string()),
                ("hops", chosen.hop_count.to_string()),
                ("trust", chosen.trust_string.to_string()),
                ("avg", avg.map_or("nan".into(), |a| format!("{a:.2}"))),
                ("candidates", candidates.len().to_string()),
            ],
        );
        self.pump(k, fi);
    }

    // ---- per-hop discovery ----------------------------------------------

    fn start_hop(&mut self, k: &mut Kernel<Timer>, n: NodeId, rreq: Rreq) {
        let request_id = rreq.request_id;
        let excluded = rreq.excluded.clone();
        self.node(n).hops.insert(
            request_id,
            HopState {
                rreq,
                attempt: 0,
                excluded,
                stage: HopStage::Contending,
                winner: None,
            },
        );
        self.broadcast_attempt(k, n, request_id);
    }

    fn broadcast_attempt(&mut self, k: &mut Kernel<Timer>, n: NodeId, request_id: u64) {
        let hop = self.node(n).hops.get_mut(&request_id).expect("hop state");
        hop.attempt += 1;
        hop.stage = HopStage::Contending;
        hop.winner = None;
        let attempt = hop.attempt;
        let mut rreq = hop.rreq.clone();
        rreq.excluded = hop.excluded.clone();
        self.rounds.insert(
            (n, request_id),
            Round {
                attempt,
                entrants: Vec::new(),
                prioritized: Vec::new(),
            },
        );
        trace(
            k,
            "rreq",
            n,
            vec![
                ("req", request_id.to_string()),
                ("hop", rreq.hop_count.to_string()),
                ("attempt", attempt.to_string()),
            ],
        );
        let m = msg(
            k,
            SenderHandle::Pseudo(rreq.sender_pseudo),
            Payload::Rreq(rreq),
        );
        k.broadcast(n, m);
        let settle = k.radio.delay(k.radio.range) + SimTime(1);
        let at = settle + self.cfg.protocol.contention.prioritization_time();
        k.schedule_timer_in(
            at,
            n,
            Timer::PrioEnd {
                request_id,
                attempt,
            },
        );
    }

    fn on_rreq(&mut self, k: &mut Kernel<Timer>, n: NodeId, from: NodeId, rreq: Rreq) {
        let node = &self.nodes[n.0 as usize];
        if node.routes.contains(rreq.request_id) {
            return;
        }
        let claimed = self.claimed_pos(k, n);
        let tolerance = self.cfg.protocol.probe_tolerance;
        if rreq
            .excluded
            .iter()
            .any(|e| distance(*e, claimed) <= tolerance)
        {
            return;
        }
        if let (true, Some(src)) = (self.cfg.protocol.real_id_rreq, rreq.source_id) {
            match authenticate_source(&node.trust, src, self.cfg.protocol.trust_floor) {
                SourceCheck::Accept => {
                    if let Some(p) = node.neighbors.get(src).map(|e| e.position) {
                        let now = k.now();
                        self.node(n).neighbors.touch(src, p, now);
                    }
                }
                SourceCheck::Drop => {
                    trace(k, "untrusted", n, vec![("source", src.to_string())]);
                    return;
                }
                SourceCheck::Pending => {
                    if !node.trust_pending.contains_key(&src) {
                        let deadline = k.now() + self.cfg.protocol.trust_timeout;
                        self.node(n).trust_pending.insert(src, deadline);
                        let q = TrustQuery {
                            requester: n,
                            subject: src,
                            verdict: false,
                            timestamp: k.now(),
                        };
                        let m = msg(k, SenderHandle::Node(n), Payload::TrustRequest(q));
                        k.service_send(n, src, m, self.cfg.protocol.service_latency);
                        k.schedule_timer(deadline, n, Timer::TrustTimeout { source: src });
                    }
                    return;
                }
            }
        }
        let node = &self.nodes[n.0 as usize];
        let is_dest = node.owns(rreq.dest_pos);
        let class = classify_with_width(
            rreq.sender_to_dest,
            distance(claimed, rreq.dest_pos),
            self.cfg.class_width(),
            is_dest,
        );
        if !class.contends() {
            return;
        }
        let aggressive = node.adversary.is_some();
        let Some(round) = self.rounds.get_mut(&(from, rreq.request_id)) else {
            return;
        };
        round.entrants.push(Entrant {
            node: n,
            class,
            aggressive,
        });
        let pseudo = make_pseudo_id(claimed, k.now());
        self.node(n).candidacies.insert(
            rreq.request_id,
            Candidacy {
                sender: from,
                rreq,
                pseudo,
                claimed,
                class,
            },
        );
    }

    fn prio_end(&mut self, k: &mut Kernel<Timer>, n: NodeId, request_id: u64, attempt: u32) {
        let Some(round) = self.rounds.get_mut(&(n, request_id)) else {
            return;
        };
        if round.attempt != attempt {
            return;
        }
        let contenders: Vec<Contender<NodeId>> = round
            .entrants
            .iter()
            .map(|e| Contender {
                id: e.node,
                class: e.class,
                aggressive: e.aggressive,
            })
            .collect();
        let kept = contention_prioritization(&contenders, &self.cfg.protocol.contention);
        round.prioritized = kept.clone();
        trace(
            k,
            "prio",
            n,
            vec![
                ("req", request_id.to_string()),
                ("entrants", contenders.len().to_string()),
                ("kept", kept.len().to_string()),
                (
                    "class",
                    kept.first().map_or("-".into(), |c| c.class.to_string()),
                ),
            ],
        );
        if kept.is_empty() {
            self.rounds.remove(&(n, request_id));
            trace(
                k,
                "yield",
                n,
                vec![("req", request_id.to_string()), ("outcome", "empty".into())],
            );
            self.retry_or_dead_end(k, n, request_id);
            return;
        }
        let at = self.cfg.protocol.contention.elimination_time();
        k.schedule_timer_in(
            at,
            n,
            Timer::ElimEnd {
                request_id,
                attempt,
            },
        );
    }

    fn elim_end(&mut self, k: &mut Kernel<Timer>, n: NodeId, request_id: u64, attempt: u32) {
        let Some(round) = self.rounds.remove(&(n, request_id)) else {
            return;
        };
        if round.attempt != attempt {
            return;
        }
        let cfg = self.cfg.protocol.contention;
        let (draws, survivors) = contention_elimination(&round.prioritized, &cfg, &mut k.rng);
        trace(
            k,
            "elim",
            n,
            vec![
                ("req", request_id.to_string()),
                (
                    "longest",
                    draws.iter().map(|d| d.1).max().unwrap_or(0).to_string(),
                ),
                ("survivors", survivors.len().to_string()),
            ],
        );
        let (_, outcome) = contention_yield(&survivors, &cfg, &mut k.rng);
        match outcome {
            YieldOutcome::Winner { id, delay } => {
                trace(
                    k,
                    "yield",
                    n,
                    vec![
                        ("req", request_id.to_string()),
                        ("outcome", "winner".into()),
                        ("winner", id.to_string()),
                        ("delay", delay.to_string()),
                    ],
                );
                if let Some(hop) = self.node(n).hops.get_mut(&request_id) {
                    hop.stage = HopStage::AwaitHrep;
                    hop.winner = Some(id);
                }
                k.schedule_timer_in(
                    SimTime(cfg.slot.0 * (delay as u64 + 1)),
                    id,
                    Timer::SendHrep { request_id },
                );
                let timeout = self.hop_allowance();
                k.schedule_timer_in(
                    timeout,
                    n,
                    Timer::HopTimeout {
                        request_id,
                        attempt,
                    },
                );
            }
            YieldOutcome::Collision { ids, delay } => {
                self.metrics.hrep_collisions += 1;
                trace(
                    k,
                    "yield",
                    n,
                    vec![
                        ("req", request_id.to_string()),
                        ("outcome", "collision".into()),
                        ("colliders", ids.len().to_string()),
                        ("delay", delay.to_string()),
                    ],
                );
                k.schedule_timer_in(
                    cfg.yield_time(),
                    n,
                    Timer::Retry {
                        request_id,
                        attempt,
                    },
                );
            }
            YieldOutcome::Empty => {
                trace(
                    k,
                    "yield",
                    n,
                    vec![("req", request_id.to_string()), ("outcome", "empty".into())],
                );
                self.retry_or_dead_end(k, n, request_id);
            }
        }
    }

    fn retry_or_dead_end(&mut self, k: &mut Kernel<Timer>, n: NodeId, request_id: u64) {
        let budget = self.cfg.protocol.retry_budget;
        let Some(hop) = self.node(n).hops.get_mut(&request_id) else {
            return;
        };
        if hop.attempt > budget {
            hop.stage = HopStage::Failed;
            let is_first = hop.rreq.hop_count == 0;
            self.metrics.dead_ends += 1;
            trace(k, "dead_end", n, vec![("req", request_id.to_string())]);
            if is_first {
                self.copy_finished(k, n, request_id, None);
            }
        } else {
            self.broadcast_attempt(k, n, request_id);
        }
    }

    fn send_hrep(&mut self, k: &mut Kernel<Timer>, n: NodeId, request_id: u64) {
        let node = &self.nodes[n.0 as usize];
        if node.routes.contains(request_id) {
            return;
        }
        let Some(c) = node.candidacies.get(&request_id) else {
            return;
        };
        let hrep = Hrep {
            request_id,
            receiver_pseudo: c.pseudo,
            claimed_position: c.claimed,
            node_class: c.class.get(),
        };
        let to = c.sender;
        let m = msg(k, SenderHandle::Pseudo(c.pseudo), Payload::Hrep(hrep));
        k.unicast(n, to, m);
    }

    fn on_hrep(&mut self, k: &mut Kernel<Timer>, n: NodeId, from: NodeId, hrep: Hrep) {
        let validate = self.needs_validation();
        let servers = self.alive_servers(k);
        let own_pos = k.position(n);
        let node = self.node(n);
        let Some(hop) = node.hops.get_mut(&hrep.request_id) else {
            return;
        };
        if hop.stage != HopStage::AwaitHrep || hop.winner != Some(from) {
            return;
        }
        node.links.insert(hrep.receiver_pseudo, from);
        let nearest = servers
            .iter()
            .min_by(|a, b| {
                distance(own_pos, a.1)
                    .total_cmp(&distance(own_pos, b.1))
                    .then(a.0.cmp(&b.0))
            })
            .map(|s| s.0);
        match (validate, nearest) {
            (true, Some(server)) => {
                let validation_id = self.next_validation;
                self.next_validation += 1;
                self.validations.insert(validation_id, from);
                let hop = self
                    .node(n)
                    .hops
                    .get_mut(&hrep.request_id)
                    .expect("present");
                hop.stage = HopStage::Validating {
                    validation_id,
                    hrep,
                };
                let m = msg(
                    k,
                    SenderHandle::Node(n),
                    Payload::HrepValidation(HrepValidation {
                        validation_id,
                        hrep,
                    }),
                );
                k.service_send(n, server, m, self.cfg.protocol.service_latency);
            }
            _ => self.send_cnfm(k, n, from, hrep),
        }
    }

    fn send_cnfm(&mut self, k: &mut Kernel<Timer>, n: NodeId, winner: NodeId, hrep: Hrep) {
        let hop = self
            .node(n)
            .hops
            .get_mut(&hrep.request_id)
            .expect("hop state");
        hop.stage = HopStage::AwaitAck { hrep };
        let sender_pseudo = hop.rreq.sender_pseudo;
        let cnfm = Cnfm {
            request_id: hrep.request_id,
            sender_pseudo,
            receiver_pseudo: hrep.receiver_pseudo,
        };
        let m = msg(k, SenderHandle::Pseudo(sender_pseudo), Payload::Cnfm(cnfm));
        k.unicast(n, winner, m);
    }

    fn on_cnfm(&mut self, k: &mut Kernel<Timer>, n: NodeId, from: NodeId, c: Cnfm) {
        let node = self.node(n);
        if node.routes.contains(c.request_id) {
            return;
        }
        let Some(cand) = node.candidacies.get(&c.request_id) else {
            return;
        };
        if cand.pseudo != c.receiver_pseudo || cand.sender != from {
            return;
        }
        let cand = node.candidacies.remove(&c.request_id).expect("present");
        node.routes.insert(RoutingTableEntry {
            request_id: c.request_id,
            prev_hop: Some(c.sender_pseudo),
            next_hop: None,
            own_pseudo: cand.pseudo,
        });
        node.links.insert(c.sender_pseudo, from);
        let ack = Ack {
            request_id: c.request_id,
            receiver_pseudo: cand.pseudo,
        };
        let m = msg(k, SenderHandle::Pseudo(cand.pseudo), Payload::Ack(ack));
        k.unicast(n, from, m);

        if cand.class == NodeClass::DESTINATION {
            let pos = k.position(n);
            let node = self.node(n);
            let code = node
                .code_for(cand.rreq.dest_pos)
                .or(node.reporter.current_code())
                .unwrap_or(AuthCode(0));
            let rrep = originate_rrep(
                &node.key.secret_part,
                code,
                c.request_id,
                cand.rreq.hop_count + 1,
                cand.pseudo,
            );
            node.dest_sessions.insert(
                c.request_id,
                DestSession {
                    reference: pos,
                    prev: c.sender_pseudo,
                },
            );
            trace(
                k,
                "rrep",
                n,
                vec![
                    ("req", c.request_id.to_string()),
                    ("hops", rrep.route_hops.to_string()),
                ],
            );
            let m = msg(k, SenderHandle::Pseudo(cand.pseudo), Payload::Rrep(rrep));
            k.unicast(n, from, m);
        } else {
            let rreq = Rreq {
                request_id: c.request_id,
                dest_pos: cand.rreq.dest_pos,
                sender_to_dest: distance(cand.claimed, cand.rreq.dest_pos),
                sender_pseudo: cand.pseudo,
                hop_count: cand.rreq.hop_count + 1,
                excluded: Vec::new(),
                source_id: cand.rreq.source_id,
            };
            self.start_hop(k, n, rreq);
        }
    }

    fn on_ack(&mut self, k: &mut Kernel<Timer>, n: NodeId, a: Ack) {
        let node = self.node(n);
        let Some(hop) = node.hops.get_mut(&a.request_id) else {
            return;
        };
        let HopStage::AwaitAck { hrep } = hop.stage else {
            return;
        };
        if hrep.receiver_pseudo != a.receiver_pseudo {
            return;
        }
        hop.stage = HopStage::Done;
        let attempt = hop.attempt;
        let first = hop.rreq.hop_count == 0;
        if let Some(e) = node.routes.get_mut(a.request_id) {
            e.next_hop = Some(a.receiver_pseudo);
        }
        *self.metrics.contention_rounds.entry(attempt).or_default() += 1;
        trace(
            k,
            "hop",
            n,
            vec![
                ("req", a.request_id.to_string()),
                ("rounds", attempt.to_string()),
            ],
        );
        if first {
            self.copy_finished(k, n, a.request_id, Some(hrep.claimed_position));
        }
    }

    fn on_rrep(&mut self, k: &mut Kernel<Timer>, n: NodeId, from: NodeId, mut rrep: Rrep) {
        let unknown = self.cfg.protocol.default_unknown_trust;
        let node = self.node(n);
        let Some(entry) = node.routes.get(rrep.request_id).copied() else {
            return;
        };
        if rrep.hop_count >= 1 {
            let level = node.trust.get(from);
            append_trust(&mut rrep, level, unknown);
        }
        rrep.hop_count += 1;
        match entry.prev_hop {
            Some(prev) => {
                rrep.path.push(entry.own_pseudo);
                let Some(&to) = node.links.get(&prev) else {
                    return;
                };
                let m = msg(
                    k,
                    SenderHandle::Pseudo(entry.own_pseudo),
                    Payload::Rrep(rrep),
                );
                k.unicast(n, to, m);
            }
            None => self.on_source_rrep(k, n, rrep),
        }
    }

    // ---- validation at servers ------------------------------------------

    /// Resident node for a claimed position: the nearest record, across
    /// all servers, within the update threshold plus probe tolerance.
    fn resolve(&self, pos: Position) -> Option<NodeId> {
        let limit = self.cfg.protocol.update_threshold + self.cfg.protocol.probe_tolerance;
        self.nodes
            .iter()
            .filter_map(|n| n.server.as_ref())
            .flat_map(|s| s.state.records.values())
            .map(|r| (distance(r.pos, pos), r.node))
            .filter(|(d, _)| *d <= limit)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, n)| n)
    }

    fn on_validation(
        &mut self,
        k: &mut Kernel<Timer>,
        s: NodeId,
        requester: NodeId,
        v: HrepValidation,
    ) {
        if self.nodes[s.0 as usize].server.is_none() {
            return;
        }
        let claimed = v.hrep.claimed_position;
        if self.cfg.defenses.pathselector {
            let resolved = self.resolve(claimed);
            let watchers = resolved.map(|r| self.watchers(k, r)).unwrap_or_default();
            let decision = pathselector_check(
                watchers.iter().filter_map(|w| {
                    self.nodes[w.0 as usize]
                        .server
                        .as_ref()
                        .map(|s| &s.watchdog)
                }),
                resolved,
            );
            if decision == PathDecision::Deny {
                self.metrics.pathselector_denials += 1;
                trace(
                    k,
                    "deny",
                    s,
                    vec![
                        ("node", resolved.map_or("-".into(), |r| r.to_string())),
                        ("reason", "flagged".into()),
                    ],
                );
                self.send_verdict(k, s, requester, v.validation_id, Verdict::Misbehaving);
                return;
            }
        }
        if !self.cfg.defenses.sybil {
            self.send_verdict(k, s, requester, v.validation_id, Verdict::Allow);
            return;
        }
        let winner = self.validations.get(&v.validation_id).copied();
        if winner.is_some_and(|w| self.nodes[w.0 as usize].is_sybil()) {
            self.metrics.sybil_probes_adversary += 1;
        } else {
            self.metrics.sybil_probes_honest += 1;
        }
        let now = k.now();
        let timeout = self.cfg.protocol.probe_timeout;
        let server = self.node(s).server.as_mut().expect("checked");
        let (probe_id, probe) =
            server
                .prober
                .start(claimed, now, timeout, requester, v.validation_id);
        let alive: Vec<(NodeId, Position)> = k
            .node_ids()
            .filter(|n| k.is_alive(*n))
            .map(|n| (n, k.position(n)))
            .collect();
        let recipients = probe_recipients(claimed, self.cfg.protocol.probe_tolerance, alive);
        trace(
            k,
            "probe",
            s,
            vec![
                ("target", claimed.to_string()),
                ("recipients", recipients.len().to_string()),
            ],
        );
        for r in recipients {
            let p = SybilProbe {
                probe_id,
                target_pos: claimed,
                deadline: probe.deadline,
            };
            let m = msg(k, SenderHandle::Node(s), Payload::SybilProbe(p));
            k.service_send(s, r, m, self.cfg.protocol.service_latency);
        }
        k.schedule_timer(probe.deadline, s, Timer::ProbeTimeout { probe_id });
    }

    fn send_verdict(
        &mut self,
        k: &mut Kernel<Timer>,
        s: NodeId,
        to: NodeId,
        validation_id: u64,
        verdict: Verdict,
    ) {
        let m = msg(
            k,
            SenderHandle::Node(s),
            Payload::ValidationVerdict(ValidationVerdict {
                validation_id,
                verdict,
            }),
        );
        k.service_send(s, to, m, self.cfg.protocol.service_latency);
    }

    fn on_verdict(&mut self, k: &mut Kernel<Timer>, n: NodeId, v: ValidationVerdict) {
        let found = self.nodes[n.0 as usize]
            .hops
            .iter()
            .find_map(|(req, h)| match h.stage {
                HopStage::Validating {
                    validation_id,
                    hrep,
                } if validation_id == v.validation_id => Some((*req, hrep, h.winner)),
                _ => None,
            });
        let Some((request_id, hrep, Some(winner))) = found else {
            return;
        };
        if v.verdict == Verdict::Allow {
            self.send_cnfm(k, n, winner, hrep);
        } else {
            trace(
                k,
                "excluded",
                n,
                vec![
                    ("req", request_id.to_string()),
                    ("pos", hrep.claimed_position.to_string()),
                ],
            );
            let hop = self.node(n).hops.get_mut(&request_id).expect("found");
            hop.excluded.push(hrep.claimed_position);
            self.retry_or_dead_end(k, n, request_id);
        }
    }

    // ---- data plane -----------------------------------------------------

    fn observe(&mut self, k: &mut Kernel<Timer>, relay: NodeId, ev: ForwardEvent) {
        let now = k.now();
        for w in self.watchers(k, relay) {
            let server = self.node(w).server.as_mut().expect("watcher");
            if let Observation::Pending { deadline } = server.watchdog.observe(now, ev) {
                k.schedule_timer(deadline, w, Timer::WatchdogDeadline);
            }
        }
    }

    fn watchdog_deadline(&mut self, k: &mut Kernel<Timer>, s: NodeId) {
        let now = k.now();
        let Some(server) = self.node(s).server.as_mut() else {
            return;
        };
        let charged = server.watchdog.expire(now);
        let flagged_now: Vec<NodeId> = charged
            .iter()
            .copied()
            .filter(|n| server.watchdog.is_misbehaving(*n))
            .collect();
        for c in &charged {
            trace(k, "charge", s, vec![("node", c.to_string())]);
        }
        for n in flagged_now {
            if self.flagged.contains_key(&n) {
                continue;
            }
            let window = self.cfg.protocol.watchdog_timeout;
            let opportunities = self.opportunities.get(&n).map_or(0, |v| {
                v.iter().filter(|t| **t + window <= now).count() as u32
            });
            self.flagged.insert(n, opportunities);
            if self.nodes[n.0 as usize]
                .adversary
                .is_some_and(|a| a.is_dropper())
            {
                self.metrics.watchdog_tp += 1;
            } else {
                self.metrics.watchdog_fp += 1;
            }
            trace(
                k,
                "flag",
                s,
                vec![
                    ("node", n.to_string()),
                    ("after", opportunities.to_string()),
                ],
            );
        }
    }

    fn on_data(&mut self, k: &mut Kernel<Timer>, n: NodeId, d: Data) {
        let node = &self.nodes[n.0 as usize];
        let Some(entry) = node.routes.get(d.request_id).copied() else {
            trace(
                k,
                "drop",
                n,
                vec![
                    ("pkt", d.packet_id.to_string()),
                    ("reason", "no_route".into()),
                ],
            );
            return;
        };
        if node.dest_sessions.contains_key(&d.request_id) {
            if self.delivered.insert(d.packet_id) {
                self.metrics.data_delivered += 1;
                if let Some(&fi) = self.packet_flow.get(&d.packet_id) {
                    self.flows[fi].report.delivered += 1;
                }
                trace(k, "deliver", n, vec![("pkt", d.packet_id.to_string())]);
            }
            return;
        }
        let Some(next) = entry.next_hop.and_then(|p| node.links.get(&p).copied()) else {
            trace(
                k,
                "drop",
                n,
                vec![
                    ("pkt", d.packet_id.to_string()),
                    ("reason", "no_next_hop".into()),
                ],
            );
            return;
        };
        let profile = node.adversary;
        self.opportunities.entry(n).or_default().push(k.now());
        self.observe(
            k,
            n,
            ForwardEvent::Received {
                node: n,
                packet: d.packet_id,
            },
        );
        if adversary_forward_decision(profile.as_ref(), &mut k.rng) == ForwardDecision::Drop {
            trace(
                k,
                "drop",
                n,
                vec![
                    ("pkt", d.packet_id.to_string()),
                    ("reason", "adversary".into()),
                ],
            );
            return;
        }
        let m = msg(k, SenderHandle::Pseudo(entry.own_pseudo), Payload::Data(d));
        k.unicast(n, next, m);
        self.observe(
            k,
            n,
            ForwardEvent::Transmitted {
                node: n,
                packet: d.packet_id,
            },
        );
    }

    fn on_alert(&mut self, k: &mut Kernel<Timer>, n: NodeId, a: MobilityAlert) {
        let node = &self.nodes[n.0 as usize];
        let Some(entry) = node.routes.get(a.request_id).copied() else {
            return;
        };
        match entry.prev_hop {
            Some(prev) => {
                if let Some(&to) = node.links.get(&prev) {
                    let m = msg(
                        k,
                        SenderHandle::Pseudo(entry.own_pseudo),
                        Payload::MobilityAlert(a),
                    );
                    k.unicast(n, to, m);
                }
            }
            None => {
                let Some(&fi) = self.request_flow.get(&a.request_id) else {
                    return;
                };
                let flow = &mut self.flows[fi];
                if flow.route.map(|r| r.request_id) != Some(a.request_id) {
                    return;
                }
                trace(
                    k,
                    "alert_rx",
                    n,
                    vec![
                        ("req", a.request_id.to_string()),
                        ("pos", a.new_pos.to_string()),
                    ],
                );
                flow.route = None;
                if !flow.queue.is_empty() && flow.discovery.is_none() {
                    self.start_discovery(k, fi);
                }
            }
        }
    }

    // ---- neighbor security ----------------------------------------------

    fn on_beacon(&mut self, k: &mut Kernel<Timer>, n: NodeId, b: Beacon) {
        let own = k.position(n);
        let obs = BeaconObservation {
            sender: b.sender,
            claimed: b.position,
            tusn: b.tusn,
            arrival: k.now(),
        };
        let cfg = self.verify;
        let node = self.node(n);
        if let BeaconVerdict::Rejected(reason) = verify_beacon(&mut node.neighbors, own, &obs, &cfg)
        {
            node.trust.lower(b.sender, cfg.trust_penalty);
            self.metrics.beacon_rejections += 1;
            trace(
                k,
                "beacon_reject",
                n,
                vec![
                    ("from", b.sender.to_string()),
                    ("reason", format!("{reason:?}")),
                ],
            );
        }
    }

    fn on_hello(&mut self, k: &mut Kernel<Timer>, n: NodeId, from: NodeId, h: HelloM1) {
        match h.certificate.verify(&self.authority) {
            Some((id, _)) if id == from => {
                let delay = self.cfg.protocol.processing_delay;
                if delay.0 == 0 {
                    self.send_reply_m2(k, n, from);
                } else {
                    k.schedule_timer_in(delay, n, Timer::SendReplyM2 { to: from });
                }
            }
            _ => trace(k, "bad_certificate", n, vec![("from", from.to_string())]),
        }
    }

    fn send_reply_m2(&mut self, k: &mut Kernel<Timer>, n: NodeId, to: NodeId) {
        let reply = ReplyM2 {
            certificate: self.nodes[n.0 as usize].certificate.clone(),
            position: self.claimed_pos(k, n),
        };
        let m = msg(k, SenderHandle::Node(n), Payload::ReplyM2(reply));
        k.unicast(n, to, m);
    }

    fn on_reply_m2(&mut self, k: &mut Kernel<Timer>, n: NodeId, from: NodeId, r: ReplyM2) {
        let Some(t0) = self.nodes[n.0 as usize].hello_sent_at else {
            return;
        };
        let Some((id, key)) = r.certificate.verify(&self.authority) else {
            trace(k, "bad_certificate", n, vec![("from", from.to_string())]);
            return;
        };
        if id != from {
            return;
        }
        let own = k.position(n);
        let now = k.now();
        let outcome = check_handshake(own, r.position, t0, now, self.cfg.protocol.processing_delay);
        let penalty = self.cfg.protocol.trust_penalty;
        let node = self.node(n);
        match outcome {
            HandshakeOutcome::Accepted { .. } => {
                node.neighbors.admit_verified(id, r.position, key, now)
            }
            HandshakeOutcome::Suspect {
                bound,
                claimed_distance,
            } => {
                node.neighbors.penalize(id, penalty);
                node.trust.lower(id, penalty);
                self.metrics.handshake_suspects += 1;
                trace(
                    k,
                    "suspect",
                    n,
                    vec![
                        ("from", id.to_string()),
                        ("bound", format!("{bound:.1}")),
                        ("claimed", format!("{claimed_distance:.1}")),
                    ],
                );
            }
        }
    }

    fn on_message(
        &mut self,
        k: &mut Kernel<Timer>,
        to: NodeId,
        from: NodeId,
        m: Message,
        channel: Channel,
    ) {
        let lat = self.cfg.protocol.service_latency;
        match m.payload {
            Payload::Beacon(b) => self.on_beacon(k, to, b),
            Payload::Rreq(r) => self.on_rreq(k, to, from, r),
            Payload::Hrep(h) => self.on_hrep(k, to, from, h),
            Payload::Cnfm(c) => self.on_cnfm(k, to, from, c),
            Payload::Ack(a) => self.on_ack(k, to, a),
            Payload::Rrep(r) => self.on_rrep(k, to, from, r),
            Payload::HelloM1(h) => self.on_hello(k, to, from, h),
            Payload::ReplyM2(r) => self.on_reply_m2(k, to, from, r),
            Payload::TrustRequest(q) => {
                let resp = TrustQuery {
                    requester: q.requester,
                    subject: to,
                    verdict: true,
                    timestamp: k.now(),
                };
                let reply = msg(k, SenderHandle::Node(to), Payload::TrustResponse(resp));
                k.service_send(to, from, reply, lat);
            }
            Payload::TrustResponse(q) => {
                let now = k.now();
                let floor = self.cfg.protocol.trust_floor;
                let node = self.node(to);
                if node
                    .trust_pending
                    .get(&q.subject)
                    .is_some_and(|d| *d >= now)
                {
                    node.trust_pending.remove(&q.subject);
                    on_trust_response(&mut node.trust, q.subject, q.verdict, floor);
                }
            }
            Payload::PosUpdate(u) => {
                if let Some(s) = self.node(to).server.as_mut() {
                    s.state.apply_update(&u);
                }
            }
            Payload::PosRequest(r) => {
                let Some(s) = self.nodes[to.0 as usize].server.as_ref() else {
                    return;
                };
                let reply = s.state.handle_pos_request(&r);
                let out = msg(k, SenderHandle::Node(to), Payload::PosReply(reply));
                k.service_send(to, from, out, lat);
            }
            Payload::PosReply(r) => self.on_pos_reply(k, to, r),
            Payload::MobilityAlert(a) => match channel {
                Channel::Service => {
                    if let Some(s) = self.node(to).server.as_mut() {
                        s.state.handle_mobility_notice(&a);
                    }
                }
                Channel::Radio => self.on_alert(k, to, a),
            },
            Payload::SybilProbe(p) => {
                let reply = SybilProbeReply {
                    probe_id: p.probe_id,
                    responder: to,
                };
                let out = msg(k, SenderHandle::Node(to), Payload::SybilProbeReply(reply));
                k.service_send(to, from, out, lat);
            }
            Payload::SybilProbeReply(r) => {
                let now = k.now();
                let Some(server) = self.node(to).server.as_mut() else {
                    return;
                };
                if let Some((probe, SybilVerdict::Legitimate)) =
                    server.prober.on_reply(r.probe_id, now)
                {
                    self.send_verdict(k, to, probe.requester, probe.validation_id, Verdict::Allow);
                }
            }
            Payload::HrepValidation(v) => self.on_validation(k, to, from, v),
            Payload::ValidationVerdict(v) => self.on_verdict(k, to, v),
            Payload::Data(d) => self.on_data(k, to, d),
        }
    }
}

impl Handler<Timer> for World {
    fn handle(&mut self, k: &mut Kernel<Timer>, ev: Event<Timer>) {
        match ev.payload {
            EventPayload::Timer { node, timer } => self.on_timer(k, node, timer),
            EventPayload::Deliver {
                to,
                from,
                msg,
                channel,
            } => self.on_message(k, to, from, msg, channel),
            EventPayload::MobilityStep => {}
        }
    }
}
