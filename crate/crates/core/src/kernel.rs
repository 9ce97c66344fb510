//! Deterministic discrete-event kernel with a unit-disk radio channel,
//! node mobility and a single seeded random stream.
//!
//! Protocol logic lives in a [`Handler`]; the kernel only orders events,
//! moves nodes and decides who hears a transmission.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::trace::{Actor, Trace};
use crate::message::{Message, MessageKind};
use crate::model::{distance, NodeId, Position, SimTime};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioModel {
    /// Maximum radio coverage in meters.
    pub range: f64,
    /// Propagation speed in m/s.
    pub propagation_speed: f64,
}

impl RadioModel {
    pub fn new(range: f64) -> Self {
        RadioModel {
            range,
            propagation_speed: SPEED_OF_LIGHT,
        }
    }

    /// Boundary inclusive.
    pub fn in_range(&self, d: f64) -> bool {
        d <= self.range
    }

    /// Propagation delay rounded up to whole microseconds, never below 1 µs.
    pub fn delay(&self, d: f64) -> SimTime {
        let us = d * 1e6 / self.propagation_speed;
        SimTime(((us - 1e-9).ceil().max(1.0)) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Field {
    pub width: f64,
    pub height: f64,
}

impl Field {
    pub fn contains(&self, p: Position) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }
}

/// Scripted movement leg: from `at` on, head to `to` at `speed` m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub at: SimTime,
    pub to: Position,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static,
    /// Constant velocity, reflecting off the field edges.
    Velocity {
        vx: f64,
        vy: f64,
    },
    RandomWaypoint {
        min_speed: f64,
        max_speed: f64,
        target: Option<(Position, f64)>,
    },
    Scripted(VecDeque<Waypoint>),
}

impl Motion {
    pub fn is_static(&self) -> bool {
        match self {
            Motion::Static => true,
            Motion::Velocity { vx, vy } => *vx == 0.0 && *vy == 0.0,
            Motion::Scripted(q) => q.is_empty(),
            Motion::RandomWaypoint { .. } => false,
        }
    }
}

#[derive(Debug, Clone)]
struct RadioNode {
    pos: Position,
    alive: bool,
    motion: Motion,
    speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Unit-disk radio.
    Radio,
    /// Out-of-band service plane with fixed latency.
    Service,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload<T> {
    Deliver {
        to: NodeId,
        from: NodeId,
        msg: Message,
        channel: Channel,
    },
    Timer {
        node: NodeId,
        timer: T,
    },
    MobilityStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<T> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: EventPayload<T>,
}

impl<T: PartialEq> Eq for Event<T> {}

impl<T: PartialEq> Ord for Event<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed so BinaryHeap pops the earliest (fire_at, seq) first
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl<T: PartialEq> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Protocol side of the simulation.
pub trait Handler<T> {
    fn handle(&mut self, kernel: &mut Kernel<T>, event: Event<T>);
}

pub struct Kernel<T> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<T>>,
    nodes: Vec<RadioNode>,
    pub radio: RadioModel,
    pub field: Field,
    pub max_speed: f64,
    mobility_step: SimTime,
    mobility_scheduled: bool,
    pub rng: SimRng,
    pub trace: Trace,
    tx_counts: BTreeMap<MessageKind, u64>,
    processed: u64,
}

impl<T: PartialEq> Kernel<T> {
    pub fn new(radio: RadioModel, field: Field, max_speed: f64, seed: u64, trace: bool) -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            radio,
            field,
            max_speed,
            mobility_step: SimTime::from_millis(100),
            mobility_scheduled: false,
            rng: seeded_rng(seed),
            trace: Trace::new(trace),
            tx_counts: BTreeMap::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn add_node(&mut self, pos: Position, motion: Motion) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(RadioNode {
            pos,
            alive: true,
            motion,
            speed: 0.0,
        });
        id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn position(&self, n: NodeId) -> Position {
        self.nodes[n.0 as usize].pos
    }

    pub fn set_position(&mut self, n: NodeId, p: Position) {
        self.nodes[n.0 as usize].pos = p;
    }

    pub fn set_motion(&mut self, n: NodeId, motion: Motion) {
        self.nodes[n.0 as usize].motion = motion;
    }

    pub fn speed(&self, n: NodeId) -> f64 {
        self.nodes[n.0 as usize].speed
    }

    pub fn is_alive(&self, n: NodeId) -> bool {
        self.nodes[n.0 as usize].alive
    }

    pub fn kill(&mut self, n: NodeId) {
        self.nodes[n.0 as usize].alive = false;
        self.nodes[n.0 as usize].speed = 0.0;
        self.trace.emit(self.now, "kill", Actor::Node(n), vec![]);
    }

    pub fn set_mobility_step(&mut self, step: SimTime) {
        assert!(step.0 > 0, "mobility step must be positive");
        self.mobility_step = step;
    }

    pub fn tx_counts(&self) -> &BTreeMap<MessageKind, u64> {
        &self.tx_counts
    }

    pub fn processed_events(&self) -> u64 {
        self.processed
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues an event. Scheduling into the past is a logic error.
    pub fn schedule(&mut self, fire_at: SimTime, payload: EventPayload<T>) -> u64 {
        assert!(
            fire_at >= self.now,
            "event scheduled into the past ({} < {})",
            fire_at.0,
            self.now.0
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at,
            seq,
            payload,
        });
        seq
    }

    pub fn schedule_timer(&mut self, fire_at: SimTime, node: NodeId, timer: T) -> u64 {
        self.schedule(fire_at, EventPayload::Timer { node, timer })
    }

    pub fn schedule_timer_in(&mut self, delay: SimTime, node: NodeId, timer: T) -> u64 {
        self.schedule_timer(self.now + delay, node, timer)
    }

    fn count_tx(&mut self, kind: MessageKind) {
        *self.tx_counts.entry(kind).or_default() += 1;
    }

    /// Nodes other than `sender` that are alive and within radio range.
    pub fn neighbors_of(&self, sender: NodeId) -> Vec<(NodeId, f64)> {
        let origin = self.position(sender);
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| *i as u32 != sender.0 && n.alive)
            .filter_map(|(i, n)| {
                let d = distance(origin, n.pos);
                self.radio.in_range(d).then_some((NodeId(i as u32), d))
            })
            .collect()
    }

    /// Radio broadcast; receivers are fixed at transmit time.
    pub fn broadcast(&mut self, sender: NodeId, msg: Message) {
        if !self.is_alive(sender) {
            return;
        }
        let kind = msg.kind();
        self.count_tx(kind);
        let receivers = self.neighbors_of(sender);
        self.trace.emit(
            self.now,
            "tx",
            Actor::Node(sender),
            vec![
                ("kind", kind.label().into()),
                ("to", "*".into()),
                ("rx", receivers.len().to_string()),
            ],
        );
        for (to, d) in receivers {
            let at = self.now + self.radio.delay(d);
            self.schedule(
                at,
                EventPayload::Deliver {
                    to,
                    from: sender,
                    msg: msg.clone(),
                    channel: Channel::Radio,
                },
            );
        }
    }

    /// Radio unicast. Returns whether the target was in range; an out of
    /// range target silently loses the frame (traced as `lost`).
    pub fn unicast(&mut self, sender: NodeId, dest: NodeId, msg: Message) -> bool {
        if !self.is_alive(sender) {
            return false;
        }
        let kind = msg.kind();
        self.count_tx(kind);
        let d = distance(self.position(sender), self.position(dest));
        let ok = self.is_alive(dest) && self.radio.in_range(d);
        self.trace.emit(
            self.now,
            if ok { "tx" } else { "lost" },
            Actor::Node(sender),
            vec![("kind", kind.label().into()), ("to", dest.to_string())],
        );
        if ok {
            let at = self.now + self.radio.delay(d);
            self.schedule(
                at,
                EventPayload::Deliver {
                    to: dest,
                    from: sender,
                    msg,
                    channel: Channel::Radio,
                },
            );
        }
        ok
    }

    /// Service-plane send: ignores radio range, arrives after `latency`.
    pub fn service_send(&mut self, sender: NodeId, dest: NodeId, msg: Message, latency: SimTime) {
        let kind = msg.kind();
        self.count_tx(kind);
        self.trace.emit(
            self.now,
            "svc",
            Actor::Node(sender),
            vec![("kind", kind.label().into()), ("to", dest.to_string())],
        );
        let at = self.now + latency;
        self.schedule(
            at,
            EventPayload::Deliver {
                to: dest,
                from: sender,
                msg,
                channel: Channel::Service,
            },
        );
    }

    fn ensure_mobility_scheduled(&mut self) {
        if self.mobility_scheduled {
            return;
        }
        if self.nodes.iter().any(|n| !n.motion.is_static()) {
            self.mobility_scheduled = true;
            let at = self.now + self.mobility_step;
            self.schedule(at, EventPayload::MobilityStep);
        }
    }

    /// Processes every event with `fire_at <= t_end` in (time, seq) order,
    /// then leaves the clock at `t_end`.
    pub fn run_until<H: Handler<T>>(&mut self, t_end: SimTime, handler: &mut H) {
        assert!(t_end >= self.now, "run_until into the past");
        self.ensure_mobility_scheduled();
        while let Some(top) = self.queue.peek() {
            if top.fire_at > t_end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.processed += 1;
            match &ev.payload {
                EventPayload::MobilityStep => {
                    let dt = self.mobility_step.as_secs_f64();
                    self.step_mobility(dt);
                    let at = self.now + self.mobility_step;
                    self.schedule(at, EventPayload::MobilityStep);
                }
                EventPayload::Deliver { to, .. } | EventPayload::Timer { node: to, .. } => {
                    if self.is_alive(*to) {
                        handler.handle(self, ev);
                    }
                }
            }
        }
        self.now = t_end;
    }

    /// Advances every live node by `dt` seconds.
    pub fn step_mobility(&mut self, dt: f64) {
        assert!(dt > 0.0, "mobility step must be positive");
        let field = self.field;
        let max_speed = self.max_speed;
        let now = self.now;
        for i in 0..self.nodes.len() {
            if !self.nodes[i].alive {
                continue;
            }
            let mut motion = std::mem::replace(&mut self.nodes[i].motion, Motion::Static);
            let pos = self.nodes[i].pos;
            let (new_pos, speed) = match &mut motion {
                Motion::Static => (pos, 0.0),
                Motion::Velocity { vx, vy } => {
                    let s = vx.hypot(*vy);
                    if s > max_speed && s > 0.0 {
                        *vx *= max_speed / s;
                        *vy *= max_speed / s;
                    }
                    let (x, nvx) = reflect(pos.x + *vx * dt, *vx, field.width);
                    let (y, nvy) = reflect(pos.y + *vy * dt, *vy, field.height);
                    *vx = nvx;
                    *vy = nvy;
                    (Position::new(x, y), vx.hypot(*vy))
                }
                Motion::RandomWaypoint {
                    min_speed,
                    max_speed: upper,
                    target,
                } => {
                    if target.is_none() {
                        let to = Position::new(
                            self.rng.gen_range(0.0..=field.width),
                            self.rng.gen_range(0.0..=field.height),
                        );
                        let hi = upper.min(max_speed);
                        let lo = min_speed.min(hi);
                        let s = if hi > lo {
                            self.rng.gen_range(lo..=hi)
                        } else {
                            hi
                        };
                        *target = Some((to, s));
                    }
                    let (to, s) = target.expect("set above");
                    let (p, arrived) = advance(pos, to, s * dt);
                    if arrived {
                        *target = None;
                    }
                    (p, s)
                }
                Motion::Scripted(queue) => match queue.front().copied() {
                    Some(wp) if now >= wp.at => {
                        let s = wp.speed.min(max_speed);
                        let (p, arrived) = advance(pos, wp.to, s * dt);
                        if arrived {
                            queue.pop_front();
                        }
                        (p, s)
                    }
                    _ => (pos, 0.0),
                },
            };
            let node = &mut self.nodes[i];
            node.motion = motion;
            node.pos = field.clamp(new_pos);
            node.speed = speed;
        }
        self.trace.emit(now, "mobility", Actor::Kernel, vec![]);
    }
}

/// Mirror a coordinate back into [0, limit], flipping the velocity
/// component when it crossed an edge.
pub fn reflect(coord: f64, v: f64, limit: f64) -> (f64, f64) {
    if coord < 0.0 {
        (-coord, -v)
    } else if coord > limit {
        (2.0 * limit - coord, -v)
    } else {
        (coord, v)
    }
}

fn advance(from: Position, to: Position, step: f64) -> (Position, bool) {
    let d = distance(from, to);
    if d <= step || d == 0.0 {
        (to, true)
    } else {
        let f = step / d;
        (
            Position::new(from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f),
            false,
        )
    }
}
