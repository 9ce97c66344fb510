//! Builds a world from a scenario config and runs it to completion.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use thiserror::Error;

use super::config::{ConfigError, Flow, MobilityModel, Placement, ScenarioConfig};
use super::metrics::Metrics;
use super::trace::{Actor, TraceRecord};
use super::world::{FlowReport, NodeState, Server, Timer, World};
use crate::defense::{SybilProber, Watchdog, WatchdogConfig};
use crate::discovery::RoutingTableEntry;
use crate::kernel::{Kernel, Motion, RadioModel};
use crate::model::{distance, Certificate, KeyToken, NodeId, Position, SimTime, TrustLevel};
use crate::trust::TrustTable;
use crate::vhr::ServerState;

const PLACEMENT_ATTEMPTS: u32 = 10_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no connected placement found after {0} attempts")]
    Placement(u32),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Metrics,
    pub trace: Vec<TraceRecord>,
    pub flows: Vec<FlowReport>,
    pub flow_specs: Vec<Flow>,
    /// Positions at time zero.
    pub initial_positions: Vec<Position>,
    pub final_positions: Vec<Position>,
    /// Highest watchdog failure rate per node across servers.
    pub failure_rates: BTreeMap<NodeId, u32>,
    /// Nodes flagged as misbehaving, with the forwarding opportunities
    /// they had been given when first flagged.
    pub flagged: BTreeMap<NodeId, u32>,
    pub routing_tables: BTreeMap<NodeId, Vec<RoutingTableEntry>>,
    pub events: u64,
}

/// Whether every pair of nodes is joined by a path of links of length at
/// most `radius`.
pub fn is_connected(positions: &[Position], radius: f64) -> bool {
    positions.is_empty() || reachable_from(positions, radius, 0).iter().all(|r| *r)
}

/// Breadth-first reachability over the unit-disk graph.
pub fn reachable_from(positions: &[Position], radius: f64, start: usize) -> Vec<bool> {
    let mut seen = vec![false; positions.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..positions.len() {
            if !seen[v] && distance(positions[u], positions[v]) <= radius {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn place(cfg: &ScenarioConfig, k: &mut Kernel<Timer>) -> Result<Vec<Position>, RunError> {
    let n = cfg.nodes as usize;
    let attempts = match cfg.placement {
        Placement::Random => 1,
        Placement::Connected => PLACEMENT_ATTEMPTS,
    };
    for _ in 0..attempts {
        let mut pos: Vec<Position> = (0..n)
            .map(|_| Position {
                x: k.rng.gen_range(0.0..=cfg.field.width),
                y: k.rng.gen_range(0.0..=cfg.field.height),
            })
            .collect();
        for (id, p) in &cfg.positions {
            pos[id.0 as usize] = *p;
        }
        if cfg.placement == Placement::Random || is_connected(&pos, cfg.radius) {
            return Ok(pos);
        }
    }
    Err(RunError::Placement(attempts))
}

fn random_flows(cfg: &ScenarioConfig, k: &mut Kernel<Timer>) -> Vec<Flow> {
    let mut flows = cfg.flows.clone();
    let Some(rf) = cfg.random_flows else {
        return flows;
    };
    if cfg.nodes < 2 {
        return flows;
    }
    for i in 0..rf.count {
        let source = NodeId(k.rng.gen_range(0..cfg.nodes));
        let mut destination = NodeId(k.rng.gen_range(0..cfg.nodes - 1));
        if destination >= source {
            destination.0 += 1;
        }
        flows.push(Flow {
            source,
            destination,
            start: rf.start + SimTime::from_millis(10 * i as u64),
            packets: rf.packets,
            interval: rf.interval,
        });
    }
    flows
}

/// Runs one scenario. Protocol-level failures show up in the metrics;
/// only invalid configs and impossible placements are errors.
pub fn run_scenario(cfg: &ScenarioConfig, trace: bool) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let mut k: Kernel<Timer> = Kernel::new(
        RadioModel::new(cfg.radius),
        cfg.field,
        cfg.mobility.max_speed,
        cfg.seed,
        trace,
    );
    let positions = place(cfg, &mut k)?;
    let servers: Vec<NodeId> = if cfg.servers.is_empty() {
        (0..cfg.nodes).map(NodeId).collect()
    } else {
        cfg.servers.clone()
    };

    for (i, p) in positions.iter().enumerate() {
        let id = NodeId(i as u32);
        let motion = if let Some(w) = cfg.waypoints.get(&id) {
            Motion::Scripted(w.iter().copied().collect())
        } else if cfg.mobility.model == MobilityModel::RandomWaypoint
            && (cfg.mobility.servers_mobile || !servers.contains(&id))
        {
            Motion::RandomWaypoint {
                min_speed: cfg.mobility.min_speed,
                max_speed: cfg.mobility.max_speed,
                target: None,
            }
        } else {
            Motion::Static
        };
        k.add_node(*p, motion);
        k.trace.emit(
            SimTime::ZERO,
            "place",
            Actor::Node(id),
            vec![("pos", p.to_string())],
        );
    }
    k.set_mobility_step(cfg.mobility.step);

    let authority = KeyToken::generate(NodeId(u32::MAX), &mut k.rng);
    let watchdog = WatchdogConfig {
        timeout: cfg.protocol.watchdog_timeout,
        flag_threshold: cfg.protocol.flag_threshold,
    };
    let neighbor_initial = cfg
        .trust
        .initial
        .unwrap_or(TrustLevel::new(5).expect("valid"));
    let mut nodes = Vec::with_capacity(positions.len());
    for i in 0..cfg.nodes {
        let id = NodeId(i);
        let key = KeyToken::generate(id, &mut k.rng);
        let certificate = Certificate::issue(&authority.secret_part, id, &key.public_part);
        let mut trust = TrustTable::default();
        if let Some(level) = cfg.trust.initial {
            for j in (0..cfg.nodes).filter(|j| *j != i) {
                trust.set(NodeId(j), level);
            }
        }
        for ((holder, subject), level) in &cfg.trust.entries {
            if *holder == id {
                trust.set(*subject, *level);
            }
        }
        let mut node = NodeState::new(id, key, certificate, trust, neighbor_initial);
        node.adversary = cfg.adversary(id).copied();
        if servers.contains(&id) {
            node.server = Some(Server {
                state: ServerState::new(id),
                watchdog: Watchdog::new(watchdog),
                prober: SybilProber::default(),
            });
        }
        nodes.push(node);
    }

    let flows = random_flows(cfg, &mut k);
    for i in 0..cfg.nodes {
        let jitter = SimTime(k.rng.gen_range(0..50_000));
        k.schedule_timer(jitter, NodeId(i), Timer::Tick);
        if cfg.defenses.handshake {
            let jitter = SimTime(k.rng.gen_range(0..10_000));
            k.schedule_timer(jitter, NodeId(i), Timer::Hello);
        }
    }
    for (i, f) in flows.iter().enumerate() {
        if f.packets > 0 {
            k.schedule_timer(f.start, f.source, Timer::FlowPacket { flow: i });
        }
    }
    for (n, at) in &cfg.failures {
        k.schedule_timer(*at, *n, Timer::Kill);
    }

    let mut world = World::new(cfg.clone(), nodes, authority.public_part, flows);
    k.run_until(cfg.duration, &mut world);

    let metrics = world.finish(&k);
    let final_positions = k.node_ids().map(|n| k.position(n)).collect();
    let events = k.processed_events();
    Ok(RunResult {
        metrics,
        flows: world.flows(),
        flow_specs: world.flow_specs(),
        initial_positions: positions,
        final_positions,
        failure_rates: world.failure_rates(),
        flagged: world.flagged.clone(),
        routing_tables: world.routing_snapshot(),
        events,
        trace: k.trace.into_records(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn connectivity_oracle() {
        let p = |x: f64| Position { x, y: 0.0 };
        assert!(is_connected(&[p(0.0), p(100.0), p(200.0)], 100.0));
        assert!(!is_connected(&[p(0.0), p(100.0), p(200.1)], 100.0));
        assert_eq!(
            reachable_from(&[p(0.0), p(500.0)], 100.0, 0),
            vec![true, false]
        );
    }

    #[test]
    fn empty_scenario_runs() {
        let cfg = ScenarioConfig::minimal(1000.0, 1000.0, 5, 250.0, 1, 1.0);
        let r = run_scenario(&cfg, false).unwrap();
        assert_eq!(r.metrics.data_originated, 0);
        assert!(r.metrics.delivery_ratio.is_nan());
        assert!(r.metrics.total_control() > 0);
    }

    #[test]
    fn impossible_placement_is_an_error() {
        let mut cfg = ScenarioConfig::minimal(1000.0, 1000.0, 20, 1.0, 1, 1.0);
        cfg.placement = Placement::Connected;
        let r = run_scenario(&cfg, false);
        assert!(matches!(r, Err(RunError::Placement(_))), "{r:?}");
    }
}
