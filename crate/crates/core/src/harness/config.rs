//! Scenario configuration: a line-oriented `key = value` format with
//! `[section]` headers and `#` comments.
//!
//! ```text
//! [scenario]
//! field = 1000 1000
//! nodes = 50
//! radius = 300
//! seed = 7
//! duration = 10
//! ```
//!
//! Everything else is optional; see `README.md` for the full key list.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use thiserror::Error;

use crate::defense::{AdversaryKind, AdversaryProfile};
use crate::discovery::ContentionConfig;
use crate::kernel::{Field, Waypoint};
use crate::model::{NodeId, Position, SimTime, TrustLevel};
use crate::trust::Mode;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {key}: {msg}")]
    Invalid {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("line {line}: malformed line: {text}")]
    Syntax { line: usize, text: String },
    #[error("missing mandatory key {0}")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Random,
    /// Random, resampled until the unit-disk graph is connected.
    Connected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobilityModel {
    Static,
    RandomWaypoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityConfig {
    pub model: MobilityModel,
    pub min_speed: f64,
    pub max_speed: f64,
    pub step: SimTime,
    pub servers_mobile: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Beacon acceptance range; defaults to the radio radius.
    pub range_threshold: Option<f64>,
    pub update_threshold: f64,
    pub region_radius: f64,
    pub trust_penalty: u8,
    pub watchdog_timeout: SimTime,
    pub flag_threshold: u32,
    pub probe_timeout: SimTime,
    pub probe_tolerance: f64,
    pub contention: ContentionConfig,
    /// Class width `d`; defaults to radius / 3.
    pub class_width: Option<f64>,
    pub trust_floor: TrustLevel,
    pub wait_window: SimTime,
    pub retry_budget: u32,
    pub route_candidates: u32,
    /// Destination displacement that triggers an alert; defaults to the
    /// update threshold.
    pub alert_threshold: Option<f64>,
    pub processing_delay: SimTime,
    pub trust_timeout: SimTime,
    pub default_unknown_trust: TrustLevel,
    pub beacon_interval: SimTime,
    pub service_latency: SimTime,
    pub mode: Mode,
    pub real_id_rreq: bool,
    /// Age after which a source rediscovers its route; `None` keeps
    /// routes until a mobility alert or the end of the run.
    pub route_lifetime: Option<SimTime>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            range_threshold: None,
            update_threshold: 50.0,
            region_radius: 300.0,
            trust_penalty: 1,
            watchdog_timeout: SimTime::from_millis(50),
            flag_threshold: 3,
            probe_timeout: SimTime::from_millis(10),
            probe_tolerance: 10.0,
            contention: ContentionConfig::default(),
            class_width: None,
            trust_floor: TrustLevel::new(3).expect("digit"),
            wait_window: SimTime::from_millis(200),
            retry_budget: 3,
            route_candidates: 3,
            alert_threshold: None,
            processing_delay: SimTime::ZERO,
            trust_timeout: SimTime::from_millis(50),
            default_unknown_trust: TrustLevel::MIN,
            beacon_interval: SimTime::from_millis(1_000),
            service_latency: SimTime::from_millis(1),
            mode: Mode::Trusted,
            real_id_rreq: false,
            route_lifetime: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Defenses {
    pub pathselector: bool,
    pub sybil: bool,
    pub alerts: bool,
    pub beacons: bool,
    pub handshake: bool,
}

impl Default for Defenses {
    fn default() -> Self {
        Defenses {
            pathselector: true,
            sybil: true,
            alerts: true,
            beacons: true,
            handshake: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustConfig {
    /// Level every node starts out assigning every other node, if any.
    pub initial: Option<TrustLevel>,
    /// Explicit `(holder, subject) → level` entries.
    pub entries: BTreeMap<(NodeId, NodeId), TrustLevel>,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            initial: TrustLevel::new(5),
            entries: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub source: NodeId,
    pub destination: NodeId,
    pub start: SimTime,
    pub packets: u32,
    pub interval: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFlows {
    pub count: u32,
    pub start: SimTime,
    pub packets: u32,
    pub interval: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub field: Field,
    pub nodes: u32,
    pub radius: f64,
    pub seed: u64,
    pub duration: SimTime,
    pub placement: Placement,
    pub positions: BTreeMap<NodeId, Position>,
    pub mobility: MobilityConfig,
    pub waypoints: BTreeMap<NodeId, Vec<Waypoint>>,
    pub servers: Vec<NodeId>,
    pub adversaries: Vec<AdversaryProfile>,
    pub protocol: ProtocolConfig,
    pub defenses: Defenses,
    pub trust: TrustConfig,
    pub flows: Vec<Flow>,
    pub random_flows: Option<RandomFlows>,
    pub failures: Vec<(NodeId, SimTime)>,
}

impl ScenarioConfig {
    /// A config with every knob at its default.
    pub fn minimal(
        width: f64,
        height: f64,
        nodes: u32,
        radius: f64,
        seed: u64,
        duration_s: f64,
    ) -> Self {
        ScenarioConfig {
            field: Field { width, height },
            nodes,
            radius,
            seed,
            duration: SimTime::from_secs_f64(duration_s),
            placement: Placement::Random,
            positions: BTreeMap::new(),
            mobility: MobilityConfig {
                model: MobilityModel::Static,
                min_speed: 1.0,
                max_speed: 20.0,
                step: SimTime::from_millis(100),
                servers_mobile: false,
            },
            waypoints: BTreeMap::new(),
            servers: Vec::new(),
            adversaries: Vec::new(),
            protocol: ProtocolConfig::default(),
            defenses: Defenses::default(),
            trust: TrustConfig::default(),
            flows: Vec::new(),
            random_flows: None,
            failures: Vec::new(),
        }
    }

    pub fn range_threshold(&self) -> f64 {
        self.protocol.range_threshold.unwrap_or(self.radius)
    }

    pub fn class_width(&self) -> f64 {
        self.protocol.class_width.unwrap_or(self.radius / 3.0)
    }

    pub fn alert_threshold(&self) -> f64 {
        self.protocol
            .alert_threshold
            .unwrap_or(self.protocol.update_threshold)
    }

    pub fn adversary(&self, node: NodeId) -> Option<&AdversaryProfile> {
        self.adversaries.iter().find(|a| a.node == node)
    }

    /// Checks cross-field invariants. Line numbers are unknown here, so
    /// errors report line 0.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| ConfigError::Invalid {
            line: 0,
            key: key.to_string(),
            msg,
        };
        let known = |n: NodeId, key: &str| {
            if n.0 < self.nodes {
                Ok(())
            } else {
                Err(err(key, format!("unknown node {}", n.0)))
            }
        };
        if self.nodes == 0 {
            return Err(err("nodes", "must be at least 1".into()));
        }
        for n in self.positions.keys() {
            known(*n, "placement")?;
        }
        for n in self.waypoints.keys() {
            known(*n, "waypoints")?;
        }
        for n in &self.servers {
            known(*n, "servers")?;
        }
        for a in &self.adversaries {
            known(a.node, "adversaries")?;
        }
        for (a, b) in self.trust.entries.keys() {
            known(*a, "trust")?;
            known(*b, "trust")?;
        }
        for f in &self.flows {
            known(f.source, "flow")?;
            known(f.destination, "flow")?;
            if f.source == f.destination {
                return Err(err("flow", "source and destination must differ".into()));
            }
        }
        for (n, _) in &self.failures {
            known(*n, "failures")?;
        }
        for p in self.positions.values() {
            if !(p.is_finite()
                && p.x >= 0.0
                && p.x <= self.field.width
                && p.y >= 0.0
                && p.y <= self.field.height)
            {
                return Err(err("placement", format!("position {p} outside the field")));
            }
        }
        let vhr = crate::vhr::VhrConfig {
            region_radius: self.protocol.region_radius,
            update_threshold: self.protocol.update_threshold,
            field_width: self.field.width,
            field_height: self.field.height,
        };
        vhr.validate()
            .map_err(|e| err("region_radius", e.to_string()))?;
        if self.placement == Placement::Connected && !self.positions.is_empty() {
            return Err(err(
                "placement",
                "connected placement cannot be combined with explicit positions".into(),
            ));
        }
        if let Some(rf) = self.random_flows {
            if rf.count > 0 && self.nodes < 2 {
                return Err(err("random_flows", "need at least two nodes".into()));
            }
        }
        Ok(())
    }
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn err(&self, msg: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            line: self.no,
            key: self.key.to_string(),
            msg: msg.into(),
        }
    }

    fn parse<T: FromStr>(&self, what: &str) -> Result<T, ConfigError> {
        self.value
            .parse()
            .map_err(|_| self.err(format!("expected {what}, got {:?}", self.value)))
    }

    fn positive(&self) -> Result<f64, ConfigError> {
        let v: f64 = self.parse("a number")?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(self.err("must be a positive number"))
        }
    }

    fn non_negative(&self) -> Result<f64, ConfigError> {
        let v: f64 = self.parse("a number")?;
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(self.err("must be a non-negative number"))
        }
    }

    fn at_least_one(&self) -> Result<u32, ConfigError> {
        let v: u32 = self.parse("an integer")?;
        if v >= 1 {
            Ok(v)
        } else {
            Err(self.err("must be at least 1"))
        }
    }

    fn millis(&self) -> Result<SimTime, ConfigError> {
        Ok(SimTime::from_secs_f64(self.non_negative()? / 1e3))
    }

    fn switch(&self) -> Result<bool, ConfigError> {
        match self.value {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            _ => Err(self.err("expected on or off")),
        }
    }

    fn numbers(&self, n: usize) -> Result<Vec<f64>, ConfigError> {
        let parts: Vec<&str> = self.value.split_whitespace().collect();
        if parts.len() != n {
            return Err(self.err(format!("expected {n} values")));
        }
        parts
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(format!("bad number {p:?}")))
            })
            .collect()
    }

    fn trust(&self) -> Result<TrustLevel, ConfigError> {
        let v: u8 = self.parse("a digit")?;
        TrustLevel::new(v).ok_or_else(|| self.err("trust levels run from 0 to 9"))
    }

    fn node_key(&self) -> Result<NodeId, ConfigError> {
        self.key
            .parse::<u32>()
            .map(NodeId)
            .map_err(|_| self.err("expected a node id as key"))
    }
}

fn parse_node(line: &Line<'_>, s: &str) -> Result<NodeId, ConfigError> {
    s.parse::<u32>()
        .map(NodeId)
        .map_err(|_| line.err(format!("bad node id {s:?}")))
}

/// Parses and validates a scenario description, filling defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::minimal(0.0, 0.0, 0, 0.0, 0, 0.0);
    let mut section = String::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut have = BTreeSet::new();
    let mut key_lines: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut random = RandomFlows {
        count: 0,
        start: SimTime::from_secs_f64(1.0),
        packets: 10,
        interval: SimTime::from_millis(100),
    };

    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: no,
                text: content.to_string(),
            });
        };
        let line = Line {
            no,
            key: k.trim(),
            value: v.trim(),
        };
        let repeatable = matches!(
            (section.as_str(), line.key),
            ("traffic", "flow") | ("waypoints", _)
        );
        if !repeatable && !seen.insert((section.clone(), line.key.to_string())) {
            return Err(line.err("duplicate key"));
        }
        let p = &mut cfg.protocol;
        match (section.as_str(), line.key) {
            ("scenario", "field") => {
                let v = line.numbers(2)?;
                if v[0] <= 0.0 || v[1] <= 0.0 {
                    return Err(line.err("field dimensions must be positive"));
                }
                cfg.field = Field {
                    width: v[0],
                    height: v[1],
                };
                have.insert("field");
            }
            ("scenario", "nodes") => {
                cfg.nodes = line.at_least_one()?;
                have.insert("nodes");
            }
            ("scenario", "radius") => {
                cfg.radius = line.positive()?;
                have.insert("radius");
            }
            ("scenario", "seed") => {
                cfg.seed = line.parse("an unsigned integer")?;
                have.insert("seed");
            }
            ("scenario", "duration") => {
                cfg.duration = SimTime::from_secs_f64(line.positive()?);
                have.insert("duration");
            }
            ("scenario", "placement") => {
                cfg.placement = match line.value {
                    "random" => Placement::Random,
                    "connected" => Placement::Connected,
                    _ => return Err(line.err("placement must be random or connected")),
                };
                key_lines.insert("placement", no);
            }
            ("scenario", "mode") | ("protocol", "mode") => {
                let m: u8 = line
                    .parse("1 or 2")
                    .map_err(|_| line.err("mode must be 1 or 2"))?;
                p.mode = Mode::from_number(m).ok_or_else(|| line.err("mode must be 1 or 2"))?;
            }
            ("placement", _) => {
                let n = line.node_key()?;
                let v = line.numbers(2)?;
                cfg.positions.insert(n, Position::new(v[0], v[1]));
                key_lines.entry("positions").or_insert(no);
            }
            ("mobility", "model") => {
                cfg.mobility.model = match line.value {
                    "static" => MobilityModel::Static,
                    "random_waypoint" => MobilityModel::RandomWaypoint,
                    _ => return Err(line.err("model must be static or random_waypoint")),
                };
            }
            ("mobility", "min_speed") => cfg.mobility.min_speed = line.non_negative()?,
            ("mobility", "max_speed") => cfg.mobility.max_speed = line.positive()?,
            ("mobility", "step_ms") => {
                cfg.mobility.step = line.millis()?;
                if cfg.mobility.step.0 == 0 {
                    return Err(line.err("must be positive"));
                }
            }
            ("mobility", "servers_mobile") => cfg.mobility.servers_mobile = line.switch()?,
            ("waypoints", _) => {
                let n = line.node_key()?;
                let v = line.numbers(4)?;
                if v[0] < 0.0 || v[3] <= 0.0 {
                    return Err(line.err("expected: at_seconds x y speed, with speed > 0"));
                }
                cfg.waypoints.entry(n).or_default().push(Waypoint {
                    at: SimTime::from_secs_f64(v[0]),
                    to: Position::new(v[1], v[2]),
                    speed: v[3],
                });
            }
            ("servers", "nodes") => {
                cfg.servers = line
                    .value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_node(&line, s))
                    .collect::<Result<_, _>>()?;
                key_lines.insert("servers", no);
            }
            ("servers", "region_radius") => p.region_radius = line.positive()?,
            ("adversaries", _) => {
                let node = line.node_key()?;
                if node.0 >= cfg.nodes && have.contains("nodes") {
                    return Err(line.err(format!("unknown node {}", node.0)));
                }
                let parts: Vec<&str> = line.value.split_whitespace().collect();
                let kind = match parts.as_slice() {
                    ["dropper", prob] => {
                        let p: f64 = prob
                            .parse()
                            .map_err(|_| line.err("dropper probability must be a number"))?;
                        if !(0.0..=1.0).contains(&p) {
                            return Err(line.err("dropper probability must be in [0, 1]"));
                        }
                        AdversaryKind::Dropper { p }
                    }
                    ["sybil", x, y] => {
                        let (x, y) = (x.parse::<f64>(), y.parse::<f64>());
                        match (x, y) {
                            (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
                                AdversaryKind::Sybil {
                                    claimed_pos: Position::new(x, y),
                                }
                            }
                            _ => return Err(line.err("sybil needs a claimed position x y")),
                        }
                    }
                    _ => return Err(line.err("expected `dropper <p>` or `sybil <x> <y>`")),
                };
                if cfg.adversaries.iter().any(|a| a.node == node) {
                    return Err(line.err("node already has an adversary profile"));
                }
                cfg.adversaries.push(AdversaryProfile { node, kind });
                key_lines.entry("adversaries").or_insert(no);
            }
            ("protocol", "range_threshold") => p.range_threshold = Some(line.positive()?),
            ("protocol", "update_threshold") => p.update_threshold = line.positive()?,
            ("protocol", "trust_penalty") => {
                p.trust_penalty = line.parse("an integer")?;
                if p.trust_penalty == 0 {
                    return Err(line.err("must be at least 1"));
                }
            }
            ("protocol", "watchdog_timeout_ms") => p.watchdog_timeout = line.millis()?,
            ("protocol", "flag_threshold") => p.flag_threshold = line.at_least_one()?,
            ("protocol", "probe_timeout_ms") => p.probe_timeout = line.millis()?,
            ("protocol", "probe_tolerance") => p.probe_tolerance = line.non_negative()?,
            ("protocol", "priority_slots") => p.contention.priority_slots = line.at_least_one()?,
            ("protocol", "elimination_slots") => {
                p.contention.elimination_slots = line.at_least_one()?
            }
            ("protocol", "yield_slots") => p.contention.yield_slots = line.at_least_one()?,
            ("protocol", "slot_us") => p.contention.slot = SimTime(line.at_least_one()? as u64),
            ("protocol", "class_width") => p.class_width = Some(line.positive()?),
            ("protocol", "trust_floor") => p.trust_floor = line.trust()?,
            ("protocol", "wait_window_ms") => p.wait_window = line.millis()?,
            ("protocol", "retry_budget") => p.retry_budget = line.parse("an integer")?,
            ("protocol", "route_candidates") => p.route_candidates = line.at_least_one()?,
            ("protocol", "alert_threshold") => p.alert_threshold = Some(line.positive()?),
            ("protocol", "processing_delay_us") => {
                p.processing_delay = SimTime(line.parse("an integer")?)
            }
            ("protocol", "trust_timeout_ms") => p.trust_timeout = line.millis()?,
            ("protocol", "default_unknown_trust") => p.default_unknown_trust = line.trust()?,
            ("protocol", "beacon_interval") => {
                p.beacon_interval = SimTime::from_secs_f64(line.positive()?);
            }
            ("protocol", "service_latency_ms") => p.service_latency = line.millis()?,
            ("protocol", "real_id_rreq") => p.real_id_rreq = line.switch()?,
            ("protocol", "route_lifetime_ms") => {
                let t = line.millis()?;
                p.route_lifetime = (t.0 > 0).then_some(t);
            }
            ("defenses", "pathselector") => cfg.defenses.pathselector = line.switch()?,
            ("defenses", "sybil") => cfg.defenses.sybil = line.switch()?,
            ("defenses", "alerts") => cfg.defenses.alerts = line.switch()?,
            ("defenses", "beacons") => cfg.defenses.beacons = line.switch()?,
            ("defenses", "handshake") => cfg.defenses.handshake = line.switch()?,
            ("trust", "initial") => {
                cfg.trust.initial = if line.value == "none" {
                    None
                } else {
                    Some(line.trust()?)
                };
            }
            ("trust", key) => {
                let Some((a, b)) = key.split_once('.') else {
                    return Err(line.err("expected `<holder>.<subject> = level` or `initial`"));
                };
                let holder = parse_node(&line, a)?;
                let subject = parse_node(&line, b)?;
                cfg.trust.entries.insert((holder, subject), line.trust()?);
                key_lines.entry("trust").or_insert(no);
            }
            ("traffic", "flow") => {
                let v = line.numbers(5)?;
                let as_node = |f: f64| {
                    (f >= 0.0 && f.fract() == 0.0)
                        .then_some(NodeId(f as u32))
                        .ok_or_else(|| line.err("flow endpoints must be node ids"))
                };
                if v[2] < 0.0 || v[3] < 0.0 || v[4] <= 0.0 || v[3].fract() != 0.0 {
                    return Err(line.err("expected: src dst start_s packets interval_s"));
                }
                cfg.flows.push(Flow {
                    source: as_node(v[0])?,
                    destination: as_node(v[1])?,
                    start: SimTime::from_secs_f64(v[2]),
                    packets: v[3] as u32,
                    interval: SimTime::from_secs_f64(v[4]),
                });
                key_lines.entry("flow").or_insert(no);
            }
            ("traffic", "random_flows") => random.count = line.parse("an integer")?,
            ("traffic", "random_start") => {
                random.start = SimTime::from_secs_f64(line.non_negative()?)
            }
            ("traffic", "random_packets") => random.packets = line.parse("an integer")?,
            ("traffic", "random_interval") => {
                random.interval = SimTime::from_secs_f64(line.positive()?)
            }
            ("failures", _) => {
                let n = line.node_key()?;
                cfg.failures
                    .push((n, SimTime::from_secs_f64(line.non_negative()?)));
                key_lines.entry("failures").or_insert(no);
            }
            _ => {
                return Err(line.err(if section.is_empty() {
                    "key outside of any section".to_string()
                } else {
                    format!("unknown key in [{section}]")
                }))
            }
        }
    }

    for key in ["field", "nodes", "radius", "seed", "duration"] {
        if !have.contains(key) {
            return Err(ConfigError::Missing(key));
        }
    }
    if random.count > 0 {
        cfg.random_flows = Some(random);
    }
    cfg.validate().map_err(|e| match e {
        ConfigError::Invalid { key, msg, .. } => {
            let line = match key.as_str() {
                "placement" => key_lines.get("positions").or(key_lines.get("placement")),
                "servers" => key_lines.get("servers"),
                "adversaries" => key_lines.get("adversaries"),
                "trust" => key_lines.get("trust"),
                "flow" => key_lines.get("flow"),
                "failures" => key_lines.get("failures"),
                _ => None,
            }
            .copied()
            .unwrap_or(0);
            ConfigError::Invalid { line, key, msg }
        }
        other => other,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        "[scenario]\nfield = 1000 800\nnodes = 20\nradius = 300\nseed = 5\nduration = 10\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.nodes, 20);
        assert_eq!(cfg.field.height, 800.0);
        assert_eq!(cfg.protocol, ProtocolConfig::default());
        assert_eq!(cfg.defenses, Defenses::default());
        assert_eq!(cfg.range_threshold(), 300.0);
        assert_eq!(cfg.class_width(), 100.0);
        assert_eq!(cfg.alert_threshold(), 50.0);
        assert_eq!(cfg.protocol.mode, Mode::Trusted);
    }

    #[test]
    fn unknown_adversary_node_is_named() {
        let text = format!("{MINIMAL}[adversaries]\n99 = dropper 1.0\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("unknown node 99"), "{err}");
        assert!(err.to_string().contains("line 8"), "{err}");
    }

    #[test]
    fn bad_mode_is_rejected() {
        let text = format!("{MINIMAL}mode = 3\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("mode must be 1 or 2"), "{err}");
    }

    #[test]
    fn missing_and_unknown_keys() {
        let err = parse_config("[scenario]\nfield = 10 10\n").unwrap_err();
        assert_eq!(err, ConfigError::Missing("nodes"));
        let err = parse_config(&format!("{MINIMAL}[protocol]\nwarp = 9\n")).unwrap_err();
        assert!(err.to_string().contains("line 8: warp"), "{err}");
        let err = parse_config(&format!("{MINIMAL}nodes = 3\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(matches!(
            parse_config("[scenario]\nno equals sign\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn dangling_flow_endpoint() {
        let err = parse_config(&format!("{MINIMAL}[traffic]\nflow = 0 25 1 10 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("unknown node 25"), "{err}");
        assert!(err.to_string().contains("line 8"), "{err}");
    }

    #[test]
    fn full_config_parses() {
        let text = format!(
            "{MINIMAL}\
             placement = random\n\
             [placement]\n0 = 10 10\n1 = 200 10\n\
             [mobility]\nmodel = random_waypoint\nmax_speed = 15\n\
             [waypoints]\n1 = 2.0 300 10 20\n1 = 5.0 400 10 20\n\
             [servers]\nnodes = 0, 1 2\nregion_radius = 250\n\
             [adversaries]\n3 = sybil 500 400\n4 = dropper 0.5\n\
             [protocol]\nflag_threshold = 2\nyield_slots = 8\nwait_window_ms = 150\n\
             [defenses]\nsybil = off\n\
             [trust]\ninitial = 4\n0.1 = 7\n\
             [traffic]\nflow = 0 5 1.5 10 0.1\nflow = 2 6 2 5 0.2\nrandom_flows = 3\n\
             [failures]\n7 = 4.5\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.positions.len(), 2);
        assert_eq!(cfg.waypoints[&NodeId(1)].len(), 2);
        assert_eq!(cfg.servers, vec![NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(cfg.adversaries.len(), 2);
        assert_eq!(cfg.protocol.flag_threshold, 2);
        assert_eq!(cfg.protocol.contention.yield_slots, 8);
        assert!(!cfg.defenses.sybil);
        assert_eq!(
            cfg.trust.entries[&(NodeId(0), NodeId(1))],
            TrustLevel::new(7).unwrap()
        );
        assert_eq!(cfg.flows.len(), 2);
        assert_eq!(cfg.random_flows.unwrap().count, 3);
        assert_eq!(cfg.failures, vec![(NodeId(7), SimTime(4_500_000))]);
        assert_eq!(cfg.mobility.max_speed, 15.0);
    }

    #[test]
    fn range_checks() {
        for bad in [
            "[adversaries]\n1 = dropper 1.5\n",
            "[trust]\n0.1 = 12\n",
            "[servers]\nregion_radius = 600\n",
            "[placement]\n0 = 5000 1\n",
            "[protocol]\nyield_slots = 0\n",
        ] {
            assert!(parse_config(&format!("{MINIMAL}{bad}")).is_err(), "{bad}");
        }
    }
}
