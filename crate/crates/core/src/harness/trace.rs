//! Line-oriented trace records.
//!
//! One record per line: `t=<µs> ev=<kind> node=<id> <k>=<v>...`, LF endings.

use std::fmt::{self, Write as _};

use crate::model::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Node(NodeId),
    Kernel,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Node(n) => write!(f, "{n}"),
            Actor::Kernel => f.write_str("kernel"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub seq: u64,
    pub kind: &'static str,
    pub actor: Actor,
    pub details: Vec<(&'static str, String)>,
}

impl TraceRecord {
    pub fn detail(&self, key: &str) -> Option<&str> {
        self.details
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} ev={} node={}", self.time.0, self.kind, self.actor)?;
        for (k, v) in &self.details {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// In-memory trace sink. When disabled, records are counted but not kept.
#[derive(Debug, Default)]
pub struct Trace {
    enabled: bool,
    seq: u64,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace {
            enabled,
            seq: 0,
            records: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn emit(
        &mut self,
        time: SimTime,
        kind: &'static str,
        actor: Actor,
        details: Vec<(&'static str, String)>,
    ) {
        let seq = self.seq;
        self.seq += 1;
        if self.enabled {
            self.records.push(TraceRecord {
                time,
                seq,
                kind,
                actor,
                details,
            });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

/// Renders records in the line format.
pub fn render(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}
