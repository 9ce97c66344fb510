//! Trust tables, trust strings accumulated on route replies, and the
//! mode-based choice between candidate routes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::message::Rrep;
use crate::model::{NodeId, PseudoId, TrustLevel};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustTable {
    levels: BTreeMap<NodeId, TrustLevel>,
}

impl TrustTable {
    pub fn get(&self, node: NodeId) -> Option<TrustLevel> {
        self.levels.get(&node).copied()
    }

    pub fn set(&mut self, node: NodeId, level: TrustLevel) {
        self.levels.insert(node, level);
    }

    pub fn lower(&mut self, node: NodeId, by: u8) {
        if let Some(l) = self.levels.get_mut(&node) {
            *l = l.decrease(by);
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Trust digits in the order they were appended along the reverse path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustString(pub Vec<TrustLevel>);

impl TrustString {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for TrustString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trust strings are made of digits 0-9, got {0:?}")]
pub struct TrustStringError(pub char);

impl FromStr for TrustString {
    type Err = TrustStringError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| {
                c.to_digit(10)
                    .and_then(|d| TrustLevel::new(d as u8))
                    .ok_or(TrustStringError(c))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(TrustString)
    }
}

/// Mean of the digits; `None` for an empty string.
pub fn avg_trust(s: &TrustString) -> Option<f64> {
    if s.is_empty() {
        return None;
    }
    let sum: u32 = s.0.iter().map(|l| l.get() as u32).sum();
    Some(sum as f64 / s.len() as f64)
}

/// Extends the reply's trust string with the level of the node it just
/// came from, or `default_unknown` when that node is not in the table.
pub fn append_trust(
    rrep: &mut Rrep,
    forwarder_level: Option<TrustLevel>,
    default_unknown: TrustLevel,
) {
    rrep.trust_string
        .push(forwarder_level.unwrap_or(default_unknown));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Highest average trust.
    Trusted = 1,
    /// Fewest hops.
    Shortest = 2,
}

impl Mode {
    pub fn from_number(n: u8) -> Option<Mode> {
        match n {
            1 => Some(Mode::Trusted),
            2 => Some(Mode::Shortest),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteCandidate {
    pub request_id: u64,
    /// Pseudo-ids from source to destination.
    pub path: Vec<PseudoId>,
    pub hop_count: u32,
    pub trust_string: TrustString,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("no route candidates")]
    NoCandidates,
}

/// Picks a candidate (index into `candidates`, which is in arrival order).
///
/// Trusted mode maximizes average trust, breaking ties by hop count and
/// then arrival. Candidates with an empty trust string have no average;
/// if every candidate is like that, the shortest-path ordering is used.
/// Shortest mode minimizes hop count, breaking ties by average trust and
/// then arrival.
pub fn route_select(mode: Mode, candidates: &[RouteCandidate]) -> Result<usize, SelectError> {
    if candidates.is_empty() {
        return Err(SelectError::NoCandidates);
    }
    let avg = |c: &RouteCandidate| avg_trust(&c.trust_string).unwrap_or(f64::NEG_INFINITY);
    let by_hops = |a: usize, b: usize| {
        let (x, y) = (&candidates[a], &candidates[b]);
        x.hop_count
            .cmp(&y.hop_count)
            .then(avg(y).total_cmp(&avg(x)))
            .then(a.cmp(&b))
    };
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let trusted: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| !candidates[i].trust_string.is_empty())
        .collect();
    if mode == Mode::Trusted && !trusted.is_empty() {
        let mut t = trusted;
        t.sort_by(|&a, &b| {
            let (x, y) = (&candidates[a], &candidates[b]);
            avg(y)
                .total_cmp(&avg(x))
                .then(x.hop_count.cmp(&y.hop_count))
                .then(a.cmp(&b))
        });
        return Ok(t[0]);
    }
    order.sort_by(|&a, &b| by_hops(a, b));
    Ok(order[0])
}

/// Source authentication for real-id route requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceCheck {
    Accept,
    Drop,
    /// Unknown source: ask it and decide on the answer.
    Pending,
}

pub fn authenticate_source(
    table: &TrustTable,
    source: NodeId,
    trust_floor: TrustLevel,
) -> SourceCheck {
    match table.get(source) {
        Some(l) if l >= trust_floor => SourceCheck::Accept,
        Some(_) => SourceCheck::Drop,
        None => SourceCheck::Pending,
    }
}

/// Applies a trust response; a "yes" stores the source at `level`.
pub fn on_trust_response(
    table: &mut TrustTable,
    source: NodeId,
    verdict: bool,
    level: TrustLevel,
) -> SourceCheck {
    if verdict {
        table.set(source, level);
        SourceCheck::Accept
    } else {
        SourceCheck::Drop
    }
}
