//! Run metrics and their two text renderings.
//!
//! The machine format is one `key = value` line per field in a fixed
//! order and parses back to an identical [`Metrics`] value.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::message::MessageKind;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    /// Delivered over originated data packets.
    pub delivery_ratio: f64,
    /// Delivered over packets that left the source on a route.
    pub delivery_ratio_on_routes: f64,
    pub route_discovery_success: f64,
    pub mean_hops: f64,
    pub chosen_path_avg_trust: f64,
    pub data_originated: u64,
    pub data_sent: u64,
    pub data_delivered: u64,
    pub route_discoveries: u64,
    pub routes_found: u64,
    pub looped_routes: u64,
    pub rrep_rejected: u64,
    pub dead_ends: u64,
    pub hrep_collisions: u64,
    /// Contention rounds needed per established hop.
    pub contention_rounds: BTreeMap<u32, u64>,
    /// Transmissions per message kind, data excluded.
    pub control_overhead: BTreeMap<MessageKind, u64>,
    pub watchdog_tp: u64,
    pub watchdog_fp: u64,
    pub sybil_tp: u64,
    pub sybil_fp: u64,
    pub sybil_probes_adversary: u64,
    pub sybil_probes_honest: u64,
    pub pathselector_denials: u64,
    pub position_service_failures: u64,
    pub beacon_rejections: u64,
    pub handshake_suspects: u64,
}

impl Metrics {
    /// Fills the ratio fields from the counters; 0/0 is NaN.
    pub fn finish_ratios(&mut self) {
        self.delivery_ratio = ratio(self.data_delivered, self.data_originated);
        self.delivery_ratio_on_routes = ratio(self.data_delivered, self.data_sent);
        self.route_discovery_success = ratio(self.routes_found, self.route_discoveries);
    }

    pub fn total_control(&self) -> u64 {
        self.control_overhead.values().sum()
    }

    fn fields(&self) -> Vec<(String, Value)> {
        use Value::{Int, Real};
        let mut out = vec![
            ("delivery_ratio".to_string(), Real(self.delivery_ratio)),
            (
                "delivery_ratio_on_routes".into(),
                Real(self.delivery_ratio_on_routes),
            ),
            (
                "route_discovery_success".into(),
                Real(self.route_discovery_success),
            ),
            ("mean_hops".into(), Real(self.mean_hops)),
            (
                "chosen_path_avg_trust".into(),
                Real(self.chosen_path_avg_trust),
            ),
            ("data_originated".into(), Int(self.data_originated)),
            ("data_sent".into(), Int(self.data_sent)),
            ("data_delivered".into(), Int(self.data_delivered)),
            ("route_discoveries".into(), Int(self.route_discoveries)),
            ("routes_found".into(), Int(self.routes_found)),
            ("looped_routes".into(), Int(self.looped_routes)),
            ("rrep_rejected".into(), Int(self.rrep_rejected)),
            ("dead_ends".into(), Int(self.dead_ends)),
            ("hrep_collisions".into(), Int(self.hrep_collisions)),
        ];
        for (n, c) in &self.contention_rounds {
            out.push((format!("contention_rounds.{n}"), Int(*c)));
        }
        for kind in MessageKind::ALL {
            if kind == MessageKind::Data {
                continue;
            }
            let c = self.control_overhead.get(&kind).copied().unwrap_or(0);
            out.push((format!("control_overhead.{}", kind.label()), Int(c)));
        }
        out.extend([
            ("watchdog_tp".to_string(), Int(self.watchdog_tp)),
            ("watchdog_fp".into(), Int(self.watchdog_fp)),
            ("sybil_tp".into(), Int(self.sybil_tp)),
            ("sybil_fp".into(), Int(self.sybil_fp)),
            (
                "sybil_probes_adversary".into(),
                Int(self.sybil_probes_adversary),
            ),
            ("sybil_probes_honest".into(), Int(self.sybil_probes_honest)),
            (
                "pathselector_denials".into(),
                Int(self.pathselector_denials),
            ),
            (
                "position_service_failures".into(),
                Int(self.position_service_failures),
            ),
            ("beacon_rejections".into(), Int(self.beacon_rejections)),
            ("handshake_suspects".into(), Int(self.handshake_suspects)),
        ]);
        out
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

enum Value {
    Int(u64),
    Real(f64),
}

/// Six decimals when that reads back exactly, otherwise the shortest
/// exact form.
fn format_real(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    let six = format!("{v:.6}");
    if six.parse::<f64>() == Ok(v) {
        six
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Human,
    Machine,
}

pub fn emit_metrics(m: &Metrics, format: MetricsFormat) -> String {
    let fields = m.fields();
    let mut out = String::new();
    match format {
        MetricsFormat::Machine => {
            for (k, v) in fields {
                let v = match v {
                    Value::Int(i) => i.to_string(),
                    Value::Real(r) => format_real(r),
                };
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        MetricsFormat::Human => {
            let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            let _ = writeln!(out, "{:<width$}  value", "metric");
            let _ = writeln!(out, "{}  -----", "-".repeat(width));
            for (k, v) in fields {
                let v = match v {
                    Value::Int(i) => i.to_string(),
                    Value::Real(r) if r.is_nan() => "nan (undefined)".into(),
                    Value::Real(r) => format!("{r:.4}"),
                };
                let _ = writeln!(out, "{k:<width$}  {v}");
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsParseError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {line}: unknown metric {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}")]
    BadValue { line: usize, key: String },
}

/// Parses the machine format back into [`Metrics`].
pub fn parse_metrics(text: &str) -> Result<Metrics, MetricsParseError> {
    let mut m = Metrics::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (k, v) = raw.split_once('=').ok_or(MetricsParseError::Syntax(line))?;
        let (k, v) = (k.trim(), v.trim());
        let bad = || MetricsParseError::BadValue {
            line,
            key: k.to_string(),
        };
        let real = || -> Result<f64, MetricsParseError> {
            if v == "nan" {
                Ok(f64::NAN)
            } else {
                v.parse().map_err(|_| bad())
            }
        };
        let int = || v.parse::<u64>().map_err(|_| bad());
        if let Some(n) = k.strip_prefix("contention_rounds.") {
            let n: u32 = n.parse().map_err(|_| bad())?;
            m.contention_rounds.insert(n, int()?);
            continue;
        }
        if let Some(label) = k.strip_prefix("control_overhead.") {
            let kind =
                MessageKind::from_label(label).ok_or_else(|| MetricsParseError::UnknownKey {
                    line,
                    key: k.to_string(),
                })?;
            let c = int()?;
            if c > 0 {
                m.control_overhead.insert(kind, c);
            }
            continue;
        }
        match k {
            "delivery_ratio" => m.delivery_ratio = real()?,
            "delivery_ratio_on_routes" => m.delivery_ratio_on_routes = real()?,
            "route_discovery_success" => m.route_discovery_success = real()?,
            "mean_hops" => m.mean_hops = real()?,
            "chosen_path_avg_trust" => m.chosen_path_avg_trust = real()?,
            "data_originated" => m.data_originated = int()?,
            "data_sent" => m.data_sent = int()?,
            "data_delivered" => m.data_delivered = int()?,
            "route_discoveries" => m.route_discoveries = int()?,
            "routes_found" => m.routes_found = int()?,
            "looped_routes" => m.looped_routes = int()?,
            "rrep_rejected" => m.rrep_rejected = int()?,
            "dead_ends" => m.dead_ends = int()?,
            "hrep_collisions" => m.hrep_collisions = int()?,
            "watchdog_tp" => m.watchdog_tp = int()?,
            "watchdog_fp" => m.watchdog_fp = int()?,
            "sybil_tp" => m.sybil_tp = int()?,
            "sybil_fp" => m.sybil_fp = int()?,
            "sybil_probes_adversary" => m.sybil_probes_adversary = int()?,
            "sybil_probes_honest" => m.sybil_probes_honest = int()?,
            "pathselector_denials" => m.pathselector_denials = int()?,
            "position_service_failures" => m.position_service_failures = int()?,
            "beacon_rejections" => m.beacon_rejections = int()?,
            "handshake_suspects" => m.handshake_suspects = int()?,
            _ => {
                return Err(MetricsParseError::UnknownKey {
                    line,
                    key: k.to_string(),
                })
            }
        }
    }
    Ok(m)
}

/// Field-wise equality that treats NaN as equal to NaN.
pub fn metrics_equal(a: &Metrics, b: &Metrics) -> bool {
    let same = |x: f64, y: f64| x == y || (x.is_nan() && y.is_nan());
    let strip = |m: &Metrics| {
        let mut m = m.clone();
        m.control_overhead
            .retain(|k, v| *v > 0 && *k != MessageKind::Data);
        m.delivery_ratio = 0.0;
        m.delivery_ratio_on_routes = 0.0;
        m.route_discovery_success = 0.0;
        m.mean_hops = 0.0;
        m.chosen_path_avg_trust = 0.0;
        m
    };
    same(a.delivery_ratio, b.delivery_ratio)
        && same(a.delivery_ratio_on_routes, b.delivery_ratio_on_routes)
        && same(a.route_discovery_success, b.route_discovery_success)
        && same(a.mean_hops, b.mean_hops)
        && same(a.chosen_path_avg_trust, b.chosen_path_avg_trust)
        && strip(a) == strip(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delivery_ratio_line() {
        let m = Metrics {
            delivery_ratio: 1.0,
            ..Default::default()
        };
        let text = emit_metrics(&m, MetricsFormat::Machine);
        assert!(
            text.lines().any(|l| l == "delivery_ratio = 1.000000"),
            "{text}"
        );
    }

    #[test]
    fn empty_run_reports_nan() {
        let mut m = Metrics::default();
        m.finish_ratios();
        let text = emit_metrics(&m, MetricsFormat::Machine);
        assert!(text.contains("delivery_ratio = nan"));
        assert!(text.contains("data_originated = 0"));
        assert!(text.contains("control_overhead.rreq = 0"));
        let human = emit_metrics(&m, MetricsFormat::Human);
        assert!(human.contains("nan (undefined)"));
        assert!(metrics_equal(&parse_metrics(&text).unwrap(), &m));
    }

    #[test]
    fn inexact_reals_keep_full_precision() {
        assert_eq!(format_real(0.5), "0.500000");
        assert_eq!(format_real(1.0 / 3.0), "0.3333333333333333");
        assert_eq!(format_real(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_metrics("nonsense"), Err(MetricsParseError::Syntax(1)));
        assert!(matches!(
            parse_metrics("warp = 1"),
            Err(MetricsParseError::UnknownKey { .. })
        ));
        assert!(matches!(
            parse_metrics("data_sent = -1"),
            Err(MetricsParseError::BadValue { .. })
        ));
    }

    fn real() -> impl Strategy<Value = f64> {
        prop_oneof![Just(f64::NAN), 0.0f64..1.0, 0.0f64..1e6, Just(1.0)]
    }

    proptest! {
        #[test]
        fn machine_format_round_trips(
            reals in proptest::collection::vec(real(), 5),
            ints in proptest::collection::vec(0u64..1_000_000, 19),
            rounds in proptest::collection::btree_map(1u32..6, 0u64..1000, 0..4),
            overhead in proptest::collection::vec(0u64..10_000, 18),
        ) {
            let mut m = Metrics {
                delivery_ratio: reals[0],
                delivery_ratio_on_routes: reals[1],
                route_discovery_success: reals[2],
                mean_hops: reals[3],
                chosen_path_avg_trust: reals[4],
                data_originated: ints[0],
                data_sent: ints[1],
                data_delivered: ints[2],
                route_discoveries: ints[3],
                routes_found: ints[4],
                looped_routes: ints[5],
                rrep_rejected: ints[6],
                dead_ends: ints[7],
                hrep_collisions: ints[8],
                contention_rounds: rounds,
                control_overhead: BTreeMap::new(),
                watchdog_tp: ints[9],
                watchdog_fp: ints[10],
                sybil_tp: ints[11],
                sybil_fp: ints[12],
                sybil_probes_adversary: ints[13],
                sybil_probes_honest: ints[14],
                pathselector_denials: ints[15],
                position_service_failures: ints[16],
                beacon_rejections: ints[17],
                handshake_suspects: ints[18],
            };
            for (kind, c) in MessageKind::ALL.iter().filter(|k| **k != MessageKind::Data).zip(&overhead) {
                if *c > 0 {
                    m.control_overhead.insert(*kind, *c);
                }
            }
            let text = emit_metrics(&m, MetricsFormat::Machine);
            let back = parse_metrics(&text).unwrap();
            prop_assert!(metrics_equal(&back, &m), "{text}");
            prop_assert_eq!(emit_metrics(&back, MetricsFormat::Machine), text);
        }
    }
}
