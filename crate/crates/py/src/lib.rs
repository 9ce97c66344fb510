//! Python bindings: geometry and routing helpers plus whole-scenario runs.

use anonroute::discovery::{self, RoutingTableEntry};
use anonroute::harness::config::parse_config;
use anonroute::harness::metrics::{emit_metrics, MetricsFormat};
use anonroute::harness::scenario;
use anonroute::model::{self, NodeId, Position, SimTime};
use anonroute::trust::{self, Mode, RouteCandidate, TrustString};
use anonroute::vhr;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

fn pos((x, y): (f64, f64)) -> Position {
    Position::new(x, y)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn trust_string(s: &str) -> PyResult<TrustString> {
    s.parse()
        .map_err(|e: trust::TrustStringError| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    model::distance(pos(a), pos(b))
}

/// Truncated SHA-256 digest used for identifiers.
#[pyfunction]
fn hash_digest<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &model::hash_digest(data))
}

/// Pseudo-id for a position at a time in microseconds, as hex.
#[pyfunction]
fn make_pseudo_id(position: (f64, f64), time_us: u64) -> String {
    hex(&discovery::make_pseudo_id(pos(position), SimTime(time_us)).0)
}

#[pyfunction]
#[pyo3(signature = (sender_to_dest, receiver_to_dest, radio_range, is_destination = false))]
fn classify_receiver(
    sender_to_dest: f64,
    receiver_to_dest: f64,
    radio_range: f64,
    is_destination: bool,
) -> u8 {
    discovery::classify_receiver(
        sender_to_dest,
        receiver_to_dest,
        radio_range,
        is_destination,
    )
    .get()
}

/// Mean of a digit string such as "87875"; None when empty.
#[pyfunction]
fn avg_trust(s: &str) -> PyResult<Option<f64>> {
    Ok(trust::avg_trust(&trust_string(s)?))
}

/// Picks among `(hop_count, trust_string)` candidates; returns the index.
#[pyfunction]
fn route_select(mode: u8, candidates: Vec<(u32, String)>) -> PyResult<usize> {
    let mode =
        Mode::from_number(mode).ok_or_else(|| PyValueError::new_err("mode must be 1 or 2"))?;
    let cands = candidates
        .iter()
        .enumerate()
        .map(|(i, (hops, s))| {
            Ok(RouteCandidate {
                request_id: i as u64,
                path: Vec::new(),
                hop_count: *hops,
                trust_string: trust_string(s)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    trust::route_select(mode, &cands).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn vhr_center(node: u32, field_width: f64, field_height: f64) -> (f64, f64) {
    let c = vhr::vhr_center(NodeId(node), field_width, field_height);
    (c.x, c.y)
}

/// Parses and checks a scenario config; raises ValueError on problems.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<()> {
    parse_config(text)
        .map(|_| ())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn metrics_dict<'py>(py: Python<'py>, machine: &str) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for line in machine.lines() {
        let Some((k, v)) = line.split_once(" = ") else {
            continue;
        };
        if let Ok(n) = v.parse::<u64>() {
            d.set_item(k, n)?;
        } else {
            let f: f64 = v.parse().unwrap_or(f64::NAN);
            d.set_item(k, f)?;
        }
    }
    Ok(d)
}

fn entry_dict<'py>(py: Python<'py>, e: &RoutingTableEntry) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("request_id", e.request_id)?;
    d.set_item("prev_hop", e.prev_hop.map(|p| hex(&p.0)))?;
    d.set_item("next_hop", e.next_hop.map(|p| hex(&p.0)))?;
    d.set_item("own_pseudo", hex(&e.own_pseudo.0))?;
    Ok(d)
}

/// Runs a scenario from config text. Returns a dict with `metrics`,
/// `trace` (list of lines, empty unless `trace=True`), `flows` and
/// `routing_tables`.
#[pyfunction]
#[pyo3(signature = (config, seed = None, trace = false))]
fn run_scenario<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    trace: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = parse_config(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let r = py
        .detach(|| scenario::run_scenario(&cfg, trace))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let out = PyDict::new(py);
    out.set_item(
        "metrics",
        metrics_dict(py, &emit_metrics(&r.metrics, MetricsFormat::Machine))?,
    )?;
    let lines: Vec<String> = r.trace.iter().map(|t| t.to_string()).collect();
    out.set_item("trace", lines)?;

    let flows = PyList::empty(py);
    for (f, spec) in r.flows.iter().zip(&r.flow_specs) {
        let fd = PyDict::new(py);
        fd.set_item("source", spec.source.0)?;
        fd.set_item("destination", spec.destination.0)?;
        fd.set_item("originated", f.originated)?;
        fd.set_item("delivered", f.delivered)?;
        let discoveries = PyList::empty(py);
        for d in &f.discoveries {
            let dd = PyDict::new(py);
            dd.set_item("started_us", d.started.0)?;
            let cands: Vec<(u32, String)> = d
                .candidates
                .iter()
                .map(|c| (c.hop_count, c.trust_string.to_string()))
                .collect();
            dd.set_item("candidates", cands)?;
            dd.set_item("selected", d.selected)?;
            discoveries.append(dd)?;
        }
        fd.set_item("discoveries", discoveries)?;
        flows.append(fd)?;
    }
    out.set_item("flows", flows)?;

    let tables = PyDict::new(py);
    for (node, entries) in &r.routing_tables {
        let list = PyList::empty(py);
        for e in entries {
            list.append(entry_dict(py, e)?)?;
        }
        tables.set_item(node.0, list)?;
    }
    out.set_item("routing_tables", tables)?;
    Ok(out)
}

#[pymodule]
fn anonroute_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(hash_digest, m)?)?;
    m.add_function(wrap_pyfunction!(make_pseudo_id, m)?)?;
    m.add_function(wrap_pyfunction!(classify_receiver, m)?)?;
    m.add_function(wrap_pyfunction!(avg_trust, m)?)?;
    m.add_function(wrap_pyfunction!(route_select, m)?)?;
    m.add_function(wrap_pyfunction!(vhr_center, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
