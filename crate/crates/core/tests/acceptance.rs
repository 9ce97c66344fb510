//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anonroute::discovery::{
    classify_receiver, run_contention, Contender, ContentionConfig, NodeClass, YieldOutcome,
};
use anonroute::harness::config::{parse_config, ScenarioConfig};
use anonroute::harness::metrics::{emit_metrics, MetricsFormat};
use anonroute::harness::scenario::{run_scenario, RunResult};
use anonroute::harness::trace::render;
use anonroute::kernel::{seeded_rng, RadioModel, SPEED_OF_LIGHT};
use anonroute::model::{distance, NodeId, Position, SimTime};
use anonroute::neighbor::{
    check_handshake, verify_beacon, BeaconObservation, BeaconVerdict, HandshakeOutcome,
    NeighborTable, VerifyConfig,
};
use anonroute::trust::{avg_trust, route_select, Mode};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_config(&text).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn run(cfg: &ScenarioConfig, trace: bool) -> RunResult {
    run_scenario(cfg, trace).expect("scenario runs")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn worked_example() -> Outcome {
    let start = Instant::now();
    let mut cfg = scenario("worked_example.cfg");
    check(cfg.nodes == 11, || {
        format!("topology has {} nodes", cfg.nodes)
    })?;
    cfg.protocol.mode = Mode::Trusted;
    let r1 = run(&cfg, false);
    cfg.protocol.mode = Mode::Shortest;
    let r2 = run(&cfg, false);
    let elapsed = start.elapsed();

    let d1 = &r1.flows[0].discoveries[0];
    let find = |s: &str| {
        d1.candidates
            .iter()
            .position(|c| c.trust_string.to_string() == s)
            .ok_or_else(|| format!("no candidate with trust string {s}"))
    };
    let (p1, p2) = (find("544")?, find("87875")?);
    let a1 = avg_trust(&d1.candidates[p1].trust_string).unwrap();
    let a2 = avg_trust(&d1.candidates[p2].trust_string).unwrap();
    check((a1 - 4.33).abs() <= 0.005, || {
        format!("path 1 average {a1}")
    })?;
    check(a2 == 7.0, || format!("path 2 average {a2}"))?;
    check(d1.selected == Some(p2), || {
        format!("mode 1 selected {:?}", d1.selected)
    })?;
    let again = route_select(Mode::Shortest, &d1.candidates).map_err(|e| e.to_string())?;
    check(d1.candidates[again].hop_count == 4, || {
        "mode 2 on the same candidates".into()
    })?;
    let d2 = &r2.flows[0].discoveries[0];
    let sel = d2.selected.ok_or("mode 2 run selected nothing")?;
    check(d2.candidates[sel].hop_count == 4, || {
        format!("mode 2 picked {} hops", d2.candidates[sel].hop_count)
    })?;
    check(
        r1.metrics.data_delivered == r1.metrics.data_originated,
        || "mode 1 lost data".into(),
    )?;
    check(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "averages {a1:.2} / {a2:.2}, mode 1 -> {} hops, mode 2 -> 4 hops, {elapsed:.0?}",
        d1.candidates[p2].hop_count
    ))
}

/// Independent derivation in scaled integer-free form: compares 3·Δd with
/// multiples of r instead of dividing.
fn oracle_class(s: Position, recv: Position, dst: Position, r: f64) -> u8 {
    let progress3 = 3.0 * (distance(s, dst) - distance(recv, dst));
    if progress3 < 0.0 {
        4
    } else if progress3 < r {
        3
    } else if progress3 <= 2.0 * r {
        2
    } else {
        1
    }
}

fn classification_oracle() -> Outcome {
    let mut rng = seeded_rng(2);
    let mut agree = 0;
    let n = 10_000;
    for _ in 0..n {
        let mut p = || Position::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
        let (s, recv, dst) = (p(), p(), p());
        let r = rng.gen_range(50.0..400.0);
        let got = classify_receiver(distance(s, dst), distance(recv, dst), r, false).get();
        if got == oracle_class(s, recv, dst, r) {
            agree += 1;
        }
    }
    check(agree == n, || format!("{agree}/{n} random cases agree"))?;
    // Δd ∈ {0, d, 2d} with r = 300 (d = 100), along a line to the destination.
    let dst = Position::new(1000.0, 0.0);
    let s = Position::new(0.0, 0.0);
    for (dd, want) in [
        (0.0, 3),
        (100.0, 2),
        (200.0, 2),
        (-1e-9, 4),
        (99.999, 3),
        (200.001, 1),
    ] {
        let recv = Position::new(dd, 0.0);
        let got = classify_receiver(distance(s, dst), distance(recv, dst), 300.0, false).get();
        check(
            got == want && got == oracle_class(s, recv, dst, 300.0),
            || format!("Δd = {dd}: got class {got}, want {want}"),
        )?;
    }
    check(
        classify_receiver(1000.0, 0.0, 300.0, true) == NodeClass::DESTINATION,
        || "destination".into(),
    )?;
    Ok(format!("{n}/{n} random tuples and 6 boundary cases agree"))
}

fn contention_priority() -> Outcome {
    let mut rng = seeded_rng(3);
    let cfg = ContentionConfig::default();
    let (mut unique, mut exceptions) = (0, 0);
    for _ in 0..10_000 {
        let k = rng.gen_range(1..=8);
        let parts: Vec<Contender<usize>> = (0..k)
            .map(|id| Contender {
                id,
                class: NodeClass::new(rng.gen_range(0..=4)).unwrap(),
                aggressive: false,
            })
            .collect();
        let best = parts
            .iter()
            .filter(|c| c.class.contends())
            .map(|c| c.class)
            .min();
        if let YieldOutcome::Winner { id, .. } = run_contention(&parts, &cfg, &mut rng).result {
            unique += 1;
            if Some(parts[id].class) != best {
                exceptions += 1;
            }
        }
    }
    check(exceptions == 0, || {
        format!("{exceptions} winners outside the best class")
    })?;
    Ok(format!("{unique} unique winners, 0 exceptions"))
}

fn collision_monotonicity() -> Outcome {
    let n = 10_000;
    let mut freqs = Vec::new();
    for (i, slots) in [1u32, 2, 4, 8, 16].into_iter().enumerate() {
        let cfg = ContentionConfig {
            yield_slots: slots,
            ..ContentionConfig::default()
        };
        let mut rng = seeded_rng(40 + i as u64);
        let parts: Vec<Contender<usize>> = (0..5)
            .map(|id| Contender {
                id,
                class: NodeClass::new(2).unwrap(),
                aggressive: false,
            })
            .collect();
        let collisions = (0..n)
            .filter(|_| {
                matches!(
                    run_contention(&parts, &cfg, &mut rng).result,
                    YieldOutcome::Collision { .. }
                )
            })
            .count();
        freqs.push(collisions as f64 / n as f64);
    }
    let se = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    let mut inversions = 0;
    for w in freqs.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            let tol = 2.0 * (se(w[0]).powi(2) + se(w[1]).powi(2)).sqrt();
            check(w[1] - w[0] <= tol, || {
                format!("inversion beyond 2 SE: {freqs:?}")
            })?;
        }
    }
    check(inversions <= 1, || {
        format!("{inversions} inversions: {freqs:?}")
    })?;
    let shown: Vec<String> = freqs.iter().map(|f| format!("{f:.4}")).collect();
    Ok(format!(
        "collision rate over slots 1,2,4,8,16: {}",
        shown.join(", ")
    ))
}

fn position_verification() -> Outcome {
    let cfg = VerifyConfig::default();
    let mut rng = seeded_rng(5);
    let own = Position::new(500.0, 500.0);
    let n = 10_000;
    let mut far_rejected = 0;
    for i in 0..n {
        let mut t = NeighborTable::new(anonroute::model::TrustLevel::new(5).unwrap());
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = cfg.range_threshold + rng.gen_range(1e-6..500.0);
        let obs = BeaconObservation {
            sender: NodeId(1),
            claimed: Position::new(own.x + d * angle.cos(), own.y + d * angle.sin()),
            tusn: i,
            arrival: SimTime::from_millis(i),
        };
        if matches!(
            verify_beacon(&mut t, own, &obs, &cfg),
            BeaconVerdict::Rejected(_)
        ) {
            far_rejected += 1;
        }
    }
    let mut fast_rejected = 0;
    for i in 0..n {
        let mut t = NeighborTable::new(anonroute::model::TrustLevel::new(5).unwrap());
        let a = Position::new(
            own.x + rng.gen_range(-100.0..100.0),
            own.y + rng.gen_range(-100.0..100.0),
        );
        let dt = rng.gen_range(0.1..2.0);
        let jump = 2.0 * cfg.max_speed * dt;
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let b = Position::new(a.x + jump * angle.cos(), a.y + jump * angle.sin());
        let t0 = SimTime::from_secs_f64(1.0);
        let first = BeaconObservation {
            sender: NodeId(1),
            claimed: a,
            tusn: 2 * i,
            arrival: t0,
        };
        let second = BeaconObservation {
            sender: NodeId(1),
            claimed: b,
            tusn: 2 * i + 1,
            arrival: t0 + SimTime::from_secs_f64(dt),
        };
        verify_beacon(&mut t, own, &first, &cfg);
        if matches!(
            verify_beacon(&mut t, own, &second, &cfg),
            BeaconVerdict::Rejected(_)
        ) {
            fast_rejected += 1;
        }
    }
    // Honest beacons: in range, moving at most max_speed, one second apart.
    let mut t = NeighborTable::new(anonroute::model::TrustLevel::new(5).unwrap());
    let mut false_pos = 0;
    let mut senders: Vec<Position> = (0..20).map(|_| own).collect();
    for i in 0..n {
        let s = i % 20;
        let p = senders[s as usize];
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let step = rng.gen_range(0.0..=cfg.max_speed);
        let mut next = Position::new(p.x + step * angle.cos(), p.y + step * angle.sin());
        if distance(own, next) > cfg.range_threshold - 1.0 {
            next = p;
        }
        senders[s as usize] = next;
        let obs = BeaconObservation {
            sender: NodeId(s as u32 + 1),
            claimed: next,
            tusn: i,
            arrival: SimTime::from_secs_f64(1.0 + (i / 20) as f64),
        };
        if matches!(
            verify_beacon(&mut t, own, &obs, &cfg),
            BeaconVerdict::Rejected(_)
        ) {
            false_pos += 1;
        }
    }
    check(far_rejected == n, || {
        format!("{far_rejected}/{n} out-of-range beacons rejected")
    })?;
    check(fast_rejected == n, || {
        format!("{fast_rejected}/{n} teleporting beacons rejected")
    })?;
    check(false_pos == 0, || {
        format!("{false_pos} honest beacons rejected")
    })?;
    // Same in a running network: random-waypoint nodes never trip the checks.
    let mut mob = scenario("baseline.cfg");
    mob.mobility.model = anonroute::harness::config::MobilityModel::RandomWaypoint;
    mob.duration = SimTime::from_secs_f64(10.0);
    let r = run(&mob, false);
    let beacons = r
        .metrics
        .control_overhead
        .get(&anonroute::message::MessageKind::Beacon)
        .copied()
        .unwrap_or(0);
    check(r.metrics.beacon_rejections == 0, || {
        format!(
            "{} simulated honest rejections",
            r.metrics.beacon_rejections
        )
    })?;
    Ok(format!(
        "far {far_rejected}/{n}, 2x speed {fast_rejected}/{n} rejected; 0/{n} honest rejected (+0/{beacons} in a mobile run)"
    ))
}

fn neighbor_bound() -> Outcome {
    let radio = RadioModel::new(300.0);
    let quantum = SPEED_OF_LIGHT * 1e-6;
    let mut rng = seeded_rng(6);
    let own = Position::new(0.0, 0.0);
    let t0 = SimTime::from_millis(5);
    for _ in 0..10_000 {
        let d = rng.gen_range(0.0..=300.0);
        let peer = Position::new(d, 0.0);
        let t1 = t0 + SimTime(2 * radio.delay(d).0);
        match check_handshake(own, peer, t0, t1, SimTime::ZERO) {
            HandshakeOutcome::Accepted { bound, .. } => {
                check(d <= bound && bound - d <= quantum, || {
                    format!("d = {d}, bound = {bound}")
                })?;
            }
            HandshakeOutcome::Suspect { bound, .. } => {
                return Err(format!("honest d = {d} rejected (bound {bound})"))
            }
        }
    }
    // 300 m link: 1 µs each way; a relay adds 2 µs to the round trip.
    let rtt = SimTime(2 * radio.delay(300.0).0 + 2);
    check(rtt == SimTime(4), || format!("round trip {rtt:?}"))?;
    let bound = match check_handshake(own, Position::new(600.0, 0.0), t0, t0 + rtt, SimTime::ZERO) {
        HandshakeOutcome::Accepted { bound, .. } => bound,
        HandshakeOutcome::Suspect { bound, .. } => {
            return Err(format!("600 m claim rejected, bound {bound}"))
        }
    };
    check((bound - 600.0).abs() < 1e-6, || {
        format!("inflated bound {bound}")
    })?;
    let beyond = check_handshake(own, Position::new(600.5, 0.0), t0, t0 + rtt, SimTime::ZERO);
    check(matches!(beyond, HandshakeOutcome::Suspect { .. }), || {
        "claim beyond 600 m admitted".into()
    })?;
    let r = run(&scenario("baseline.cfg"), false);
    check(r.metrics.handshake_suspects == 0, || {
        format!("{} honest suspects in a run", r.metrics.handshake_suspects)
    })?;
    Ok("10000 honest handshakes within one quantum; relayed 300 m link bounded at 600.0 m".into())
}

fn watchdog() -> Outcome {
    let base = scenario("dropper.cfg");
    let theta = base.protocol.flag_threshold;
    let (mut on_o, mut on_d, mut off_o, mut off_d) = (0, 0, 0, 0);
    let mut flags = 0;
    for seed in 1..=20 {
        let mut on = base.clone();
        on.seed = seed;
        let mut off = on.clone();
        off.defenses.pathselector = false;
        off.defenses.sybil = false;
        off.defenses.alerts = false;
        off.defenses.beacons = false;
        off.defenses.handshake = false;
        let (a, b) = (run(&on, false), run(&off, false));
        for (node, opportunities) in &a.flagged {
            check(*node == NodeId(0), || {
                format!("seed {seed}: honest node {node} flagged")
            })?;
            check(*opportunities <= theta, || {
                format!("seed {seed}: flagged after {opportunities} opportunities (θ = {theta})")
            })?;
            flags += 1;
        }
        for (node, rate) in &a.failure_rates {
            check(*node == NodeId(0) || *rate == 0, || {
                format!("seed {seed}: honest {node} failure rate {rate}")
            })?;
        }
        on_o += a.metrics.data_originated;
        on_d += a.metrics.data_delivered;
        off_o += b.metrics.data_originated;
        off_d += b.metrics.data_delivered;
    }
    let (on_r, off_r) = (on_d as f64 / on_o as f64, off_d as f64 / off_o as f64);
    check(flags > 0, || "dropper never flagged".into())?;
    check(on_r > off_r, || {
        format!("delivery with defenses {on_r:.4} vs without {off_r:.4}")
    })?;
    Ok(format!(
        "flagged within θ = {theta} in {flags}/20 seeds, honest failure rate 0, delivery {on_r:.4} vs {off_r:.4} undefended"
    ))
}

fn sybil() -> Outcome {
    let base = scenario("sybil.cfg");
    let (mut tp, mut adv, mut fp, mut honest) = (0, 0, 0, 0);
    for seed in 1..=20 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let m = run(&cfg, false).metrics;
        tp += m.sybil_tp;
        adv += m.sybil_probes_adversary;
        fp += m.sybil_fp;
        honest += m.sybil_probes_honest;
        check(m.pathselector_denials == 0, || {
            format!("seed {seed}: honest node denied by path selector")
        })?;
    }
    check(adv > 0, || "the Sybil never won a contention".into())?;
    check(tp == adv, || format!("{tp}/{adv} Sybil probes denied"))?;
    check(fp == 0, || {
        format!("{fp}/{honest} honest stationary winners denied")
    })?;
    let mut mobile = scenario("baseline.cfg");
    mobile.mobility.model = anonroute::harness::config::MobilityModel::RandomWaypoint;
    mobile.duration = SimTime::from_secs_f64(6.0);
    let (mut mfp, mut mh) = (0, 0);
    for seed in 1..=10 {
        mobile.seed = seed;
        let m = run(&mobile, false).metrics;
        mfp += m.sybil_fp;
        mh += m.sybil_probes_honest;
    }
    Ok(format!(
        "Sybil denied {tp}/{adv}, honest static denied 0/{honest}, honest mobile false-denial rate {:.4} ({mfp}/{mh})",
        mfp as f64 / mh.max(1) as f64
    ))
}

fn connected_oracle(p: &[Position], r: f64) -> bool {
    let mut parent: Vec<usize> = (0..p.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if distance(p[i], p[j]) <= r {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let root = find(&mut parent, 0);
    (0..p.len()).all(|i| find(&mut parent, i) == root)
}

/// Whether max-progress greedy forwarding gets stuck between two nodes.
fn greedy_void(p: &[Position], r: f64, src: usize, dst: usize) -> bool {
    let mut at = src;
    loop {
        if distance(p[at], p[dst]) <= r {
            return false;
        }
        let next = (0..p.len())
            .filter(|&n| n != at && distance(p[at], p[n]) <= r)
            .min_by(|&a, &b| distance(p[a], p[dst]).total_cmp(&distance(p[b], p[dst])));
        match next {
            Some(n) if distance(p[n], p[dst]) < distance(p[at], p[dst]) => at = n,
            _ => return true,
        }
    }
}

fn honest_baseline() -> Outcome {
    let start = Instant::now();
    let base = scenario("baseline.cfg");
    let (mut flows, mut ok, mut voids, mut discoveries, mut found) = (0, 0, 0, 0, 0);
    for seed in 1..=50 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let r = run(&cfg, false);
        check(connected_oracle(&r.initial_positions, cfg.radius), || {
            format!("seed {seed}: disconnected")
        })?;
        let m = &r.metrics;
        check(m.data_delivered == m.data_sent, || {
            format!(
                "seed {seed}: {}/{} delivered on routes",
                m.data_delivered, m.data_sent
            )
        })?;
        check(m.looped_routes == 0, || {
            format!("seed {seed}: looped route")
        })?;
        discoveries += m.route_discoveries;
        found += m.routes_found;
        for (f, spec) in r.flows.iter().zip(&r.flow_specs) {
            for d in &f.discoveries {
                for c in &d.candidates {
                    let ids: BTreeSet<_> = c.path.iter().collect();
                    check(ids.len() == c.path.len(), || {
                        format!("seed {seed}: repeated pseudo-id")
                    })?;
                }
            }
            flows += 1;
            if f.discoveries.first().is_some_and(|d| d.selected.is_some()) {
                ok += 1;
            } else if greedy_void(
                &r.initial_positions,
                cfg.radius,
                spec.source.0 as usize,
                spec.destination.0 as usize,
            ) {
                voids += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let rate = ok as f64 / flows as f64;
    check(rate >= 0.99, || format!("discovery success {ok}/{flows}"))?;
    check(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "discovery success {ok}/{flows} = {:.1}% ({} failed, {voids} greedy voids; {found}/{discoveries} counting rediscoveries), on-route delivery 100%, loop-free, {elapsed:.1?}",
        100.0 * rate,
        flows - ok
    ))
}

fn mobility_alert() -> Outcome {
    let base = scenario("mobility_alert.cfg");
    let on = run(&base, true);
    let mut cfg = base.clone();
    cfg.defenses.alerts = false;
    let off = run(&cfg, true);
    let has = |r: &RunResult, kind: &str, detail: Option<(&str, &str)>| {
        r.trace
            .iter()
            .any(|t| t.kind == kind && detail.is_none_or(|(k, v)| t.detail(k) == Some(v)))
    };
    check(has(&on, "alert", None), || "no alert raised".into())?;
    check(has(&on, "alert_rx", None), || {
        "alert never reached the source".into()
    })?;
    check(has(&on, "svc", Some(("kind", "mobility_alert"))), || {
        "home region not notified".into()
    })?;
    check(
        on.metrics.data_delivered == on.metrics.data_originated,
        || {
            format!(
                "alerts on: {}/{} delivered",
                on.metrics.data_delivered, on.metrics.data_originated
            )
        },
    )?;
    check(
        off.metrics.data_delivered < off.metrics.data_originated,
        || "alerts off still delivered everything".into(),
    )?;
    Ok(format!(
        "alerts on: {}/{} delivered; alerts off: {}/{} delivered",
        on.metrics.data_delivered,
        on.metrics.data_originated,
        off.metrics.data_delivered,
        off.metrics.data_originated
    ))
}

fn determinism() -> Outcome {
    let mut lines = 0;
    for name in [
        "worked_example.cfg",
        "baseline.cfg",
        "dropper.cfg",
        "sybil.cfg",
        "mobility_alert.cfg",
    ] {
        let cfg = scenario(name);
        let a = run(&cfg, true);
        let b = run(&cfg, true);
        let (ta, tb) = (render(&a.trace), render(&b.trace));
        check(ta == tb, || format!("{name}: traces differ"))?;
        let (ma, mb) = (
            emit_metrics(&a.metrics, MetricsFormat::Machine),
            emit_metrics(&b.metrics, MetricsFormat::Machine),
        );
        check(ma == mb, || format!("{name}: metrics differ"))?;
        lines += a.trace.len();
    }
    Ok(format!(
        "5 scenarios byte-identical across reruns ({lines} trace lines)"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("worked example", worked_example),
        ("classification oracle", classification_oracle),
        ("contention priority", contention_priority),
        ("collision monotonicity", collision_monotonicity),
        ("position verification", position_verification),
        ("secure neighbor bound", neighbor_bound),
        ("watchdog efficacy", watchdog),
        ("sybil detection", sybil),
        ("honest baseline", honest_baseline),
        ("destination mobility", mobility_alert),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
