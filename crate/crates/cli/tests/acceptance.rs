//! End-to-end acceptance checks, one line per criterion.
//!
//! `cargo test -p edm-cli --release --test acceptance` runs all twelve;
//! `... --test acceptance -- 3 7` runs a subset.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use edm_core::bench::{run_insertion_bench, run_query_bench, BenchConfig};
use edm_core::cam::{decode_cam, decode_fields, encode_fields, CamFields, CamMessage, StationType, CAM_FRAME_LEN};
use edm_core::fcd::{FcdTimestep, FcdVehicle};
use edm_core::fleet::{AgentOptions, Fleet, RouteModel};
use edm_core::geo::EARTH_RADIUS_M;
use edm_core::mec::{evaluate_handover, HandoverPolicy, HandoverState, MecDescriptor, DEFAULT_COOLDOWN_MS};
use edm_core::pubsub::{topic_matches, BrokerState, TopicFilter, TopicName, DEFAULT_MAX_PAYLOAD};
use edm_core::registry::{best_mec, RegistryState};
use edm_core::sim::{Deployment, SimConfig};
use edm_core::store::{EdmStore, QuerySpec, RetentionConfig, StoreConfig, StoredPoint};
use edm_core::{CellId, GeoBounds, GeoPoint, HexGrid};
use edm_net::{run_capacity, run_throughput, CapacityConfig, ThroughputConfig};
use oracles::{all_paths, neighbor_relation, quantized, topic_match, HexOracle, MecSpec, StoreOracle};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAT0: f64 = 40.4168;
const LON0: f64 = -3.7038;
const CELL_AREA: f64 = 15_000.0;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn origin() -> GeoPoint {
    GeoPoint::new(LAT0, LON0).unwrap()
}

fn grid() -> HexGrid {
    HexGrid::new(origin(), CELL_AREA).unwrap()
}

fn east(m: f64) -> GeoPoint {
    GeoPoint::new(LAT0, LON0 + (m / (EARTH_RADIUS_M * LAT0.to_radians().cos())).to_degrees()).unwrap()
}

fn cam(station_id: u32, gen_time_ms: u64, lat: f64, lon: f64) -> CamFields {
    CamFields {
        station_id,
        gen_time_ms,
        lat,
        lon,
        station_type: StationType::Car,
        heading_deg: 0.0,
        speed_mps: 10.0,
        accel_mps2: 0.0,
    }
}

// ---------------------------------------------------------------- 1

fn random_bounds(rng: &mut ChaCha8Rng, spread: f64) -> GeoBounds {
    let (a, b) = (rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
    let (c, d) = (rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
    GeoBounds { lat_min: LAT0 + a.min(b), lat_max: LAT0 + a.max(b), lon_min: LON0 + c.min(d), lon_max: LON0 + c.max(d) }
}

fn random_query(rng: &mut ChaCha8Rng, cells: &[CellId], shape: usize, spread: f64) -> QuerySpec {
    let window = rng.gen_range(1..20_000);
    let mut cell = cells.choose(rng).copied().unwrap_or(CellId::new(0, 0));
    if rng.gen_bool(0.2) {
        cell = *cell.neighbors().choose(rng).unwrap();
    }
    match shape {
        0 => QuerySpec::latest_in_bbox(random_bounds(rng, spread)),
        1 => QuerySpec::latest_in_cell(cell),
        2 => QuerySpec::recent(window),
        3 => QuerySpec::recent_in_bbox(window, random_bounds(rng, spread)),
        _ => QuerySpec::recent_in_cell(window, cell),
    }
}

fn criterion_1() -> Outcome {
    let grid = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut queries, mut max_rows) = (0usize, 0usize);
    for instance in 0..500 {
        let mut store = EdmStore::new(grid, StoreConfig::default());
        let mut model = StoreOracle::default();
        let target = rng.gen_range(1..=10_000usize);
        let stations = rng.gen_range(1..=1_000u32);
        let spread = rng.gen_range(0.001..0.01);
        let retention = RetentionConfig { window_ms: rng.gen_range(2_000..30_000), prune_interval_ms: 1_000 };
        let mut now = 1_700_000_000_000u64;
        let mut inserted = 0usize;
        let mut cells = Vec::new();
        let mut check = |store: &EdmStore, model: &StoreOracle, spec: QuerySpec, now: u64| -> Result<(), String> {
            queries += 1;
            let got = store.query(&spec, now).map_err(|e| format!("instance {instance}: {e}"))?;
            ensure(got == model.query(&spec, now), || format!("instance {instance}: {spec:?} differs"))
        };
        while inserted < target {
            let n = rng.gen_range(1..=(target - inserted).min(2_000));
            let batch: Vec<StoredPoint> = (0..n)
                .map(|_| {
                    let f = cam(
                        rng.gen_range(0..stations),
                        now - rng.gen_range(0..500),
                        LAT0 + rng.gen_range(-spread..spread),
                        LON0 + rng.gen_range(-spread..spread),
                    );
                    StoredPoint::from_cam(&CamMessage::new(f, &grid).unwrap())
                })
                .collect();
            cells.extend(batch.iter().take(8).map(|p| p.cell));
            model.insert(&batch, now);
            store.insert_batch(batch, now).map_err(|e| e.to_string())?;
            inserted += n;
            now += rng.gen_range(0..3_000);
            if rng.gen_bool(0.2) {
                let a = store.prune(now, &retention);
                let b = model.prune(now, retention.window_ms);
                ensure(a == b, || format!("instance {instance}: pruned {a} vs {b}"))?;
            }
            if rng.gen_bool(0.3) {
                let shape = rng.gen_range(0..5);
                check(&store, &model, random_query(&mut rng, &cells, shape, spread), now)?;
            }
            ensure(store.rows_live() == model.len(), || format!("instance {instance}: row count"))?;
            max_rows = max_rows.max(model.len());
        }
        for shape in 0..5 {
            for _ in 0..2 {
                check(&store, &model, random_query(&mut rng, &cells, shape, spread), now)?;
            }
        }
    }
    Ok(format!("500 instances, {queries} queries, up to {max_rows} rows"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let candidates = all_paths(&["a", "b", "+", "#"], 4);
    let topics = all_paths(&["a", "b"], 4);
    let mut filters = Vec::new();
    for f in &candidates {
        let hash_inside = f.split('/').rev().skip(1).any(|s| s == "#");
        match TopicFilter::new(f.as_str()) {
            Ok(filter) if !hash_inside => filters.push((f.clone(), filter)),
            Err(_) if hash_inside => {}
            other => return Err(format!("filter {f}: accepted={}", other.is_ok())),
        }
    }
    let mut broker = BrokerState::new(DEFAULT_MAX_PAYLOAD);
    for (i, (_, f)) in filters.iter().enumerate() {
        let s = i as u64 + 1;
        broker.attach_internal(s, format!("s{s}"));
        broker.subscribe(s, f.clone());
    }
    let mut pairs = 0;
    for t in &topics {
        let ts: Vec<&str> = t.split('/').collect();
        let topic = TopicName::new(t.as_str()).map_err(|e| e.to_string())?;
        let mut expect = BTreeSet::new();
        for (i, (f, filter)) in filters.iter().enumerate() {
            let want = topic_match(&f.split('/').collect::<Vec<_>>(), &ts);
            ensure(topic_matches(filter, &topic) == want, || format!("{f} vs {t}"))?;
            if want {
                expect.insert(i as u64 + 1);
            }
            pairs += 1;
        }
        let got: BTreeSet<u64> = broker.matching_sessions(&topic).into_iter().collect();
        ensure(got == expect, || format!("routing for {t}"))?;
    }
    Ok(format!("{} filters x {} topics = {pairs} pairs", filters.len(), topics.len()))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let grid = grid();
    let o = HexOracle::new((LAT0, LON0), CELL_AREA);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cells = BTreeSet::new();
    for _ in 0..10_000 {
        // uniform over the disc area
        let r = 2_000.0 * rng.gen::<f64>().sqrt();
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = o.to_geo(r * th.cos(), r * th.sin());
        let c = grid.cell_of(GeoPoint::new(p.0, p.1).unwrap()).map_err(|e| e.to_string())?;
        ensure(o.contains(c, p, 1e-6), || format!("{p:?} outside {c}"))?;
        cells.insert(c);
    }
    let spacing = grid.center_spacing_m();
    // the disc covers fewer than 1000 cells; top up with cells from further out
    let mut sample: BTreeSet<CellId> = cells.clone();
    while sample.len() < 1_000 {
        sample.insert(CellId::new(rng.gen_range(-500..500), rng.gen_range(-500..500)));
    }
    for c in &sample {
        let ns = c.neighbors();
        let distinct: BTreeSet<CellId> = ns.iter().copied().collect();
        ensure(distinct.len() == 6 && !distinct.contains(c), || format!("{c}: neighbors {ns:?}"))?;
        let (cx, cy) = o.center(*c);
        for n in ns {
            ensure(n.neighbors().contains(c), || format!("{c} -> {n} not symmetric"))?;
            let (nx, ny) = o.center(n);
            ensure(((cx - nx).hypot(cy - ny) - spacing).abs() < 1e-6, || format!("{c} -> {n} spacing"))?;
        }
    }
    Ok(format!("10000 points in {} cells, {} cells checked for symmetry", cells.len(), sample.len()))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = grid();
    for i in 0..10_000 {
        let f = CamFields {
            station_id: rng.gen(),
            gen_time_ms: rng.gen_range(1..u64::MAX),
            lat: rng.gen_range(-84.9..84.9),
            lon: rng.gen_range(-180.0..180.0),
            station_type: *StationType::ALL.choose(&mut rng).unwrap(),
            heading_deg: rng.gen_range(0.0..360.0),
            speed_mps: rng.gen_range(0.0..655.0),
            accel_mps2: rng.gen_range(-3276.0..3276.0),
        };
        let d = decode_fields(&encode_fields(&f).map_err(|e| format!("case {i}: {e}"))?)
            .map_err(|e| format!("case {i}: {e}"))?;
        let (lat, lon, heading, speed, accel) = quantized(f.lat, f.lon, f.heading_deg, f.speed_mps, f.accel_mps2);
        let ok = (d.station_id, d.gen_time_ms, d.station_type) == (f.station_id, f.gen_time_ms, f.station_type)
            && (d.lat - lat).abs() < 1e-12
            && (d.lon - lon).abs() < 1e-12
            && (d.heading_deg - heading).abs() < 1e-9
            && (d.speed_mps - speed).abs() < 1e-9
            && (d.accel_mps2 - accel).abs() < 1e-9;
        ensure(ok, || format!("case {i}: {f:?} decoded as {d:?}"))?;
    }
    let mut accepted = 0;
    for i in 0..10_000 {
        let b: Vec<u8> = match i % 3 {
            0 => (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect(),
            1 => {
                let mut b: Vec<u8> = (0..CAM_FRAME_LEN).map(|_| rng.gen()).collect();
                b[..2].copy_from_slice(&[0xCA, 0x01]);
                b
            }
            _ => {
                let p = east(rng.gen_range(-5_000.0..5_000.0));
                let mut b = encode_fields(&cam(rng.gen(), rng.gen_range(1..u64::MAX), p.lat(), p.lon())).unwrap().to_vec();
                for _ in 0..rng.gen_range(1..=4) {
                    let at = rng.gen_range(0..CAM_FRAME_LEN);
                    b[at] = rng.gen();
                }
                b
            }
        };
        let r = catch_unwind(AssertUnwindSafe(|| (decode_fields(&b), decode_cam(&b, &grid).is_ok())));
        let (fields, _) = r.map_err(|_| format!("fuzz case {i} panicked on {b:02x?}"))?;
        if let Ok(d) = fields {
            accepted += 1;
            let again = encode_fields(&d).map(|e| e[..29] == b[..29]);
            ensure(again == Ok(true), || format!("fuzz case {i}: accepted frame does not re-encode"))?;
        }
    }
    Ok(format!("10000 round trips, 10000 fuzz cases ({accepted} decodable)"))
}

// ---------------------------------------------------------------- 5

/// Directive times for one vehicle alternating between `lo` and `hi` meters east.
fn oscillate(policy: HandoverPolicy, lo: f64, hi: f64, duration_ms: u64) -> Vec<u64> {
    let mut a = MecDescriptor::new("A", east(0.0), 500.0, 800.0, "a:1").unwrap();
    let mut b = MecDescriptor::new("B", east(1000.0), 500.0, 800.0, "b:1").unwrap();
    a.neighbors.push(b.shallow());
    b.neighbors.push(a.shallow());
    let mecs = [&a, &b];
    let mut states = [HandoverState::new(policy), HandoverState::new(policy)];
    let mut current = 0;
    let mut issued = Vec::new();
    for tick in 0..duration_ms / 100 {
        let now = 1_000_000 + tick * 100;
        let x = if tick % 2 == 0 { lo } else { hi };
        if let Some(d) = evaluate_handover(1, east(x), mecs[current], &mut states[current], now) {
            issued.push(now);
            current = usize::from(d.target_mec == "B");
        }
    }
    issued
}

fn drive(from_m: f64, to_m: f64, speed: f64) -> RouteModel {
    let secs = ((to_m - from_m) / speed).ceil() as usize;
    let timesteps = (0..=secs)
        .map(|t| {
            let p = east((from_m + speed * t as f64).min(to_m));
            FcdTimestep {
                time_s: t as f64,
                vehicles: vec![FcdVehicle { name: "car".into(), lat: p.lat(), lon: p.lon(), heading_deg: 90.0, speed_mps: speed }],
            }
        })
        .collect();
    RouteModel::FcdReplay { timesteps, looped: false }
}

fn criterion_5() -> Outcome {
    let zero_margin = HandoverPolicy { margin_m: 0.0, ..Default::default() };
    let cases = [
        ("default policy, +-10 m at the outer threshold", HandoverPolicy::default(), 515.0, 535.0),
        ("default policy, +-10 m at the optimal radius", HandoverPolicy::default(), 490.0, 510.0),
        ("zero margin, +-10 m at the optimal radius", zero_margin, 490.0, 510.0),
    ];
    let mut counts = Vec::new();
    for (name, policy, lo, hi) in cases {
        let issued = oscillate(policy, lo, hi, 60_000);
        for w in issued.windows(2) {
            ensure(w[1] - w[0] > DEFAULT_COOLDOWN_MS, || format!("{name}: directives {issued:?}"))?;
        }
        counts.push(issued.len());
    }

    let start = 1_000_000;
    let g = HexGrid::with_default_area(east(0.0)).unwrap();
    let mut d = Deployment::new(g, SimConfig::default(), start);
    d.add_mec(MecDescriptor::new("A", east(0.0), 500.0, 800.0, "a:1").unwrap()).map_err(|e| e.to_string())?;
    d.add_mec(MecDescriptor::new("B", east(1000.0), 500.0, 800.0, "b:1").unwrap()).map_err(|e| e.to_string())?;
    let fleet = Fleet::spawn(&drive(-300.0, 1300.0, 15.0), g, AgentOptions::default(), start)
        .map_err(|e| e.to_string())?;
    d.add_fleet(fleet).map_err(|e| e.to_string())?;
    d.run_until(start + 110_000);
    ensure(d.directives().len() == 1, || format!("crossing: {} directives", d.directives().len()))?;
    ensure(d.directives()[0].directive.target_mec == "B", || "crossing: wrong target".into())?;
    let gens: Vec<u64> = d.receptions().iter().filter(|r| !r.mirrored).map(|r| r.gen_time_ms).collect();
    ensure(gens.windows(2).all(|w| w[1] > w[0]), || "crossing: duplicate or reordered frame".into())?;
    let max_gap = gens.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(u64::MAX);
    ensure(max_gap < 200, || format!("crossing: gap {max_gap} ms"))?;
    for m in ["A", "B"] {
        ensure(d.mec(m).is_some_and(|c| c.counters().conserved()), || format!("{m} not conserved"))?;
    }
    Ok(format!("oscillation directives {counts:?} in 60 s; crossing 1 directive, max gap {max_gap} ms"))
}

// ---------------------------------------------------------------- 6

fn random_mec(rng: &mut ChaCha8Rng, slots: usize, lattice: bool) -> MecDescriptor {
    let slot = rng.gen_range(0..slots);
    let (mut dlat, mut dlon): (f64, f64) = (rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03));
    let mut r_oper: f64 = rng.gen_range(300.0..2_000.0);
    if lattice {
        // coarse positions and radii provoke exact ties
        dlat = (dlat * 100.0).round() / 100.0;
        dlon = (dlon * 100.0).round() / 100.0;
        r_oper = (r_oper / 500.0).round().max(1.0) * 500.0;
    }
    let pos = GeoPoint::new(LAT0 + dlat, LON0 + dlon).unwrap();
    MecDescriptor::new(format!("mec{slot}"), pos, 0.7 * r_oper, r_oper, format!("10.0.0.{slot}:1883")).unwrap()
}

fn spec(d: &MecDescriptor) -> MecSpec {
    MecSpec { id: d.mec_id.clone(), pos: (d.position.lat(), d.position.lon()), r_oper: d.r_operating_m }
}

fn upsert(reg: &mut RegistryState, d: MecDescriptor, now: u64) -> Result<(), String> {
    let r = if reg.mec(&d.mec_id).is_some() { reg.update_mec(d, now) } else { reg.register_mec(d, now) };
    r.map(|_| ()).map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..10_000 {
        let lattice = i % 10 == 0;
        let n = rng.gen_range(1..=8);
        let mut reg = RegistryState::default();
        for _ in 0..n {
            upsert(&mut reg, random_mec(&mut rng, 8, lattice), 0)?;
        }
        let specs: Vec<MecSpec> = reg.mecs().map(spec).collect();
        for (id, set) in neighbor_relation(&specs) {
            ensure(reg.neighbor_ids(&id) == Some(&set), || format!("instance {i}: neighbors of {id}"))?;
        }
        let (mut dlat, mut dlon): (f64, f64) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        if lattice {
            dlat = (dlat * 100.0).round() / 100.0;
            dlon = (dlon * 100.0).round() / 100.0;
        }
        let p = (LAT0 + dlat, LON0 + dlon);
        let want = oracles::best_mec(p, &specs);
        let got = best_mec(GeoPoint::new(p.0, p.1).unwrap(), reg.mecs()).map(|d| d.mec_id.clone());
        ensure(got == want, || {
            let show: Vec<String> = specs.iter().map(|m| format!("{} {:.9} r{}", m.id, oracles::haversine(p, m.pos), m.r_oper)).collect();
            format!("instance {i}: best {got:?}, expected {want:?}; {show:?}")
        })?;
    }
    for seq in 0..1_000 {
        let mut reg = RegistryState::default();
        let ops = rng.gen_range(1..=40);
        for t in 0..ops {
            upsert(&mut reg, random_mec(&mut rng, 12, seq % 10 == 0), t)?;
        }
        let mut batch = RegistryState::default();
        for d in reg.mecs() {
            upsert(&mut batch, d.shallow(), 0)?;
        }
        let truth = neighbor_relation(&reg.mecs().map(spec).collect::<Vec<_>>());
        for (id, set) in &truth {
            ensure(reg.neighbor_ids(id) == Some(set), || format!("sequence {seq}: incremental view of {id}"))?;
            ensure(batch.neighbor_ids(id) == Some(set), || format!("sequence {seq}: batch view of {id}"))?;
        }
    }
    Ok("10000 instances, 1000 operation sequences".into())
}

// ---------------------------------------------------------------- 7, 11, 12

fn criterion_7(rt: &tokio::runtime::Runtime) -> Outcome {
    let cfg = CapacityConfig { duration: Duration::from_secs(10), malformed_per_s: 50, ..Default::default() };
    let r = rt.block_on(run_capacity(&cfg)).map_err(|e| e.to_string())?;
    let c = &r.counters;
    let dropped = c.overflow + c.store_rejected;
    ensure(c.pending == 0 && c.received == c.stored + c.malformed + dropped, || format!("{c:?}"))?;
    ensure(c.malformed > 0 && c.stored > 0, || format!("nothing exercised: {c:?}"))?;
    Ok(format!(
        "accepted {} = stored {} + malformed {} + dropped {dropped}",
        c.received, c.stored, c.malformed
    ))
}

fn criterion_11(rt: &tokio::runtime::Runtime) -> Outcome {
    let cfg = CapacityConfig { duration: Duration::from_secs(60), ..Default::default() };
    let r = rt.block_on(run_capacity(&cfg)).map_err(|e| e.to_string())?;
    let a = &r.availability;
    let summary = format!(
        "{} vehicles logged in, p99 {:.1} ms (mean {:.1}), budget_ok {:.4} over {} flushes, overflow {}",
        r.logged_in, a.p99_ms, a.mean_ms, r.budget_ok_fraction, r.flushes, r.counters.overflow
    );
    let ok = r.logged_in == cfg.n_vehicles as u64
        && a.n > 0
        && a.p99_ms < 100.0
        && r.budget_ok_fraction >= 0.99
        && r.counters.overflow == 0;
    ensure(ok, || summary.clone())?;
    Ok(summary)
}

fn criterion_12(rt: &tokio::runtime::Runtime) -> Outcome {
    let cfg = ThroughputConfig { rate_per_s: 20_000, duration: Duration::from_secs(60), payload_len: CAM_FRAME_LEN };
    let r = rt.block_on(run_throughput(&cfg)).map_err(|e| e.to_string())?;
    let summary = format!(
        "sent {} received {} at {:.0}/s, gaps {}, out of order {}, dropped {}+{}",
        r.sent, r.received, r.achieved_rate, r.gaps, r.out_of_order, r.broker_dropped, r.publisher_dropped
    );
    ensure(r.clean() && r.sent >= 20_000 * 59 && r.achieved_rate >= 19_000.0, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8, 9, 10

fn criterion_8() -> Outcome {
    let cfg = BenchConfig { batch_sizes: vec![1000], repetitions: 200, ..Default::default() };
    let row = run_insertion_bench(&cfg)?.remove(0);
    let total = row.decode.mean_ms + row.insertion.mean_ms;
    let summary = format!("decode {:.2} + insertion {:.2} = {total:.2} ms", row.decode.mean_ms, row.insertion.mean_ms);
    ensure(total < 50.0, || summary.clone())?;
    Ok(summary)
}

fn criterion_9() -> Outcome {
    let cfg = BenchConfig { repetitions: 100, ..Default::default() };
    let rows = run_insertion_bench(&cfg)?;
    let totals: Vec<String> = rows.iter().map(|r| format!("{}:{:.2}", r.batch_size, r.total.mean_ms)).collect();
    let summary = format!("mean total ms {}", totals.join(" "));
    let per = |b: usize| rows.iter().find(|r| r.batch_size == b).map(|r| r.per_message_ms());
    ensure(per(1000) < per(100), || format!("per message {:?} vs {:?}; {summary}", per(1000), per(100)))?;
    ensure(rows.windows(2).all(|w| w[1].total.mean_ms > w[0].total.mean_ms), || summary.clone())?;
    Ok(summary)
}

fn criterion_10() -> Outcome {
    let cfg = BenchConfig { batch_sizes: vec![1000, 2500], repetitions: 1000, n_cells: 20, ..Default::default() };
    let rows = run_query_bench(&cfg)?;
    let mut parts = Vec::new();
    for r in &rows {
        let means: Vec<String> = (1..=5).map(|q| format!("{:.4}", r.mean(q))).collect();
        parts.push(format!("{}: [{}]", r.batch_size, means.join(" ")));
        ensure(r.mean(5) < r.mean(4) && r.mean(2) < r.mean(1), || format!("ordering at {}: {parts:?}", r.batch_size))?;
    }
    let r = rows.iter().find(|r| r.batch_size == 2500).ok_or("no 2500 row")?;
    let ratio = r.mean(1) / r.mean(5);
    ensure(ratio > 3.0, || format!("q1/q5 = {ratio:.2}; {parts:?}"))?;
    Ok(format!("{}; q1/q5 at 2500 = {ratio:.1}", parts.join(", ")))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).filter_map(|a| a.parse().ok()).collect();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().expect("runtime");
    let limits: [(u32, Option<Duration>); 12] = [
        (1, Some(Duration::from_secs(120))),
        (2, Some(Duration::from_secs(60))),
        (3, Some(Duration::from_secs(30))),
        (4, None),
        (5, None),
        (6, None),
        (7, None),
        (8, None),
        (9, None),
        (10, None),
        (11, None),
        (12, None),
    ];
    let mut failed = 0;
    for (n, limit) in limits {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let result = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(&rt),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            11 => criterion_11(&rt),
            _ => criterion_12(&rt),
        };
        let took = t0.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {:.1} s, limit {} s", took.as_secs_f64(), l.as_secs())),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("criterion {n}: PASS ({detail}) [{:.1} s]", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why}) [{:.1} s]", took.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
