//! MEC server invariants: handover spacing across servers, border sets and
//! frame conservation.

mod oracles;

use std::collections::BTreeSet;

use bytes::Bytes;
use edm_core::cam::{encode_fields, CamFields, StationType};
use edm_core::mec::{
    border_cells, evaluate_handover, BorderAction, BorderSubscriptions, FlushWorker, HandoverState, MecConfig,
    MecCore, MecDescriptor, DEFAULT_COOLDOWN_MS,
};
use edm_core::store::QuerySpec;
use edm_core::{topics, CellId, GeoPoint, HexGrid};
use oracles::HexOracle;
use proptest::prelude::*;

const LAT0: f64 = 40.4168;
const LON0: f64 = -3.7038;

fn oracle() -> HexOracle {
    HexOracle::new((LAT0, LON0), 15_000.0)
}

fn at(x: f64, y: f64) -> GeoPoint {
    let (lat, lon) = oracle().to_geo(x, y);
    GeoPoint::new(lat, lon).unwrap()
}

fn grid() -> HexGrid {
    HexGrid::with_default_area(GeoPoint::new(LAT0, LON0).unwrap()).unwrap()
}

/// A at the origin and B `gap_m` east, each listing the other.
fn pair(gap_m: f64) -> (MecDescriptor, MecDescriptor) {
    let mut a = MecDescriptor::new("A", at(0.0, 0.0), 500.0, 800.0, "a:1").unwrap();
    let mut b = MecDescriptor::new("B", at(gap_m, 0.0), 500.0, 800.0, "b:1").unwrap();
    a.neighbors.push(b.shallow());
    b.neighbors.push(a.shallow());
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Any trajectory, even one that teleports, sees directives for one
    /// vehicle at least a cooldown apart across both servers.
    #[test]
    fn directives_spaced_by_cooldown(
        xs in prop::collection::vec(-200.0..1_200.0f64, 10..800),
        start_at_b in any::<bool>(),
    ) {
        let (a, b) = pair(1_000.0);
        let mecs = [&a, &b];
        let mut states = [HandoverState::default(), HandoverState::default()];
        let mut current = usize::from(start_at_b);
        let mut issued = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let now = 1_000 + i as u64 * 100;
            if let Some(d) = evaluate_handover(7, at(*x, 0.0), mecs[current], &mut states[current], now) {
                issued.push(now);
                current = if d.target_mec == "A" { 0 } else { 1 };
            }
        }
        for w in issued.windows(2) {
            prop_assert!(w[1] - w[0] > DEFAULT_COOLDOWN_MS, "{:?}", issued);
        }
    }

    #[test]
    fn reconcile_converges(gaps in prop::collection::vec(prop::option::of(200.0..2_500.0f64), 1..8)) {
        let grid = grid();
        let mut subs = BorderSubscriptions::new();
        let mut live: BTreeSet<(String, CellId)> = BTreeSet::new();
        let mut connected: BTreeSet<String> = BTreeSet::new();
        for gap in gaps {
            let mut this = MecDescriptor::new("A", at(0.0, 0.0), 500.0, 800.0, "a:1").unwrap();
            if let Some(g) = gap {
                this.neighbors.push(MecDescriptor::new("B", at(g, 0.0), 500.0, 800.0, "b:1").unwrap());
            }
            for act in subs.reconcile(&this, &grid) {
                match act {
                    BorderAction::Connect(d) => prop_assert!(connected.insert(d.mec_id)),
                    BorderAction::Disconnect { neighbor } => {
                        prop_assert!(connected.remove(&neighbor));
                        live.retain(|(n, _)| *n != neighbor);
                    }
                    BorderAction::Subscribe { neighbor, cell } => {
                        prop_assert!(connected.contains(&neighbor));
                        prop_assert!(live.insert((neighbor, cell)));
                    }
                    BorderAction::Unsubscribe { neighbor, cell } => prop_assert!(live.remove(&(neighbor, cell))),
                }
            }
            let want: BTreeSet<(String, CellId)> = this
                .neighbors
                .iter()
                .flat_map(|n| border_cells(&this, n, &grid).into_iter().map(|c| (n.mec_id.clone(), c)))
                .collect();
            prop_assert_eq!(&live, &want);
            prop_assert_eq!(subs.total_cells(), want.len());
        }
    }
}

#[test]
fn border_set_shrinks_as_neighbor_recedes() {
    let grid = grid();
    let mut prev: Option<BTreeSet<CellId>> = None;
    let mut sizes = Vec::new();
    for step in 0..=34 {
        let gap = 100.0 + 50.0 * step as f64;
        let (a, b) = pair(gap);
        let cells = border_cells(&a, &b, &grid);
        // same set from the other side
        assert_eq!(cells, border_cells(&b, &a, &grid));
        for c in &cells {
            let center = grid.cell_center(*c).unwrap();
            assert!(edm_core::geo::haversine_m(center, a.position) <= 800.0);
            assert!(edm_core::geo::haversine_m(center, b.position) <= 800.0);
        }
        if let Some(p) = &prev {
            assert!(cells.is_subset(p), "gap {gap}");
        }
        sizes.push(cells.len());
        prev = Some(cells);
    }
    assert_eq!(*sizes.last().unwrap(), 0);
    assert!(sizes[0] > sizes[18]);
}

fn frame(station: u32, gen: u64, x: f64, y: f64) -> Bytes {
    let p = at(x, y);
    Bytes::copy_from_slice(
        &encode_fields(&CamFields {
            station_id: station,
            gen_time_ms: gen,
            lat: p.lat(),
            lon: p.lon(),
            station_type: StationType::Car,
            heading_deg: 0.0,
            speed_mps: 10.0,
            accel_mps2: 0.0,
        })
        .unwrap(),
    )
}

#[derive(Debug, Clone)]
enum Step {
    Good(u32, f64, f64),
    Garbage(Vec<u8>),
    Flush,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        6 => (0u32..50, -700.0..700.0f64, -700.0..700.0f64).prop_map(|(s, x, y)| Step::Good(s, x, y)),
        1 => prop::collection::vec(any::<u8>(), 0..40).prop_map(Step::Garbage),
        2 => Just(Step::Flush),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_frame_is_accounted_for(steps in prop::collection::vec(step(), 1..400), limit in 1usize..64, max_rows in 1usize..300) {
        let (a, _) = pair(1_000.0);
        let mut cfg = MecConfig::new(a, grid());
        cfg.buffer_limit = limit;
        cfg.store.max_rows = max_rows;
        let core = MecCore::new(cfg).unwrap();
        let mut worker = FlushWorker::new(core.clone());
        let topic = topics::feed("A", CellId::new(0, 0)).unwrap();
        let mut now = 1_700_000_000_000u64;
        let (mut offered, mut good, mut garbage) = (0u64, 0u64, 0u64);
        for s in steps {
            now += 7;
            match s {
                Step::Good(id, x, y) => {
                    offered += 1;
                    if core.ingest(frame(id, now, x, y), &topic, now).is_ok() {
                        good += 1;
                    }
                }
                Step::Garbage(b) => {
                    offered += 1;
                    if core.ingest(Bytes::from(b), &topic, now).is_ok() {
                        garbage += 1;
                    }
                }
                Step::Flush => {
                    worker.flush(now);
                }
            }
            let c = core.counters();
            prop_assert!(c.conserved(), "{:?}", c);
            prop_assert_eq!(c.received, offered);
        }
        worker.flush(now + 1);
        let c = core.counters();
        prop_assert_eq!(c.pending, 0);
        prop_assert_eq!(c.received, c.stored + c.malformed + c.overflow + c.store_rejected);
        prop_assert_eq!(c.stored + c.store_rejected + c.malformed, good + garbage);
        let rows = core.store().read().query(&QuerySpec::recent(10_000_000), now + 1).unwrap().len() as u64;
        prop_assert_eq!(rows, c.stored);
    }
}
