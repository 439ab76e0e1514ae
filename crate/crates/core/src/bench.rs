//! Single-threaded insertion and query benchmarks.
//!
//! Both drive a real [`MecCore`] through [`FlushWorker::flush`], so the
//! measured decode and insertion times come from the production path.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cam::{encode_fields, CamFields, StationType};
use crate::fleet::{AgentOptions, Fleet, RouteModel, SyntheticRoutes};
use crate::mec::{FlushReport, FlushWorker, MecConfig, MecCore, MecDescriptor};
use crate::pubsub::TopicName;
use crate::stats::{summarize, LatencyStats};
use crate::store::{QuerySpec, StoreConfig, DEFAULT_MEMORY_BUDGET_BYTES};
use crate::{topics, CellId, GeoBounds, GeoPoint, HexGrid};

pub const DEFAULT_BATCH_SIZES: [usize; 5] = [100, 1000, 2500, 5000, 10000];
pub const DEFAULT_REPETITIONS: usize = 1000;
pub const DEFAULT_N_CELLS: usize = 20;
pub const MIN_REPETITIONS: usize = 30;
/// Virtual time between consecutive batches.
pub const BATCH_INTERVAL_MS: u64 = 1000;
pub const MIN_QUERY_WINDOW_MS: u64 = 100;
const BENCH_MEC: &str = "bench";
/// Arbitrary fixed epoch so virtual timestamps look like wall time.
const BENCH_EPOCH_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
    pub n_cells: usize,
    pub memory_budget_bytes: usize,
    pub t_buffer_ms: u64,
    pub seed: u64,
    pub origin: GeoPoint,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: DEFAULT_BATCH_SIZES.to_vec(),
            repetitions: DEFAULT_REPETITIONS,
            n_cells: DEFAULT_N_CELLS,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET_BYTES,
            t_buffer_ms: 50,
            seed: 7,
            origin: GeoPoint::new(40.4168, -3.7038).expect("valid origin"),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.repetitions < MIN_REPETITIONS {
            return Err(format!("repetitions must be >= {MIN_REPETITIONS}, got {}", self.repetitions));
        }
        if self.n_cells == 0 {
            return Err("n_cells must be positive".into());
        }
        if self.t_buffer_ms == 0 {
            return Err("t_buffer_ms must be positive".into());
        }
        Ok(())
    }

    fn grid(&self) -> HexGrid {
        HexGrid::with_default_area(self.origin).expect("validated origin")
    }

    fn core(&self, max_batch: usize) -> Arc<MecCore> {
        let d = MecDescriptor::new(BENCH_MEC, self.origin, 500.0, 800.0, "127.0.0.1:0").expect("valid descriptor");
        let mut cfg = MecConfig::new(d, self.grid());
        cfg.t_buffer_ms = self.t_buffer_ms;
        cfg.buffer_limit = max_batch.max(1);
        cfg.store = StoreConfig { memory_budget_bytes: self.memory_budget_bytes, ..StoreConfig::default() };
        MecCore::new(cfg).expect("valid bench config")
    }

    pub fn metadata_csv(&self, bench: &str) -> String {
        let sizes: Vec<String> = self.batch_sizes.iter().map(ToString::to_string).collect();
        let mut s = String::from("key,value\n");
        let _ = writeln!(s, "bench,{bench}");
        let _ = writeln!(s, "batch_sizes,{}", sizes.join(";"));
        let _ = writeln!(s, "repetitions,{}", self.repetitions);
        let _ = writeln!(s, "n_cells,{}", self.n_cells);
        let _ = writeln!(s, "memory_budget_bytes,{}", self.memory_budget_bytes);
        let _ = writeln!(s, "t_buffer_ms,{}", self.t_buffer_ms);
        let _ = writeln!(s, "seed,{}", self.seed);
        let _ = writeln!(s, "origin,{};{}", self.origin.lat(), self.origin.lon());
        let _ = writeln!(s, "batch_interval_ms,{BATCH_INTERVAL_MS}");
        let _ = writeln!(s, "version,{}", env!("CARGO_PKG_VERSION"));
        s
    }
}

/// `n` CAM frames, one per synthetic vehicle, from a 2 km square around `origin`.
pub fn synthetic_corpus(origin: GeoPoint, n: usize, seed: u64) -> Vec<(TopicName, Bytes)> {
    if n == 0 {
        return Vec::new();
    }
    let d = 1000.0 / crate::geo::EARTH_RADIUS_M;
    let dlat = d.to_degrees();
    let dlon = (d / origin.lat().to_radians().cos()).to_degrees();
    let bbox = GeoBounds {
        lat_min: origin.lat() - dlat,
        lat_max: origin.lat() + dlat,
        lon_min: origin.lon() - dlon,
        lon_max: origin.lon() + dlon,
    };
    let grid = HexGrid::with_default_area(origin).expect("valid origin");
    let model = RouteModel::Synthetic(SyntheticRoutes::new(bbox, n, seed));
    let mut fleet = Fleet::spawn(&model, grid, AgentOptions::default(), BENCH_EPOCH_MS).expect("valid corpus model");
    for i in 0..fleet.len() {
        let id = i as u32 + 1;
        fleet.agent_mut(i).apply_login(&crate::registry::LoginResponse {
            vehicle_id: id,
            mec_id: BENCH_MEC.into(),
            endpoint: "127.0.0.1:0".into(),
        });
    }
    let period = fleet.agents()[0].send_period_ms();
    let mut out = Vec::with_capacity(n);
    for t in 0..period {
        out.extend(fleet.step(BENCH_EPOCH_MS + t).into_iter().map(|e| (e.topic, e.frame)));
    }
    out
}

fn flush_batch(core: &MecCore, worker: &mut FlushWorker, frames: &[(TopicName, Bytes)], now_ms: u64) -> FlushReport {
    for (topic, raw) in frames {
        core.ingest(raw.clone(), topic, now_ms).expect("bench buffer sized to batch");
    }
    worker.maybe_prune(now_ms);
    worker.flush(now_ms).report
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertionRow {
    pub batch_size: usize,
    pub decode: LatencyStats<f64>,
    pub insertion: LatencyStats<f64>,
    pub total: LatencyStats<f64>,
}

impl InsertionRow {
    /// Whether the mean decode plus insertion time fits the buffer window.
    pub fn realtime(&self, t_buffer_ms: u64) -> bool {
        self.total.mean_ms < t_buffer_ms as f64
    }

    pub fn per_message_ms(&self) -> f64 {
        if self.batch_size == 0 {
            0.0
        } else {
            self.total.mean_ms / self.batch_size as f64
        }
    }
}

pub fn run_insertion_bench(cfg: &BenchConfig) -> Result<Vec<InsertionRow>, String> {
    cfg.validate()?;
    let max = cfg.batch_sizes.iter().copied().max().unwrap_or(0);
    let corpus = synthetic_corpus(cfg.origin, max, cfg.seed);
    let mut rows = Vec::with_capacity(cfg.batch_sizes.len());
    for &batch in &cfg.batch_sizes {
        if batch == 0 {
            rows.push(InsertionRow {
                batch_size: 0,
                decode: LatencyStats::zero(),
                insertion: LatencyStats::zero(),
                total: LatencyStats::zero(),
            });
            continue;
        }
        let core = cfg.core(batch);
        let mut worker = FlushWorker::new(core.clone());
        let frames = &corpus[..batch];
        let (mut dec, mut ins, mut tot) = (Vec::new(), Vec::new(), Vec::new());
        for rep in 0..cfg.repetitions {
            let now = BENCH_EPOCH_MS + (rep as u64 + 1) * BATCH_INTERVAL_MS;
            let r = flush_batch(&core, &mut worker, frames, now);
            debug_assert_eq!(r.count, batch);
            dec.push(r.t_decode_ms);
            ins.push(r.t_insertion_ms);
            tot.push(r.total_ms());
        }
        let s = |v: &[f64]| summarize(v).map_err(|e| e.to_string());
        rows.push(InsertionRow { batch_size: batch, decode: s(&dec)?, insertion: s(&ins)?, total: s(&tot)? });
    }
    Ok(rows)
}

pub const INSERTION_CSV_HEADER: &str =
    "batch_size,decode_mean_ms,decode_std_ms,insertion_mean_ms,insertion_std_ms,total_mean_ms,total_p99_ms,realtime";

pub fn insertion_csv(rows: &[InsertionRow], t_buffer_ms: u64) -> String {
    let mut s = format!("{INSERTION_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
            r.batch_size,
            r.decode.mean_ms,
            r.decode.std_ms,
            r.insertion.mean_ms,
            r.insertion.std_ms,
            r.total.mean_ms,
            r.total.p99_ms,
            r.realtime(t_buffer_ms)
        );
    }
    s
}

/// Writes `insertion.csv`, one `insertion_cdf_b<N>.csv` per batch size and `insertion_meta.csv`.
pub fn write_insertion(dir: &Path, cfg: &BenchConfig, rows: &[InsertionRow]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("insertion.csv"), insertion_csv(rows, cfg.t_buffer_ms))?;
    for r in rows {
        fs::write(dir.join(format!("insertion_cdf_b{}.csv", r.batch_size)), r.total.cdf_csv())?;
    }
    fs::write(dir.join("insertion_meta.csv"), cfg.metadata_csv("insert"))
}

/// Target cells of the query bench: a block of cells three steps apart so
/// that no two are adjacent.
pub fn query_cells(n_cells: usize) -> Vec<CellId> {
    let side = (n_cells as f64).sqrt().ceil() as i32;
    (0..n_cells as i32).map(|i| CellId::new(3 * (i % side), 3 * (i / side) - side)).collect()
}

/// Box of ±`half_m` meters around `center`.
pub fn box_around(center: GeoPoint, half_m: f64) -> GeoBounds {
    let d = half_m / crate::geo::EARTH_RADIUS_M;
    let dlat = d.to_degrees();
    let dlon = (d / center.lat().to_radians().cos()).to_degrees();
    GeoBounds {
        lat_min: center.lat() - dlat,
        lat_max: center.lat() + dlat,
        lon_min: center.lon() - dlon,
        lon_max: center.lon() + dlon,
    }
}

/// Maximum distance of a query-bench vehicle from its cell center.
pub const QUERY_JITTER_M: f64 = 20.0;
/// Half side of the query-bench bounding box.
pub const QUERY_BOX_HALF_M: f64 = 30.0;

/// One batch for the query bench: vehicle `i` sits in cell `i % n` within
/// [`QUERY_JITTER_M`] of the center.
pub fn query_batch(
    grid: &HexGrid,
    cells: &[CellId],
    batch: usize,
    gen_time_ms: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<(TopicName, Bytes)> {
    (0..batch)
        .map(|i| {
            let cell = cells[i % cells.len()];
            let (cx, cy) = grid.project(grid.cell_center(cell).expect("cell in domain")).expect("in domain");
            let r = QUERY_JITTER_M * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            let p = grid.unproject(cx + r * a.cos(), cy + r * a.sin()).expect("in domain");
            let f = CamFields {
                station_id: i as u32 + 1,
                gen_time_ms,
                lat: p.lat(),
                lon: p.lon(),
                station_type: StationType::Car,
                heading_deg: rng.gen_range(0.0..360.0),
                speed_mps: rng.gen_range(5.0..20.0),
                accel_mps2: 0.0,
            };
            let raw = encode_fields(&f).expect("valid bench fields");
            (topics::feed(BENCH_MEC, cell).expect("valid topic"), Bytes::copy_from_slice(&raw))
        })
        .collect()
}

pub const QUERY_NAMES: [&str; 5] = ["q1", "q2", "q3", "q4", "q5"];

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub batch_size: usize,
    pub queries: [LatencyStats<f64>; 5],
    /// Result sizes of the last repetition.
    pub result_rows: [usize; 5],
    pub max_window_ms: u64,
}

impl QueryRow {
    pub fn mean(&self, q: usize) -> f64 {
        self.queries[q - 1].mean_ms
    }
}

pub fn run_query_bench(cfg: &BenchConfig) -> Result<Vec<QueryRow>, String> {
    cfg.validate()?;
    let grid = cfg.grid();
    let cells = query_cells(cfg.n_cells);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.batch_sizes.len());
    for &batch in &cfg.batch_sizes {
        let core = cfg.core(batch);
        let mut worker = FlushWorker::new(core.clone());
        let mut samples: [Vec<f64>; 5] = Default::default();
        let mut result_rows = [0usize; 5];
        let mut max_window_ms = 0;
        for rep in 0..cfg.repetitions {
            let now = BENCH_EPOCH_MS + (rep as u64 + 1) * BATCH_INTERVAL_MS;
            let frames = query_batch(&grid, &cells, batch, now, &mut rng);
            let report = flush_batch(&core, &mut worker, &frames, now);
            let window = MIN_QUERY_WINDOW_MS.max(report.t_insertion_ms.ceil() as u64);
            max_window_ms = max_window_ms.max(window);

            let target = cells[rep % cells.len()];
            let bbox = box_around(grid.cell_center(target).expect("cell in domain"), QUERY_BOX_HALF_M);
            let specs = [
                QuerySpec::latest_in_bbox(bbox),
                QuerySpec::latest_in_cell(target),
                QuerySpec::recent(window),
                QuerySpec::recent_in_bbox(window, bbox),
                QuerySpec::recent_in_cell(window, target),
            ];
            let store = core.store().read();
            for (k, spec) in specs.iter().enumerate() {
                let t = Instant::now();
                let rows = store.query(spec, now).map_err(|e| e.to_string())?;
                samples[k].push(t.elapsed().as_secs_f64() * 1e3);
                result_rows[k] = rows.len();
            }
        }
        let stats = |v: &[f64]| summarize(v).map_err(|e| e.to_string());
        out.push(QueryRow {
            batch_size: batch,
            queries: [
                stats(&samples[0])?,
                stats(&samples[1])?,
                stats(&samples[2])?,
                stats(&samples[3])?,
                stats(&samples[4])?,
            ],
            result_rows,
            max_window_ms,
        });
    }
    Ok(out)
}

pub fn query_csv(rows: &[QueryRow]) -> String {
    let mut s = String::from("batch_size");
    for q in QUERY_NAMES {
        let _ = write!(s, ",{q}_mean_ms,{q}_std_ms");
    }
    s.push_str(",max_window_ms\n");
    for r in rows {
        let _ = write!(s, "{}", r.batch_size);
        for q in &r.queries {
            let _ = write!(s, ",{:.4},{:.4}", q.mean_ms, q.std_ms);
        }
        let _ = writeln!(s, ",{}", r.max_window_ms);
    }
    s
}

/// Writes `query.csv`, `query_cdf_<q>_b1000.csv` when batch 1000 was run, and `query_meta.csv`.
pub fn write_query(dir: &Path, cfg: &BenchConfig, rows: &[QueryRow]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("query.csv"), query_csv(rows))?;
    if let Some(r) = rows.iter().find(|r| r.batch_size == 1000) {
        for (name, q) in QUERY_NAMES.iter().zip(&r.queries) {
            fs::write(dir.join(format!("query_cdf_{name}_b1000.csv")), q.cdf_csv())?;
        }
    }
    fs::write(dir.join("query_meta.csv"), cfg.metadata_csv("query"))
}
