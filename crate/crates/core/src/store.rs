//! In-memory time-series store for CAM points.
//!
//! Rows are appended in segments, one per inserted batch, and all rows of a
//! segment share the batch timestamp. Each segment carries a cell → row
//! index, and the store keeps the latest row per `(cell, station)`. Window
//! queries walk segments backwards from the newest; latest-per-vehicle
//! queries start from the per-cell latest index and only fall back to row
//! scans for cells that straddle a bounding box edge.

use std::collections::{hash_map::Entry, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;
use thiserror::Error;

use crate::cam::{CamMessage, StationType};
use crate::geo::{CellId, GeoBounds};
use crate::HexGrid;

pub const DEFAULT_MAX_ROWS: usize = 2_000_000;
pub const DEFAULT_MEMORY_BUDGET_BYTES: usize = 1024 * 1024;
pub const DEFAULT_RETENTION_WINDOW_MS: u64 = 60_000;
pub const DEFAULT_PRUNE_INTERVAL_MS: u64 = 1_000;

/// Slack, in degrees, when classifying a hexagon against a bounding box.
const BOUNDS_EPS_DEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredPoint {
    pub station_id: u32,
    pub ts_ms: u64,
    pub gen_time_ms: u64,
    pub lat: f64,
    pub lon: f64,
    pub station_type: StationType,
    pub heading_deg: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub cell: CellId,
}

impl StoredPoint {
    /// `ts_ms` is left at zero; the store stamps it on insertion.
    pub fn from_cam(m: &CamMessage) -> Self {
        Self {
            station_id: m.station_id,
            ts_ms: 0,
            gen_time_ms: m.gen_time_ms,
            lat: m.lat,
            lon: m.lon,
            station_type: m.station_type,
            heading_deg: m.heading_deg,
            speed_mps: m.speed_mps,
            accel_mps2: m.accel_mps2,
            cell: m.cell,
        }
    }

    pub fn write_csv(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{:.7},{:.7},{},{:.1},{:.2},{:.1},{}",
            self.station_id,
            self.ts_ms,
            self.gen_time_ms,
            self.lat,
            self.lon,
            self.station_type,
            self.heading_deg,
            self.speed_mps,
            self.accel_mps2,
            self.cell
        );
    }
}

impl StoredPoint {
    /// Inverse of [`StoredPoint::write_csv`] for one line without the newline.
    pub fn parse_csv(line: &str) -> Option<Self> {
        let mut it = line.trim_end().split(',');
        let mut next = || it.next();
        let p = Self {
            station_id: next()?.parse().ok()?,
            ts_ms: next()?.parse().ok()?,
            gen_time_ms: next()?.parse().ok()?,
            lat: next()?.parse().ok()?,
            lon: next()?.parse().ok()?,
            station_type: next()?.parse().ok()?,
            heading_deg: next()?.parse().ok()?,
            speed_mps: next()?.parse().ok()?,
            accel_mps2: next()?.parse().ok()?,
            cell: next()?.parse().ok()?,
        };
        next().is_none().then_some(p)
    }
}

/// Header of the live-row dump; names match [`StoredPoint`] fields.
pub const DUMP_CSV_HEADER: &str =
    "station_id,ts_ms,gen_time_ms,lat,lon,station_type,heading_deg,speed_mps,accel_mps2,cell";

pub fn rows_to_csv(header: &str, rows: &[StoredPoint]) -> String {
    let mut out = String::with_capacity(header.len() + 1 + rows.len() * 80);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        r.write_csv(&mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionConfig {
    pub window_ms: u64,
    pub prune_interval_ms: u64,
}

impl Default for RetentionConfig {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_RETENTION_WINDOW_MS,
            prune_interval_ms: DEFAULT_PRUNE_INTERVAL_MS,
        }
    }
}

impl RetentionConfig {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.window_ms < 1_000 {
            return Err(StoreError::InvalidConfig(format!(
                "retention window {} ms is below 1000 ms",
                self.window_ms
            )));
        }
        if self.prune_interval_ms == 0 || self.prune_interval_ms > self.window_ms {
            return Err(StoreError::InvalidConfig(format!(
                "prune interval {} ms must be in 1..={}",
                self.prune_interval_ms, self.window_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    LatestPerVehicle,
    AllPoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    None,
    BBox(GeoBounds<f64>),
    Cell(CellId),
}

impl Region {
    fn admits(&self, p: &StoredPoint) -> bool {
        match self {
            Region::None => true,
            Region::BBox(b) => b.contains(p.lat, p.lon),
            Region::Cell(c) => p.cell == *c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuerySpec {
    pub mode: QueryMode,
    pub time_window_ms: Option<u64>,
    pub region: Region,
}

impl QuerySpec {
    /// Query 1: latest row per vehicle inside a bounding box.
    pub fn latest_in_bbox(b: GeoBounds<f64>) -> Self {
        Self { mode: QueryMode::LatestPerVehicle, time_window_ms: None, region: Region::BBox(b) }
    }

    /// Query 2: latest row per vehicle inside a cell.
    pub fn latest_in_cell(c: CellId) -> Self {
        Self { mode: QueryMode::LatestPerVehicle, time_window_ms: None, region: Region::Cell(c) }
    }

    /// Query 3: every row inserted within the window.
    pub fn recent(window_ms: u64) -> Self {
        Self { mode: QueryMode::AllPoints, time_window_ms: Some(window_ms), region: Region::None }
    }

    /// Query 4.
    pub fn recent_in_bbox(window_ms: u64, b: GeoBounds<f64>) -> Self {
        Self { mode: QueryMode::AllPoints, time_window_ms: Some(window_ms), region: Region::BBox(b) }
    }

    /// Query 5.
    pub fn recent_in_cell(window_ms: u64, c: CellId) -> Self {
        Self { mode: QueryMode::AllPoints, time_window_ms: Some(window_ms), region: Region::Cell(c) }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.mode == QueryMode::LatestPerVehicle && self.region == Region::None {
            return Err(StoreError::InvalidSpec("latest_per_vehicle needs a region".into()));
        }
        if self.time_window_ms == Some(0) {
            return Err(StoreError::InvalidSpec("time window must be positive".into()));
        }
        if let Region::BBox(b) = self.region {
            if !(b.lat_min <= b.lat_max && b.lon_min <= b.lon_max) {
                return Err(StoreError::InvalidSpec(format!("empty bounding box {b:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("capacity exceeded: {live} live + {incoming} incoming > {max}")]
    CapacityExceeded { live: usize, incoming: usize, max: usize },
    #[error("invalid query: {0}")]
    InvalidSpec(String),
    #[error("insertion time {now_ms} precedes newest batch {newest_ms}")]
    StaleTimestamp { newest_ms: u64, now_ms: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertReport {
    pub count: usize,
    pub t_insertion_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreMetrics {
    pub last_insert_ms: f64,
    pub last_batch_size: usize,
    pub rows_live: usize,
    pub segments_live: usize,
    pub memory_budget_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    pub max_rows: usize,
    /// Working-set budget knob, recorded in metrics and benchmark metadata.
    pub memory_budget_bytes: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            max_rows: DEFAULT_MAX_ROWS,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct RowRef {
    seq: u64,
    idx: u32,
}

#[derive(Debug)]
struct Segment {
    seq: u64,
    ts_ms: u64,
    rows: Vec<StoredPoint>,
    by_cell: HashMap<CellId, Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Overlap {
    Disjoint,
    Inside,
    Partial,
}

fn classify(cell: &GeoBounds<f64>, q: &GeoBounds<f64>) -> Overlap {
    let e = BOUNDS_EPS_DEG;
    if cell.lat_max + e < q.lat_min
        || cell.lat_min - e > q.lat_max
        || cell.lon_max + e < q.lon_min
        || cell.lon_min - e > q.lon_max
    {
        Overlap::Disjoint
    } else if q.lat_min <= cell.lat_min - e
        && cell.lat_max + e <= q.lat_max
        && q.lon_min <= cell.lon_min - e
        && cell.lon_max + e <= q.lon_max
    {
        Overlap::Inside
    } else {
        Overlap::Partial
    }
}

/// Ordering key among rows of one station: newest batch, then newest
/// generation time, then latest insertion.
type LatestKey = (u64, u64, RowRef);

fn latest_key(p: &StoredPoint, r: RowRef) -> LatestKey {
    (p.ts_ms, p.gen_time_ms, r)
}

#[derive(Debug)]
pub struct EdmStore {
    grid: HexGrid,
    config: StoreConfig,
    segments: VecDeque<Segment>,
    next_seq: u64,
    rows_live: usize,
    latest_by_cell: HashMap<CellId, HashMap<u32, RowRef>>,
    cell_bounds: HashMap<CellId, GeoBounds<f64>>,
    last_insert_ms: f64,
    last_batch_size: usize,
}

pub type SharedStore = Arc<RwLock<EdmStore>>;

impl EdmStore {
    pub fn new(grid: HexGrid, config: StoreConfig) -> Self {
        Self {
            grid,
            config,
            segments: VecDeque::new(),
            next_seq: 0,
            rows_live: 0,
            latest_by_cell: HashMap::new(),
            cell_bounds: HashMap::new(),
            last_insert_ms: 0.0,
            last_batch_size: 0,
        }
    }

    pub fn shared(self) -> SharedStore {
        Arc::new(RwLock::new(self))
    }

    pub fn grid(&self) -> &HexGrid {
        &self.grid
    }

    pub fn rows_live(&self) -> usize {
        self.rows_live
    }

    pub fn metrics(&self) -> StoreMetrics {
        StoreMetrics {
            last_insert_ms: self.last_insert_ms,
            last_batch_size: self.last_batch_size,
            rows_live: self.rows_live,
            segments_live: self.segments.len(),
            memory_budget_bytes: self.config.memory_budget_bytes,
        }
    }

    fn segment(&self, seq: u64) -> &Segment {
        let front = self.segments.front().expect("row reference into empty store").seq;
        &self.segments[(seq - front) as usize]
    }

    fn row(&self, r: RowRef) -> &StoredPoint {
        &self.segment(r.seq).rows[r.idx as usize]
    }

    /// Appends one batch stamped with `now_ms`. All rows become visible together.
    pub fn insert_batch(
        &mut self,
        mut points: Vec<StoredPoint>,
        now_ms: u64,
    ) -> Result<InsertReport, StoreError> {
        let started = Instant::now();
        let count = points.len();
        if count == 0 {
            return Ok(InsertReport { count: 0, t_insertion_ms: 0.0 });
        }
        if self.rows_live + count > self.config.max_rows {
            return Err(StoreError::CapacityExceeded {
                live: self.rows_live,
                incoming: count,
                max: self.config.max_rows,
            });
        }
        if let Some(newest) = self.segments.back() {
            if now_ms < newest.ts_ms {
                return Err(StoreError::StaleTimestamp { newest_ms: newest.ts_ms, now_ms });
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;

        let mut by_cell: HashMap<CellId, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter_mut().enumerate() {
            p.ts_ms = now_ms;
            by_cell.entry(p.cell).or_default().push(i as u32);
        }
        let segments = &self.segments;
        let key_of = |r: RowRef| -> (u64, u64) {
            if r.seq == seq {
                (now_ms, points[r.idx as usize].gen_time_ms)
            } else {
                let seg = &segments[(r.seq - segments[0].seq) as usize];
                (seg.ts_ms, seg.rows[r.idx as usize].gen_time_ms)
            }
        };
        for (i, p) in points.iter().enumerate() {
            let new_ref = RowRef { seq, idx: i as u32 };
            let stations = self.latest_by_cell.entry(p.cell).or_default();
            match stations.entry(p.station_id) {
                Entry::Vacant(v) => {
                    v.insert(new_ref);
                }
                Entry::Occupied(mut o) => {
                    let old = *o.get();
                    let (old_ts, old_gen) = key_of(old);
                    if (now_ms, p.gen_time_ms, new_ref) >= (old_ts, old_gen, old) {
                        o.insert(new_ref);
                    }
                }
            }
        }
        for cell in by_cell.keys() {
            if !self.cell_bounds.contains_key(cell) {
                if let Ok(b) = self.grid.cell_bounds(*cell) {
                    self.cell_bounds.insert(*cell, b);
                }
            }
        }
        self.segments.push_back(Segment { seq, ts_ms: now_ms, rows: points, by_cell });
        self.rows_live += count;

        let t_insertion_ms = started.elapsed().as_secs_f64() * 1e3;
        self.last_insert_ms = t_insertion_ms;
        self.last_batch_size = count;
        Ok(InsertReport { count, t_insertion_ms })
    }

    /// Removes every row older than the retention window.
    pub fn prune(&mut self, now_ms: u64, cfg: &RetentionConfig) -> usize {
        let cutoff = now_ms.saturating_sub(cfg.window_ms);
        let mut removed = 0;
        while self.segments.front().is_some_and(|s| s.ts_ms < cutoff) {
            let seg = self.segments.pop_front().unwrap();
            for (i, p) in seg.rows.iter().enumerate() {
                let here = RowRef { seq: seg.seq, idx: i as u32 };
                if let Some(stations) = self.latest_by_cell.get_mut(&p.cell) {
                    if stations.get(&p.station_id) == Some(&here) {
                        stations.remove(&p.station_id);
                        if stations.is_empty() {
                            self.latest_by_cell.remove(&p.cell);
                        }
                    }
                }
            }
            removed += seg.rows.len();
        }
        self.rows_live -= removed;
        if self.latest_by_cell.len() < self.cell_bounds.len() / 2 {
            let live = &self.latest_by_cell;
            self.cell_bounds.retain(|c, _| live.contains_key(c));
        }
        removed
    }

    /// Segments whose batch timestamp falls within the window, oldest first.
    fn window_segments(&self, window_ms: Option<u64>, now_ms: u64) -> impl Iterator<Item = &Segment> {
        let start = match window_ms {
            None => 0,
            Some(w) => {
                let cutoff = now_ms.saturating_sub(w);
                self.segments.partition_point(|s| s.ts_ms < cutoff)
            }
        };
        self.segments.range(start..)
    }

    pub fn query(&self, spec: &QuerySpec, now_ms: u64) -> Result<Vec<StoredPoint>, StoreError> {
        spec.validate()?;
        let mut out = match (spec.mode, spec.time_window_ms, spec.region) {
            (QueryMode::AllPoints, window, Region::Cell(cell)) => {
                let mut out = Vec::new();
                for seg in self.window_segments(window, now_ms) {
                    if let Some(idxs) = seg.by_cell.get(&cell) {
                        out.extend(idxs.iter().map(|&i| seg.rows[i as usize]));
                    }
                }
                out
            }
            (QueryMode::AllPoints, window, region) => {
                let mut out = Vec::new();
                for seg in self.window_segments(window, now_ms) {
                    out.extend(seg.rows.iter().filter(|p| region.admits(p)).copied());
                }
                out
            }
            (QueryMode::LatestPerVehicle, None, Region::Cell(cell)) => self
                .latest_by_cell
                .get(&cell)
                .map(|stations| stations.values().map(|&r| *self.row(r)).collect())
                .unwrap_or_default(),
            (QueryMode::LatestPerVehicle, None, Region::BBox(b)) => self.latest_in_bbox(&b),
            (QueryMode::LatestPerVehicle, window, region) => {
                let mut best: HashMap<u32, (LatestKey, StoredPoint)> = HashMap::new();
                for seg in self.window_segments(window, now_ms) {
                    for (i, p) in seg.rows.iter().enumerate() {
                        if region.admits(p) {
                            offer(&mut best, p, RowRef { seq: seg.seq, idx: i as u32 });
                        }
                    }
                }
                best.into_values().map(|(_, p)| p).collect()
            }
        };
        out.sort_by_key(|p| (p.station_id, p.ts_ms));
        Ok(out)
    }

    fn latest_in_bbox(&self, b: &GeoBounds<f64>) -> Vec<StoredPoint> {
        let mut best: HashMap<u32, (LatestKey, StoredPoint)> = HashMap::new();
        for (cell, stations) in &self.latest_by_cell {
            let overlap = self
                .cell_bounds
                .get(cell)
                .map_or(Overlap::Partial, |cb| classify(cb, b));
            match overlap {
                Overlap::Disjoint => {}
                Overlap::Inside => {
                    for &r in stations.values() {
                        offer(&mut best, self.row(r), r);
                    }
                }
                Overlap::Partial => {
                    for seg in &self.segments {
                        let Some(idxs) = seg.by_cell.get(cell) else { continue };
                        for &i in idxs {
                            let p = &seg.rows[i as usize];
                            if b.contains(p.lat, p.lon) {
                                offer(&mut best, p, RowRef { seq: seg.seq, idx: i });
                            }
                        }
                    }
                }
            }
        }
        best.into_values().map(|(_, p)| p).collect()
    }

    /// Every live row in insertion order.
    pub fn live_rows(&self) -> impl Iterator<Item = &StoredPoint> {
        self.segments.iter().flat_map(|s| s.rows.iter())
    }
}

fn offer(best: &mut HashMap<u32, (LatestKey, StoredPoint)>, p: &StoredPoint, r: RowRef) {
    let key = latest_key(p, r);
    match best.entry(p.station_id) {
        Entry::Vacant(v) => {
            v.insert((key, *p));
        }
        Entry::Occupied(mut o) => {
            if key > o.get().0 {
                o.insert((key, *p));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::GeoPoint;

    fn grid() -> HexGrid {
        HexGrid::with_default_area(GeoPoint::new(40.0, -3.7).unwrap()).unwrap()
    }

    fn point(g: &HexGrid, station_id: u32, gen: u64, lat: f64, lon: f64) -> StoredPoint {
        StoredPoint {
            station_id,
            ts_ms: 0,
            gen_time_ms: gen,
            lat,
            lon,
            station_type: StationType::Car,
            heading_deg: 0.0,
            speed_mps: 10.0,
            accel_mps2: 0.0,
            cell: g.cell_of(GeoPoint::new(lat, lon).unwrap()).unwrap(),
        }
    }

    fn store() -> EdmStore {
        EdmStore::new(grid(), StoreConfig::default())
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut s = store();
        let r = s.insert_batch(Vec::new(), 10).unwrap();
        assert_eq!(r.count, 0);
        assert_eq!(r.t_insertion_ms, 0.0);
        assert_eq!(s.metrics().segments_live, 0);
    }

    #[test]
    fn inserted_rows_visible() {
        let g = grid();
        let mut s = store();
        let pts: Vec<_> = (0..100).map(|i| point(&g, i, 1, 40.0 + i as f64 * 1e-4, -3.7)).collect();
        s.insert_batch(pts, 5_000).unwrap();
        let all = s
            .query(&QuerySpec { mode: QueryMode::AllPoints, time_window_ms: None, region: Region::None }, 5_000)
            .unwrap();
        assert_eq!(all.len(), 100);
        assert!(all.iter().all(|p| p.ts_ms == 5_000));
    }

    #[test]
    fn empty_store_queries() {
        let s = store();
        let b = GeoBounds { lat_min: 39.0, lat_max: 41.0, lon_min: -4.0, lon_max: -3.0 };
        for spec in [
            QuerySpec::latest_in_bbox(b),
            QuerySpec::latest_in_cell(CellId::new(0, 0)),
            QuerySpec::recent(100),
            QuerySpec::recent_in_bbox(100, b),
            QuerySpec::recent_in_cell(100, CellId::new(0, 0)),
        ] {
            assert!(s.query(&spec, 1_000).unwrap().is_empty());
        }
    }

    #[test]
    fn invalid_specs() {
        let s = store();
        let bad = [
            QuerySpec { mode: QueryMode::LatestPerVehicle, time_window_ms: None, region: Region::None },
            QuerySpec::recent(0),
            QuerySpec::recent_in_bbox(10, GeoBounds { lat_min: 1.0, lat_max: 0.0, lon_min: 0.0, lon_max: 1.0 }),
        ];
        for spec in bad {
            assert!(matches!(s.query(&spec, 0), Err(StoreError::InvalidSpec(_))));
        }
    }

    #[test]
    fn capacity_and_stale_time() {
        let g = grid();
        let mut s = EdmStore::new(g, StoreConfig { max_rows: 3, ..Default::default() });
        s.insert_batch(vec![point(&g, 1, 1, 40.0, -3.7); 2], 100).unwrap();
        assert!(matches!(
            s.insert_batch(vec![point(&g, 1, 1, 40.0, -3.7); 2], 200),
            Err(StoreError::CapacityExceeded { live: 2, incoming: 2, max: 3 })
        ));
        assert!(matches!(
            s.insert_batch(vec![point(&g, 1, 1, 40.0, -3.7)], 50),
            Err(StoreError::StaleTimestamp { .. })
        ));
        assert_eq!(s.rows_live(), 2);
    }

    #[test]
    fn prune_window() {
        let g = grid();
        let mut s = store();
        let cfg = RetentionConfig::default();
        s.insert_batch((0..100).map(|i| point(&g, i, 1, 40.0, -3.7)).collect(), 1_000).unwrap();
        assert_eq!(s.prune(1_000 + cfg.window_ms, &cfg), 0);
        assert_eq!(s.prune(1_000 + cfg.window_ms + 1, &cfg), 100);
        assert_eq!(s.rows_live(), 0);
        assert!(s.query(&QuerySpec::latest_in_cell(CellId::new(0, 0)), 70_000).unwrap().is_empty());
        assert_eq!(s.prune(1_000 + cfg.window_ms + 1, &cfg), 0);
    }

    #[test]
    fn latest_tie_breaks() {
        let g = grid();
        let mut s = store();
        let a = point(&g, 7, 10, 40.0, -3.7);
        let b = point(&g, 7, 30, 40.0, -3.7);
        let c = point(&g, 7, 20, 40.0, -3.7);
        s.insert_batch(vec![a, b, c], 100).unwrap();
        let cell = a.cell;
        let got = s.query(&QuerySpec::latest_in_cell(cell), 100).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].gen_time_ms, 30);
        // a newer batch wins even with an older generation time
        s.insert_batch(vec![point(&g, 7, 5, 40.0, -3.7)], 200).unwrap();
        let got = s.query(&QuerySpec::latest_in_cell(cell), 200).unwrap();
        assert_eq!((got[0].ts_ms, got[0].gen_time_ms), (200, 5));
    }

    #[test]
    fn bbox_latest_uses_last_row_inside_box() {
        let g = grid();
        let mut s = store();
        let inside = point(&g, 1, 1, 40.0, -3.7);
        let outside = point(&g, 1, 2, 40.01, -3.7);
        s.insert_batch(vec![inside], 100).unwrap();
        s.insert_batch(vec![outside], 200).unwrap();
        let b = GeoBounds { lat_min: 39.9999, lat_max: 40.0001, lon_min: -3.7001, lon_max: -3.6999 };
        let got = s.query(&QuerySpec::latest_in_bbox(b), 200).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].ts_ms, 100);
    }

    #[test]
    fn window_boundary_inclusive() {
        let g = grid();
        let mut s = store();
        s.insert_batch(vec![point(&g, 1, 1, 40.0, -3.7)], 100).unwrap();
        s.insert_batch(vec![point(&g, 2, 1, 40.0, -3.7)], 200).unwrap();
        assert_eq!(s.query(&QuerySpec::recent(100), 200).unwrap().len(), 2);
        assert_eq!(s.query(&QuerySpec::recent(99), 200).unwrap().len(), 1);
    }

    #[test]
    fn csv_rows() {
        let g = grid();
        let mut p = point(&g, 3, 17, 40.0, -3.7);
        p.ts_ms = 20;
        let csv = rows_to_csv(DUMP_CSV_HEADER, &[p]);
        assert_eq!(
            csv,
            format!("{DUMP_CSV_HEADER}\n3,20,17,40.0000000,-3.7000000,car,0.0,10.00,0.0,{}\n", p.cell)
        );
    }
}
