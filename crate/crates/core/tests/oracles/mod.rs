//! Reference implementations written independently of the crate's fast
//! paths. Each one favors obviousness over speed.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use edm_core::store::{QueryMode, QuerySpec, Region, StoredPoint};
use edm_core::{CellId, GeoPoint};

pub const R_EARTH: f64 = 6_371_008.8;

pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * R_EARTH * h.sqrt().min(1.0).asin()
}

pub fn pt(p: GeoPoint) -> (f64, f64) {
    (p.lat(), p.lon())
}

// ---------------------------------------------------------------- hex grid

/// Pointy-top hexagons on an equirectangular plane about `origin`.
pub struct HexOracle {
    lat0: f64,
    lon0: f64,
    edge: f64,
}

impl HexOracle {
    pub fn new(origin: (f64, f64), area_m2: f64) -> Self {
        Self { lat0: origin.0, lon0: origin.1, edge: (2.0 * area_m2 / (3.0 * 3f64.sqrt())).sqrt() }
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn xy(&self, p: (f64, f64)) -> (f64, f64) {
        (
            R_EARTH * (p.1 - self.lon0).to_radians() * self.lat0.to_radians().cos(),
            R_EARTH * (p.0 - self.lat0).to_radians(),
        )
    }

    pub fn center(&self, c: CellId) -> (f64, f64) {
        let w = 3f64.sqrt() * self.edge;
        (w * (c.q as f64 + c.r as f64 / 2.0), 1.5 * self.edge * c.r as f64)
    }

    pub fn polygon(&self, c: CellId) -> Vec<(f64, f64)> {
        let (cx, cy) = self.center(c);
        (0..6)
            .map(|k| {
                let a = (30.0 + 60.0 * k as f64).to_radians();
                (cx + self.edge * a.cos(), cy + self.edge * a.sin())
            })
            .collect()
    }

    /// Point-in-convex-polygon with a slack of `eps_m` meters.
    pub fn contains(&self, c: CellId, p: (f64, f64), eps_m: f64) -> bool {
        let (x, y) = self.xy(p);
        let poly = self.polygon(c);
        (0..6).all(|i| {
            let (ax, ay) = poly[i];
            let (bx, by) = poly[(i + 1) % 6];
            let len = (bx - ax).hypot(by - ay);
            ((bx - ax) * (y - ay) - (by - ay) * (x - ax)) / len >= -eps_m
        })
    }

    /// Cells whose center is within `radius` of `center`, by exhaustive scan
    /// of a generous square of axial coordinates.
    pub fn disc(&self, center: (f64, f64), radius: f64, to_geo: impl Fn(f64, f64) -> (f64, f64)) -> BTreeSet<CellId> {
        let (x, y) = self.xy(center);
        let span = (radius / self.edge) as i32 + 4;
        let r0 = (y / (1.5 * self.edge)).round() as i32;
        let q0 = (x / (3f64.sqrt() * self.edge)).round() as i32 - r0 / 2;
        let mut out = BTreeSet::new();
        for r in r0 - span..=r0 + span {
            for q in q0 - 2 * span..=q0 + 2 * span {
                let c = CellId::new(q, r);
                let (cx, cy) = self.center(c);
                if haversine(center, to_geo(cx, cy)) <= radius {
                    out.insert(c);
                }
            }
        }
        out
    }

    pub fn to_geo(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.lat0 + (y / R_EARTH).to_degrees(),
            self.lon0 + (x / (R_EARTH * self.lat0.to_radians().cos())).to_degrees(),
        )
    }
}

// ---------------------------------------------------------------- topics

/// Recursive matcher: `+` is one segment, trailing `#` is one or more.
pub fn topic_match(filter: &[&str], topic: &[&str]) -> bool {
    match (filter.split_first(), topic.split_first()) {
        (None, None) => true,
        (Some((&"#", rest)), Some(_)) => rest.is_empty(),
        (Some((&"+", f)), Some((_, t))) => topic_match(f, t),
        (Some((l, f)), Some((s, t))) => l == s && topic_match(f, t),
        _ => false,
    }
}

/// Every string of `1..=max_len` segments over `alphabet` joined by `/`.
pub fn all_paths(alphabet: &[&str], max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &layer {
            for a in alphabet {
                let mut p = prefix.clone();
                p.push(a);
                out.push(p.join("/"));
                next.push(p);
            }
        }
        layer = next;
    }
    out
}

// ---------------------------------------------------------------- store

/// Keeps every inserted row in a flat list; queries are linear scans.
#[derive(Default)]
pub struct StoreOracle {
    rows: Vec<StoredPoint>,
}

impl StoreOracle {
    pub fn insert(&mut self, batch: &[StoredPoint], ts_ms: u64) {
        self.rows.extend(batch.iter().map(|p| StoredPoint { ts_ms, ..*p }));
    }

    pub fn prune(&mut self, now_ms: u64, window_ms: u64) -> usize {
        let cutoff = now_ms.saturating_sub(window_ms);
        let before = self.rows.len();
        self.rows.retain(|p| p.ts_ms >= cutoff);
        before - self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn query(&self, spec: &QuerySpec, now_ms: u64) -> Vec<StoredPoint> {
        let in_region = |p: &StoredPoint| match spec.region {
            Region::None => true,
            Region::Cell(c) => p.cell == c,
            Region::BBox(b) => b.lat_min <= p.lat && p.lat <= b.lat_max && b.lon_min <= p.lon && p.lon <= b.lon_max,
        };
        let in_window = |p: &StoredPoint| spec.time_window_ms.is_none_or(|w| p.ts_ms >= now_ms.saturating_sub(w));
        let hits: Vec<(usize, StoredPoint)> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(_, p)| in_region(p) && in_window(p))
            .map(|(i, p)| (i, *p))
            .collect();
        let mut out: Vec<StoredPoint> = match spec.mode {
            QueryMode::AllPoints => hits.into_iter().map(|(_, p)| p).collect(),
            QueryMode::LatestPerVehicle => {
                let mut best: BTreeMap<u32, (u64, u64, usize, StoredPoint)> = BTreeMap::new();
                for (i, p) in hits {
                    let key = (p.ts_ms, p.gen_time_ms, i, p);
                    let e = best.entry(p.station_id).or_insert(key);
                    if (key.0, key.1, key.2) > (e.0, e.1, e.2) {
                        *e = key;
                    }
                }
                best.into_values().map(|(_, _, _, p)| p).collect()
            }
        };
        out.sort_by_key(|p| (p.station_id, p.ts_ms));
        out
    }
}

// ---------------------------------------------------------------- registry

#[derive(Debug, Clone)]
pub struct MecSpec {
    pub id: String,
    pub pos: (f64, f64),
    pub r_oper: f64,
}

/// Covered-then-nearest; distances within a micrometer tie, going to the
/// smaller id.
pub fn best_mec(p: (f64, f64), mecs: &[MecSpec]) -> Option<String> {
    let dist: Vec<(f64, &MecSpec)> = mecs.iter().map(|m| (haversine(p, m.pos), m)).collect();
    let covered: Vec<&(f64, &MecSpec)> = dist.iter().filter(|(d, m)| *d <= m.r_oper).collect();
    let pool: Vec<&(f64, &MecSpec)> = if covered.is_empty() { dist.iter().collect() } else { covered };
    let nearest = pool.iter().map(|(d, _)| *d).fold(f64::INFINITY, f64::min);
    pool.iter()
        .filter(|(d, _)| *d <= nearest + 1e-6)
        .map(|(_, m)| m.id.clone())
        .min()
}

pub fn neighbor_relation(mecs: &[MecSpec]) -> BTreeMap<String, BTreeSet<String>> {
    let mut rel: BTreeMap<String, BTreeSet<String>> = mecs.iter().map(|m| (m.id.clone(), BTreeSet::new())).collect();
    for a in mecs {
        for b in mecs {
            if a.id != b.id && haversine(a.pos, b.pos) < a.r_oper + b.r_oper {
                rel.get_mut(&a.id).unwrap().insert(b.id.clone());
            }
        }
    }
    rel
}

// ---------------------------------------------------------------- codec

/// Field values after a wire round trip, from the documented quantization.
/// `lon` must already lie in `[-180, 180)`.
pub fn quantized(lat: f64, lon: f64, heading: f64, speed: f64, accel: f64) -> (f64, f64, f64, f64, f64) {
    let lon_q = (lon * 1e7).round().clamp(-1.8e9, 1.8e9 - 1.0) / 1e7;
    let heading_q = ((heading * 10.0).round() % 3600.0) / 10.0;
    (
        (lat * 1e7).round() / 1e7,
        lon_q,
        heading_q,
        (speed * 100.0).round() / 100.0,
        (accel * 10.0).round() / 10.0,
    )
}
