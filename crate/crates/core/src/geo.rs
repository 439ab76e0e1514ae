//! Planar hexagonal geoindex.
//!
//! Points are projected onto a local equirectangular plane centred on a
//! deployment-wide origin (longitude scaled by the cosine of the origin
//! latitude) and binned into a pointy-top axial hexagon grid whose cell area
//! is fixed by configuration. Every process of one deployment must share the
//! same [`HexGrid`] because encoded cell ids travel inside topic names.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive};
use thiserror::Error;

/// Scalar type the geometry is generic over.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

/// Mean Earth radius used by both the projection and the haversine distance.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Latitudes at or beyond this magnitude are outside the projection domain.
pub const MAX_PROJECTION_LAT: f64 = 85.0;

/// Default cell area in square meters.
pub const DEFAULT_CELL_AREA_M2: f64 = 15_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("latitude {lat} outside projection domain (|lat| < {MAX_PROJECTION_LAT})")]
    OutOfProjectionDomain { lat: f64 },
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed cell id {0:?}")]
    BadCellEncoding(String),
}

/// WGS-84 position in degrees. Longitude is normalized to `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeoPoint<T> {
    lat: T,
    lon: T,
}

impl<T: Scalar> GeoPoint<T> {
    pub fn new(lat: T, lon: T) -> Result<Self, GeoError> {
        let ninety: T = lit(90.0);
        let one_eighty: T = lit(180.0);
        if !lat.is_finite() || !lon.is_finite() || lat.abs() > ninety || lon.abs() > one_eighty {
            return Err(GeoError::InvalidCoordinate {
                lat: lat.to_f64().unwrap_or(f64::NAN),
                lon: lon.to_f64().unwrap_or(f64::NAN),
            });
        }
        let lon = if lon == one_eighty { -one_eighty } else { lon };
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> T {
        self.lat
    }

    pub fn lon(&self) -> T {
        self.lon
    }
}

impl<T: Scalar> fmt::Display for GeoPoint<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m<T: Scalar>(a: GeoPoint<T>, b: GeoPoint<T>) -> T {
    let two: T = lit(2.0);
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / two).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / two).sin().powi(2);
    let h = h.min(T::one()).max(T::zero());
    two * lit::<T>(EARTH_RADIUS_M) * h.sqrt().asin()
}

/// Axial hexagon coordinate. Encoded as `h{q}_{r}` in decimal with an `m`
/// prefix on negative components, e.g. `h3_m2` for `q = 3, r = -2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub q: i32,
    pub r: i32,
}

const AXIAL_DIRECTIONS: [(i32, i32); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

impl CellId {
    pub const fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    pub fn encoded(&self) -> String {
        self.to_string()
    }

    /// The six edge-adjacent cells.
    pub fn neighbors(&self) -> [CellId; 6] {
        AXIAL_DIRECTIONS.map(|(dq, dr)| CellId::new(self.q + dq, self.r + dr))
    }

    /// Hex (ring) distance in cells.
    pub fn grid_distance(&self, other: &CellId) -> u32 {
        let dq = (self.q - other.q) as i64;
        let dr = (self.r - other.r) as i64;
        ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
    }
}

fn write_signed(f: &mut fmt::Formatter<'_>, v: i32) -> fmt::Result {
    if v < 0 {
        write!(f, "m{}", v.unsigned_abs())
    } else {
        write!(f, "{v}")
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("h")?;
        write_signed(f, self.q)?;
        f.write_str("_")?;
        write_signed(f, self.r)
    }
}

fn parse_signed(s: &str) -> Option<i32> {
    let (neg, digits) = match s.strip_prefix('m') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // canonical form only: no leading zeros, no "m0"
    if digits.len() > 1 && digits.starts_with('0') || neg && digits == "0" {
        return None;
    }
    let magnitude: i64 = digits.parse().ok()?;
    let v = if neg { -magnitude } else { magnitude };
    i32::try_from(v).ok()
}

impl FromStr for CellId {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeoError::BadCellEncoding(s.to_owned());
        let body = s.strip_prefix('h').ok_or_else(bad)?;
        let (q, r) = body.split_once('_').ok_or_else(bad)?;
        Ok(CellId::new(
            parse_signed(q).ok_or_else(bad)?,
            parse_signed(r).ok_or_else(bad)?,
        ))
    }
}

/// Latitude/longitude bounding box, inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBounds<T> {
    pub lat_min: T,
    pub lat_max: T,
    pub lon_min: T,
    pub lon_max: T,
}

impl<T: Scalar> GeoBounds<T> {
    pub fn contains(&self, lat: T, lon: T) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

/// Deployment-wide hex grid configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexGrid<T> {
    origin: GeoPoint<T>,
    cell_area_m2: T,
    /// Center-to-vertex distance, equal to the edge length.
    edge_m: T,
    cos_origin_lat: T,
}

impl<T: Scalar> HexGrid<T> {
    pub fn new(origin: GeoPoint<T>, cell_area_m2: T) -> Result<Self, GeoError> {
        if cell_area_m2.is_nan() || cell_area_m2 <= T::zero() || !cell_area_m2.is_finite() {
            return Err(GeoError::InvalidConfig(format!(
                "cell area must be positive, got {cell_area_m2}"
            )));
        }
        if origin.lat.abs() >= lit(MAX_PROJECTION_LAT) {
            return Err(GeoError::OutOfProjectionDomain {
                lat: origin.lat.to_f64().unwrap_or(f64::NAN),
            });
        }
        // regular hexagon: area = 3√3/2 · s²
        let edge_m = (lit::<T>(2.0) * cell_area_m2 / (lit::<T>(3.0) * lit::<T>(3.0).sqrt())).sqrt();
        Ok(Self {
            origin,
            cell_area_m2,
            edge_m,
            cos_origin_lat: origin.lat.to_radians().cos(),
        })
    }

    pub fn with_default_area(origin: GeoPoint<T>) -> Result<Self, GeoError> {
        Self::new(origin, lit(DEFAULT_CELL_AREA_M2))
    }

    pub fn origin(&self) -> GeoPoint<T> {
        self.origin
    }

    pub fn cell_area_m2(&self) -> T {
        self.cell_area_m2
    }

    pub fn edge_m(&self) -> T {
        self.edge_m
    }

    /// Distance between the centers of two adjacent cells (also the
    /// edge-to-edge width of one cell).
    pub fn center_spacing_m(&self) -> T {
        lit::<T>(3.0).sqrt() * self.edge_m
    }

    /// Projects onto the local plane: x east, y north, meters.
    pub fn project(&self, p: GeoPoint<T>) -> Result<(T, T), GeoError> {
        if p.lat.abs() >= lit(MAX_PROJECTION_LAT) {
            return Err(GeoError::OutOfProjectionDomain {
                lat: p.lat.to_f64().unwrap_or(f64::NAN),
            });
        }
        let r: T = lit(EARTH_RADIUS_M);
        let mut dlon = p.lon - self.origin.lon;
        let (half, full): (T, T) = (lit(180.0), lit(360.0));
        if dlon >= half {
            dlon = dlon - full;
        } else if dlon < -half {
            dlon = dlon + full;
        }
        let x = r * dlon.to_radians() * self.cos_origin_lat;
        let y = r * (p.lat - self.origin.lat).to_radians();
        Ok((x, y))
    }

    pub fn unproject(&self, x: T, y: T) -> Result<GeoPoint<T>, GeoError> {
        let r: T = lit(EARTH_RADIUS_M);
        let lat = self.origin.lat + (y / r).to_degrees();
        if !lat.is_finite() || lat.abs() >= lit(MAX_PROJECTION_LAT) {
            return Err(GeoError::OutOfProjectionDomain {
                lat: lat.to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut lon = self.origin.lon + (x / (r * self.cos_origin_lat)).to_degrees();
        let (half, full): (T, T) = (lit(180.0), lit(360.0));
        while lon >= half {
            lon = lon - full;
        }
        while lon < -half {
            lon = lon + full;
        }
        GeoPoint::new(lat, lon)
    }

    fn center_xy(&self, c: CellId) -> (T, T) {
        let q = T::from_i32(c.q).unwrap();
        let r = T::from_i32(c.r).unwrap();
        let half: T = lit(0.5);
        let x = self.center_spacing_m() * (q + r * half);
        let y = lit::<T>(1.5) * self.edge_m * r;
        (x, y)
    }

    /// Hexagonal norm of `(x, y)` relative to the center of `c`: `<= 1`
    /// exactly when the point lies in the closed hexagon.
    fn hex_norm(&self, c: CellId, x: T, y: T) -> T {
        let (cx, cy) = self.center_xy(c);
        let (dx, dy) = (x - cx, y - cy);
        let half: T = lit(0.5);
        let s3h: T = lit::<T>(3.0).sqrt() * half;
        let a = dx.abs();
        let b = (dx * half + dy * s3h).abs();
        let d = (-dx * half + dy * s3h).abs();
        a.max(b).max(d) / (s3h * self.edge_m)
    }

    fn cell_of_xy(&self, x: T, y: T) -> CellId {
        let third: T = lit(1.0 / 3.0);
        let fq = (lit::<T>(3.0).sqrt() * third * x - third * y) / self.edge_m;
        let fr = (lit::<T>(2.0) * third * y) / self.edge_m;
        let rounded = cube_round(fq, fr);

        let mut best = rounded;
        let mut best_norm = self.hex_norm(rounded, x, y);
        for n in rounded.neighbors() {
            let norm = self.hex_norm(n, x, y);
            if norm < best_norm {
                best = n;
                best_norm = norm;
            }
        }
        // boundary points: every candidate within tolerance of the minimum
        // competes and the smaller encoding wins
        let tol: T = lit(1e-9);
        let mut winner = best;
        let mut winner_key = best.encoded();
        for cand in std::iter::once(rounded).chain(rounded.neighbors()) {
            if cand != winner && self.hex_norm(cand, x, y) <= best_norm + tol {
                let key = cand.encoded();
                if key < winner_key {
                    winner = cand;
                    winner_key = key;
                }
            }
        }
        winner
    }

    /// The cell containing `p`.
    pub fn cell_of(&self, p: GeoPoint<T>) -> Result<CellId, GeoError> {
        let (x, y) = self.project(p)?;
        Ok(self.cell_of_xy(x, y))
    }

    /// Whether `p` lies in the closed hexagon of `c`.
    pub fn contains(&self, c: CellId, p: GeoPoint<T>) -> Result<bool, GeoError> {
        let (x, y) = self.project(p)?;
        Ok(self.hex_norm(c, x, y) <= T::one() + lit(1e-9))
    }

    pub fn cell_center(&self, c: CellId) -> Result<GeoPoint<T>, GeoError> {
        let (x, y) = self.center_xy(c);
        self.unproject(x, y)
    }

    /// Hexagon vertices, counter-clockwise starting at the east-north-east corner.
    pub fn cell_vertices(&self, c: CellId) -> Result<[GeoPoint<T>; 6], GeoError> {
        let (cx, cy) = self.center_xy(c);
        let mut out = [GeoPoint::default(); 6];
        for (k, slot) in out.iter_mut().enumerate() {
            let angle = lit::<T>(30.0 + 60.0 * k as f64).to_radians();
            *slot = self.unproject(cx + self.edge_m * angle.cos(), cy + self.edge_m * angle.sin())?;
        }
        Ok(out)
    }

    /// Lat/lon bounding box of the hexagon. Exact because the projection is affine.
    pub fn cell_bounds(&self, c: CellId) -> Result<GeoBounds<T>, GeoError> {
        let v = self.cell_vertices(c)?;
        let mut b = GeoBounds {
            lat_min: v[0].lat,
            lat_max: v[0].lat,
            lon_min: v[0].lon,
            lon_max: v[0].lon,
        };
        for p in &v[1..] {
            b.lat_min = b.lat_min.min(p.lat);
            b.lat_max = b.lat_max.max(p.lat);
            b.lon_min = b.lon_min.min(p.lon);
            b.lon_max = b.lon_max.max(p.lon);
        }
        Ok(b)
    }

    /// Every cell whose center lies within `radius_m` (haversine) of `center`.
    pub fn cells_in_disc(&self, center: GeoPoint<T>, radius_m: T) -> BTreeSet<CellId> {
        let mut out = BTreeSet::new();
        if radius_m.is_nan() || radius_m < T::zero() {
            return out;
        }
        let Ok(home) = self.cell_of(center) else {
            return out;
        };
        // projection distortion stays well below one cell over a MEC region
        let rings = (radius_m / self.center_spacing_m())
            .ceil()
            .to_i32()
            .unwrap_or(0)
            .saturating_add(2);
        for dq in -rings..=rings {
            let lo = (-rings).max(-dq - rings);
            let hi = rings.min(-dq + rings);
            for dr in lo..=hi {
                let c = CellId::new(home.q + dq, home.r + dr);
                if let Ok(cc) = self.cell_center(c) {
                    if haversine_m(center, cc) <= radius_m {
                        out.insert(c);
                    }
                }
            }
        }
        out
    }
}

fn cube_round<T: Scalar>(fq: T, fr: T) -> CellId {
    let fs = -fq - fr;
    let (mut q, mut r, s) = (fq.round(), fr.round(), fs.round());
    let (dq, dr, ds) = ((q - fq).abs(), (r - fr).abs(), (s - fs).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    CellId::new(q.to_i32().unwrap_or(0), r.to_i32().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> HexGrid<f64> {
        HexGrid::with_default_area(GeoPoint::new(52.52, 13.40).unwrap()).unwrap()
    }

    #[test]
    fn origin_maps_to_origin_cell() {
        let g = grid();
        assert_eq!(g.cell_of(g.origin()).unwrap(), CellId::new(0, 0));
        let c = g.cell_center(CellId::new(0, 0)).unwrap();
        assert!((c.lat() - 52.52).abs() < 1e-12 && (c.lon() - 13.40).abs() < 1e-12);
    }

    #[test]
    fn nearby_points_share_a_cell() {
        let g = grid();
        let c = g.cell_center(CellId::new(4, -7)).unwrap();
        // ~1 m north
        let p = GeoPoint::new(c.lat() + 1.0 / 111_195.0, c.lon()).unwrap();
        assert_eq!(g.cell_of(c).unwrap(), g.cell_of(p).unwrap());
    }

    #[test]
    fn out_of_domain_latitude() {
        let g = grid();
        let p = GeoPoint::new(85.0, 0.0).unwrap();
        assert!(matches!(
            g.cell_of(p),
            Err(GeoError::OutOfProjectionDomain { .. })
        ));
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn longitude_normalized() {
        assert_eq!(GeoPoint::new(0.0, 180.0).unwrap().lon(), -180.0);
    }

    #[test]
    fn origin_neighbors() {
        let n: BTreeSet<_> = CellId::new(0, 0).neighbors().into_iter().collect();
        let want: BTreeSet<_> = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]
            .into_iter()
            .map(|(q, r)| CellId::new(q, r))
            .collect();
        assert_eq!(n, want);
    }

    #[test]
    fn neighbor_symmetry_and_irreflexive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = CellId::new(rng.gen_range(-5000..5000), rng.gen_range(-5000..5000));
            let ns = c.neighbors();
            assert!(!ns.contains(&c));
            assert_eq!(ns.iter().collect::<BTreeSet<_>>().len(), 6);
            for n in ns {
                assert!(n.neighbors().contains(&c));
                assert_eq!(c.grid_distance(&n), 1);
            }
        }
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(CellId::new(3, -2).encoded(), "h3_m2");
        assert_eq!(CellId::new(0, 0).encoded(), "h0_0");
        assert_eq!("hm15_7".parse::<CellId>().unwrap(), CellId::new(-15, 7));
        for bad in ["", "h", "h1", "h1_", "x1_2", "h01_2", "hm0_1", "h1_2_3", "h-1_2", "h+1_2"] {
            assert!(bad.parse::<CellId>().is_err(), "{bad}");
        }
        let extreme = CellId::new(i32::MIN, i32::MAX);
        assert_eq!(extreme.encoded().parse::<CellId>().unwrap(), extreme);
    }

    #[test]
    fn default_geometry() {
        let g = grid();
        // edge-to-edge width of a 15,000 m² hexagon
        let width = g.center_spacing_m();
        assert!((width - 131.6).abs() < 0.1, "{width}");
        assert!(width <= 135.0);
        assert!((g.edge_m() - 75.98).abs() < 0.01);
    }

    #[test]
    fn adjacent_centers_spacing() {
        let g = grid();
        let d = g.center_spacing_m();
        let c0 = g.cell_center(CellId::new(10, -3)).unwrap();
        for n in CellId::new(10, -3).neighbors() {
            let dist = haversine_m(c0, g.cell_center(n).unwrap());
            assert!(dist > 0.9 * d && dist < 1.1 * d, "{dist}");
        }
    }

    #[test]
    fn zero_radius_disc() {
        let g = grid();
        let c = g.cell_center(CellId::new(2, 2)).unwrap();
        let disc = g.cells_in_disc(c, 0.0);
        assert_eq!(disc.into_iter().collect::<Vec<_>>(), vec![CellId::new(2, 2)]);
        let off = GeoPoint::new(c.lat() + 0.0002, c.lon()).unwrap();
        assert!(g.cells_in_disc(off, 0.0).is_empty());
    }

    #[test]
    fn disc_monotone() {
        let g = grid();
        let p = GeoPoint::new(52.53, 13.41).unwrap();
        let small = g.cells_in_disc(p, 400.0);
        let big = g.cells_in_disc(p, 800.0);
        assert!(small.is_subset(&big));
        assert!(small.len() < big.len());
    }

    #[test]
    fn f32_grid_agrees_near_centers() {
        let g64 = grid();
        let g32 = HexGrid::<f32>::with_default_area(GeoPoint::new(52.52f32, 13.40).unwrap()).unwrap();
        for q in -5..5 {
            for r in -5..5 {
                let c = g64.cell_center(CellId::new(q, r)).unwrap();
                let p32 = GeoPoint::new(c.lat() as f32, c.lon() as f32).unwrap();
                assert_eq!(g32.cell_of(p32).unwrap(), CellId::new(q, r));
            }
        }
    }
}
