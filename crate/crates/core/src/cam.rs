//! Fixed 34-byte CAM subset codec.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 2    | magic `0xCA 0x01`                      |
//! | 2      | 4    | station_id (u32)                       |
//! | 6      | 8    | gen_time_ms (u64, Unix epoch ms)       |
//! | 14     | 4    | latitude (i32, 1e-7 degree)            |
//! | 18     | 4    | longitude (i32, 1e-7 degree)           |
//! | 22     | 1    | station type                           |
//! | 23     | 2    | heading (u16, 0.1 degree, < 3600)      |
//! | 25     | 2    | speed (u16, 0.01 m/s)                  |
//! | 27     | 2    | acceleration (i16, 0.1 m/s²)           |
//! | 29     | 5    | reserved, zero                         |
//!
//! The cell is never carried on the wire; decoding recomputes it from the
//! decoded position under the deployment grid.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geo::{CellId, GeoError};
use crate::{GeoPoint, HexGrid};

pub const CAM_FRAME_LEN: usize = 34;
pub const CAM_MAGIC: [u8; 2] = [0xCA, 0x01];

const LATLON_SCALE: f64 = 1e7;
const HEADING_SCALE: f64 = 10.0;
const SPEED_SCALE: f64 = 100.0;
const ACCEL_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StationType {
    Car,
    Truck,
    Bus,
    Motorcycle,
    Rsu,
    Other,
}

impl StationType {
    pub const ALL: [StationType; 6] = [
        StationType::Car,
        StationType::Truck,
        StationType::Bus,
        StationType::Motorcycle,
        StationType::Rsu,
        StationType::Other,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StationType::Car => "car",
            StationType::Truck => "truck",
            StationType::Bus => "bus",
            StationType::Motorcycle => "motorcycle",
            StationType::Rsu => "rsu",
            StationType::Other => "other",
        }
    }
}

impl fmt::Display for StationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StationType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown station type {s:?}"))
    }
}

/// Everything a CAM frame carries on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamFields {
    pub station_id: u32,
    pub gen_time_ms: u64,
    pub lat: f64,
    pub lon: f64,
    pub station_type: StationType,
    pub heading_deg: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
}

impl CamFields {
    pub fn position(&self) -> Result<GeoPoint, GeoError> {
        GeoPoint::new(self.lat, self.lon)
    }
}

/// A decoded CAM together with its grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamMessage {
    pub fields: CamFields,
    pub cell: CellId,
}

impl CamMessage {
    pub fn new(fields: CamFields, grid: &HexGrid) -> Result<Self, CodecError> {
        let cell = grid.cell_of(fields.position()?)?;
        Ok(Self { fields, cell })
    }
}

impl std::ops::Deref for CamMessage {
    type Target = CamFields;

    fn deref(&self) -> &CamFields {
        &self.fields
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("truncated frame: {len} bytes, expected {CAM_FRAME_LEN}")]
    TruncatedFrame { len: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("field {field} out of range: {value}")]
    FieldOutOfRange { field: &'static str, value: i64 },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> CodecError {
    CodecError::InvalidField {
        field,
        reason: reason.into(),
    }
}

fn check_fields(m: &CamFields) -> Result<(), CodecError> {
    if m.gen_time_ms == 0 {
        return Err(invalid("gen_time_ms", "must be positive"));
    }
    GeoPoint::new(m.lat, m.lon).map_err(|e| invalid("position", e.to_string()))?;
    if !(m.heading_deg >= 0.0 && m.heading_deg < 360.0) {
        return Err(invalid("heading_deg", format!("{} not in [0, 360)", m.heading_deg)));
    }
    if !(m.speed_mps.is_finite() && m.speed_mps >= 0.0) {
        return Err(invalid("speed_mps", format!("{} not finite and >= 0", m.speed_mps)));
    }
    if (m.speed_mps * SPEED_SCALE).round() > u16::MAX as f64 {
        return Err(invalid("speed_mps", format!("{} exceeds 655.35", m.speed_mps)));
    }
    let accel = (m.accel_mps2 * ACCEL_SCALE).round();
    if !accel.is_finite() || accel < i16::MIN as f64 || accel > i16::MAX as f64 {
        return Err(invalid("accel_mps2", format!("{} not representable", m.accel_mps2)));
    }
    Ok(())
}

/// Encodes the wire fields of a CAM into its 34-byte frame.
pub fn encode_fields(m: &CamFields) -> Result<[u8; CAM_FRAME_LEN], CodecError> {
    check_fields(m)?;
    let lon = GeoPoint::new(m.lat, m.lon)?.lon();
    let mut out = [0u8; CAM_FRAME_LEN];
    out[0..2].copy_from_slice(&CAM_MAGIC);
    out[2..6].copy_from_slice(&m.station_id.to_le_bytes());
    out[6..14].copy_from_slice(&m.gen_time_ms.to_le_bytes());
    out[14..18].copy_from_slice(&((m.lat * LATLON_SCALE).round() as i32).to_le_bytes());
    // 180.0 - ε can round up to the excluded 180° edge
    let lon_q = ((lon * LATLON_SCALE).round() as i64).clamp(-1_800_000_000, 1_799_999_999) as i32;
    out[18..22].copy_from_slice(&lon_q.to_le_bytes());
    out[22] = m.station_type.code();
    let heading = ((m.heading_deg * HEADING_SCALE).round() as u32 % 3600) as u16;
    out[23..25].copy_from_slice(&heading.to_le_bytes());
    out[25..27].copy_from_slice(&((m.speed_mps * SPEED_SCALE).round() as u16).to_le_bytes());
    out[27..29].copy_from_slice(&((m.accel_mps2 * ACCEL_SCALE).round() as i16).to_le_bytes());
    Ok(out)
}

pub fn encode_cam(m: &CamMessage) -> Result<[u8; CAM_FRAME_LEN], CodecError> {
    encode_fields(&m.fields)
}

/// Decodes the wire fields without computing a cell.
pub fn decode_fields(b: &[u8]) -> Result<CamFields, CodecError> {
    if b.len() != CAM_FRAME_LEN {
        return Err(CodecError::TruncatedFrame { len: b.len() });
    }
    if b[0..2] != CAM_MAGIC {
        return Err(CodecError::BadMagic([b[0], b[1]]));
    }
    let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
    let i32_at = |i: usize| i32::from_le_bytes(b[i..i + 4].try_into().unwrap());

    let station_id = u32::from_le_bytes(b[2..6].try_into().unwrap());
    let gen_time_ms = u64::from_le_bytes(b[6..14].try_into().unwrap());
    if gen_time_ms == 0 {
        return Err(CodecError::FieldOutOfRange {
            field: "gen_time_ms",
            value: 0,
        });
    }
    let lat_q = i32_at(14);
    if lat_q.unsigned_abs() > 900_000_000 {
        return Err(CodecError::FieldOutOfRange {
            field: "lat",
            value: lat_q as i64,
        });
    }
    let lon_q = i32_at(18);
    if !(-1_800_000_000..1_800_000_000).contains(&lon_q) {
        return Err(CodecError::FieldOutOfRange {
            field: "lon",
            value: lon_q as i64,
        });
    }
    let station_type = StationType::from_code(b[22]).ok_or(CodecError::FieldOutOfRange {
        field: "station_type",
        value: b[22] as i64,
    })?;
    let heading_q = u16_at(23);
    if heading_q >= 3600 {
        return Err(CodecError::FieldOutOfRange {
            field: "heading",
            value: heading_q as i64,
        });
    }
    let speed_q = u16_at(25);
    let accel_q = i16::from_le_bytes([b[27], b[28]]);

    Ok(CamFields {
        station_id,
        gen_time_ms,
        lat: lat_q as f64 / LATLON_SCALE,
        lon: lon_q as f64 / LATLON_SCALE,
        station_type,
        heading_deg: heading_q as f64 / HEADING_SCALE,
        speed_mps: speed_q as f64 / SPEED_SCALE,
        accel_mps2: accel_q as f64 / ACCEL_SCALE,
    })
}

/// Decodes a frame and recomputes its cell under `grid`.
pub fn decode_cam(b: &[u8], grid: &HexGrid) -> Result<CamMessage, CodecError> {
    CamMessage::new(decode_fields(b)?, grid)
}
