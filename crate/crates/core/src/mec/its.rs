//! Request/response ITS queries carried over pub/sub.
//!
//! Query payload: `mode=<latest|all>;window_ms=<n|none>;region=<none|bbox:a,b,c,d|cell:ID>`
//! where the bbox order is `lat_min,lat_max,lon_min,lon_max`.

use std::fmt::Write as _;

use bytes::Bytes;
use thiserror::Error;

use crate::geo::GeoBounds;
use crate::pubsub::TopicName;
use crate::store::{EdmStore, QueryMode, QuerySpec, Region, StoredPoint};
use crate::topics;

/// Name of the built-in application answering the five query shapes.
pub const PROXIMITY_APP: &str = "proximity";

pub const RESPONSE_CSV_HEADER: &str =
    "station_id,ts_ms,gen_time_ms,lat,lon,type,heading,speed,accel,cell";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ItsError {
    #[error("malformed query payload: {0}")]
    Malformed(String),
    #[error("unknown ITS application {0:?}")]
    UnknownApp(String),
    #[error("not a query topic")]
    NotAQueryTopic,
    #[error("response of {len} bytes exceeds the {limit} byte payload limit; narrow the query")]
    TooLarge { len: usize, limit: usize },
}

pub fn format_query(spec: &QuerySpec) -> String {
    let mut s = String::new();
    let mode = match spec.mode {
        QueryMode::LatestPerVehicle => "latest",
        QueryMode::AllPoints => "all",
    };
    let _ = write!(s, "mode={mode};window_ms=");
    match spec.time_window_ms {
        Some(w) => {
            let _ = write!(s, "{w}");
        }
        None => s.push_str("none"),
    }
    s.push_str(";region=");
    match spec.region {
        Region::None => s.push_str("none"),
        Region::BBox(b) => {
            let _ = write!(s, "bbox:{},{},{},{}", b.lat_min, b.lat_max, b.lon_min, b.lon_max);
        }
        Region::Cell(c) => {
            let _ = write!(s, "cell:{c}");
        }
    }
    s
}

pub fn parse_query(payload: &[u8]) -> Result<QuerySpec, ItsError> {
    let bad = |m: &str| ItsError::Malformed(m.to_owned());
    let text = std::str::from_utf8(payload).map_err(|_| bad("not UTF-8"))?.trim();
    let (mut mode, mut window, mut region) = (None, None, None);
    for kv in text.split(';') {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv))?;
        match k.trim() {
            "mode" => {
                mode = Some(match v {
                    "latest" => QueryMode::LatestPerVehicle,
                    "all" => QueryMode::AllPoints,
                    other => return Err(bad(&format!("mode {other:?}"))),
                })
            }
            "window_ms" => {
                window = Some(match v {
                    "none" => None,
                    n => Some(n.parse::<u64>().map_err(|_| bad(&format!("window_ms {n:?}")))?),
                })
            }
            "region" => region = Some(parse_region(v)?),
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    let spec = QuerySpec {
        mode: mode.ok_or_else(|| bad("missing mode"))?,
        time_window_ms: window.ok_or_else(|| bad("missing window_ms"))?,
        region: region.ok_or_else(|| bad("missing region"))?,
    };
    spec.validate().map_err(|e| ItsError::Malformed(e.to_string()))?;
    Ok(spec)
}

fn parse_region(v: &str) -> Result<Region, ItsError> {
    let bad = || ItsError::Malformed(format!("region {v:?}"));
    if v == "none" {
        return Ok(Region::None);
    }
    if let Some(cell) = v.strip_prefix("cell:") {
        return cell.parse().map(Region::Cell).map_err(|_| bad());
    }
    let nums = v
        .strip_prefix("bbox:")
        .ok_or_else(bad)?
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    let [lat_min, lat_max, lon_min, lon_max] = nums.as_slice() else {
        return Err(bad());
    };
    Ok(Region::BBox(GeoBounds {
        lat_min: *lat_min,
        lat_max: *lat_max,
        lon_min: *lon_min,
        lon_max: *lon_max,
    }))
}

pub fn response_csv(rows: &[StoredPoint]) -> String {
    crate::store::rows_to_csv(RESPONSE_CSV_HEADER, rows)
}

/// Parses a response payload back into rows.
pub fn parse_response(payload: &[u8]) -> Result<Vec<StoredPoint>, ItsError> {
    let bad = |m: String| ItsError::Malformed(m);
    let text = std::str::from_utf8(payload).map_err(|_| bad("not UTF-8".into()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESPONSE_CSV_HEADER => {}
        Some(h) if h.starts_with("error=") => return Err(bad(h["error=".len()..].to_owned())),
        other => return Err(bad(format!("unexpected header {other:?}"))),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| StoredPoint::parse_csv(l).ok_or_else(|| bad(format!("row {l:?}"))))
        .collect()
}

/// Runs the query named by `topic` and returns the response topic and payload.
///
/// Malformed payloads still produce a response, carrying `error=<message>`,
/// as does a result longer than `max_len` bytes.
pub fn answer_query(
    store: &EdmStore,
    topic: &TopicName,
    payload: &[u8],
    now_ms: u64,
    max_len: usize,
) -> Result<(TopicName, Bytes), ItsError> {
    let (mec, app, vehicle) = topics::parse_its_query(topic).ok_or(ItsError::NotAQueryTopic)?;
    let response = topics::its_response(mec, app, vehicle).map_err(|_| ItsError::NotAQueryTopic)?;
    let body = if app != PROXIMITY_APP {
        format!("error={}\n", ItsError::UnknownApp(app.to_owned()))
    } else {
        match parse_query(payload).map(|spec| store.query(&spec, now_ms)) {
            Ok(Ok(rows)) => response_csv(&rows),
            Ok(Err(e)) => format!("error={e}\n"),
            Err(e) => format!("error={e}\n"),
        }
    };
    let body = if body.len() > max_len {
        format!("error={}\n", ItsError::TooLarge { len: body.len(), limit: max_len })
    } else {
        body
    };
    Ok((response, Bytes::from(body)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreConfig;
    use crate::{CellId, GeoPoint, HexGrid};

    fn store() -> EdmStore {
        EdmStore::new(HexGrid::with_default_area(GeoPoint::new(0.0, 0.0).unwrap()).unwrap(), StoreConfig::default())
    }

    #[test]
    fn payload_round_trip() {
        let b = GeoBounds { lat_min: -1.0, lat_max: 1.5, lon_min: 2.0, lon_max: 3.25 };
        for spec in [
            QuerySpec::latest_in_bbox(b),
            QuerySpec::latest_in_cell(CellId::new(-3, 4)),
            QuerySpec::recent(100),
            QuerySpec::recent_in_bbox(250, b),
            QuerySpec::recent_in_cell(100, CellId::new(0, 0)),
        ] {
            assert_eq!(parse_query(format_query(&spec).as_bytes()).unwrap(), spec);
        }
        assert_eq!(
            format_query(&QuerySpec::recent_in_cell(100, CellId::new(3, -2))),
            "mode=all;window_ms=100;region=cell:h3_m2"
        );
    }

    #[test]
    fn payload_errors() {
        for p in [
            "",
            "mode=latest;window_ms=none;region=none",
            "mode=x;window_ms=none;region=none",
            "mode=all;window_ms=0;region=none",
            "mode=all;window_ms=abc;region=none",
            "mode=all;window_ms=5;region=bbox:1,2,3",
            "mode=all;window_ms=5;region=cell:zz",
            "mode=all;window_ms=5",
            "mode=all;window_ms=5;region=none;extra=1",
        ] {
            assert!(parse_query(p.as_bytes()).is_err(), "{p}");
        }
    }

    #[test]
    fn empty_store_answers_header_only() {
        let s = store();
        let t = topics::its_query("m", PROXIMITY_APP, "v1").unwrap();
        let (rt, body) = answer_query(&s, &t, format_query(&QuerySpec::recent(100)).as_bytes(), 0, usize::MAX).unwrap();
        assert_eq!(rt.as_str(), "m/proximity/response/v1");
        assert_eq!(&body[..], format!("{RESPONSE_CSV_HEADER}\n").as_bytes());
        assert!(parse_response(&body).unwrap().is_empty());
    }

    #[test]
    fn error_record() {
        let s = store();
        let t = topics::its_query("m", PROXIMITY_APP, "v1").unwrap();
        let (_, body) = answer_query(&s, &t, b"nonsense", 0, usize::MAX).unwrap();
        assert!(body.starts_with(b"error="));
        assert!(parse_response(&body).is_err());
        let t = topics::its_query("m", "other", "v1").unwrap();
        let (_, body) = answer_query(&s, &t, b"mode=all;window_ms=5;region=none", 0, usize::MAX).unwrap();
        assert!(body.starts_with(b"error="));
        let feed = topics::feed("m", CellId::new(0, 0)).unwrap();
        assert_eq!(answer_query(&s, &feed, b"", 0, usize::MAX).unwrap_err(), ItsError::NotAQueryTopic);
    }

    #[test]
    fn oversized_result_becomes_error_record() {
        let s = store();
        let t = topics::its_query("m", PROXIMITY_APP, "v1").unwrap();
        let q = format_query(&QuerySpec::recent(100));
        let (_, body) = answer_query(&s, &t, q.as_bytes(), 0, RESPONSE_CSV_HEADER.len()).unwrap();
        assert!(body.starts_with(b"error=response of"), "{body:?}");
        let (_, body) = answer_query(&s, &t, q.as_bytes(), 0, RESPONSE_CSV_HEADER.len() + 1).unwrap();
        assert!(parse_response(&body).unwrap().is_empty());
    }
}
