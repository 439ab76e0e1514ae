//! Topic layout shared by every service.
//!
//! | purpose                | topic                                        |
//! |------------------------|----------------------------------------------|
//! | CAM feed               | `<mec_id>/edm_feed/<cell>`                   |
//! | ITS query              | `<mec_id>/<its_app_id>/query/<vehicle_id>`    |
//! | ITS query response     | `<mec_id>/<its_app_id>/response/<vehicle_id>` |
//! | vehicle login          | `<registry_id>/vehicle/login`                |
//! | vehicle login response | `<registry_id>/login_response/<nonce>`       |
//! | vehicle handover       | `<mec_id>/handover/<vehicle_id>`             |
//! | MEC login              | `<registry_id>/mec/login`                    |
//! | MEC update             | `<registry_id>/update/<mec_id>`              |
//! | neighbour update       | `<registry_id>/neighbours/<mec_id>`          |

use crate::geo::CellId;
use crate::pubsub::{TopicError, TopicFilter, TopicName};

pub const DEFAULT_REGISTRY_ID: &str = "mec_registry";
pub const FEED: &str = "edm_feed";
pub const HANDOVER: &str = "handover";
pub const QUERY: &str = "query";
pub const RESPONSE: &str = "response";

fn topic(parts: &[&str]) -> Result<TopicName, TopicError> {
    TopicName::from_segments(parts)
}

pub fn feed(mec_id: &str, cell: CellId) -> Result<TopicName, TopicError> {
    topic(&[mec_id, FEED, &cell.encoded()])
}

pub fn feed_all(mec_id: &str) -> Result<TopicFilter, TopicError> {
    TopicFilter::new(format!("{mec_id}/{FEED}/+"))
}

/// Splits `<mec_id>/edm_feed/<cell>`.
pub fn parse_feed(t: &TopicName) -> Option<(&str, CellId)> {
    let mut it = t.segments();
    let (mec, kind, cell) = (it.next()?, it.next()?, it.next()?);
    if kind != FEED || it.next().is_some() {
        return None;
    }
    Some((mec, cell.parse().ok()?))
}

pub fn its_query(mec_id: &str, app: &str, vehicle: &str) -> Result<TopicName, TopicError> {
    topic(&[mec_id, app, QUERY, vehicle])
}

pub fn its_query_all(mec_id: &str) -> Result<TopicFilter, TopicError> {
    TopicFilter::new(format!("{mec_id}/+/{QUERY}/+"))
}

pub fn its_response(mec_id: &str, app: &str, vehicle: &str) -> Result<TopicName, TopicError> {
    topic(&[mec_id, app, RESPONSE, vehicle])
}

/// `(mec_id, its_app_id, vehicle_id)` of a query topic.
pub fn parse_its_query(t: &TopicName) -> Option<(&str, &str, &str)> {
    let s: Vec<&str> = t.segments().collect();
    match s.as_slice() {
        [mec, app, q, v] if *q == QUERY => Some((mec, app, v)),
        _ => None,
    }
}

pub fn handover(mec_id: &str, vehicle_id: u32) -> Result<TopicName, TopicError> {
    topic(&[mec_id, HANDOVER, &vehicle_id.to_string()])
}

pub fn vehicle_login(registry_id: &str) -> Result<TopicName, TopicError> {
    topic(&[registry_id, "vehicle", "login"])
}

pub fn login_response(registry_id: &str, nonce: u32) -> Result<TopicName, TopicError> {
    topic(&[registry_id, "login_response", &nonce.to_string()])
}

pub fn mec_login(registry_id: &str) -> Result<TopicName, TopicError> {
    topic(&[registry_id, "mec", "login"])
}

pub fn mec_update(registry_id: &str, mec_id: &str) -> Result<TopicName, TopicError> {
    topic(&[registry_id, "update", mec_id])
}

pub fn mec_update_all(registry_id: &str) -> Result<TopicFilter, TopicError> {
    TopicFilter::new(format!("{registry_id}/update/+"))
}

pub fn neighbours(registry_id: &str, mec_id: &str) -> Result<TopicName, TopicError> {
    topic(&[registry_id, "neighbours", mec_id])
}
