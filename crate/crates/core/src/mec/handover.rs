//! Handover decisions with hysteresis.
//!
//! A vehicle is handed to a neighbor only once it is clearly outside this
//! server's optimal disc (`r_opt + margin`) and clearly inside the
//! neighbor's (`r_opt - margin`), and never twice within the cooldown.
//! A vehicle arriving at a server, by login or by handover, starts a
//! cooldown there too, so the receiving side cannot send it straight back.

use std::collections::HashMap;

use bytes::Bytes;

use super::descriptor::MecDescriptor;
use crate::geo::haversine_m;
use crate::GeoPoint;

pub const DEFAULT_COOLDOWN_MS: u64 = 5_000;
pub const DEFAULT_MARGIN_M: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandoverPolicy {
    pub margin_m: f64,
    pub cooldown_ms: u64,
}

impl Default for HandoverPolicy {
    fn default() -> Self {
        Self {
            margin_m: DEFAULT_MARGIN_M,
            cooldown_ms: DEFAULT_COOLDOWN_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverDirective {
    pub station_id: u32,
    pub target_mec: String,
    pub endpoint: String,
}

impl HandoverDirective {
    /// `mec_id=<id>;endpoint=<host:port>`
    pub fn payload(&self) -> Bytes {
        Bytes::from(format!("mec_id={};endpoint={}", self.target_mec, self.endpoint))
    }

    pub fn parse_payload(station_id: u32, payload: &[u8]) -> Option<Self> {
        let text = std::str::from_utf8(payload).ok()?;
        let mut mec = None;
        let mut endpoint = None;
        for kv in text.trim().split(';') {
            match kv.split_once('=')? {
                ("mec_id", v) => mec = Some(v.to_owned()),
                ("endpoint", v) => endpoint = Some(v.to_owned()),
                _ => {}
            }
        }
        Some(Self {
            station_id,
            target_mec: mec?,
            endpoint: endpoint?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleHandover {
    pub current_mec: String,
    pub last_handover_ms: u64,
    pub last_seen_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct HandoverState {
    pub policy: HandoverPolicy,
    vehicles: HashMap<u32, VehicleHandover>,
}

impl HandoverState {
    pub fn new(policy: HandoverPolicy) -> Self {
        Self {
            policy,
            vehicles: HashMap::new(),
        }
    }

    pub fn vehicle(&self, station_id: u32) -> Option<&VehicleHandover> {
        self.vehicles.get(&station_id)
    }

    /// Drops records of vehicles not seen since `cutoff_ms`.
    pub fn forget_before(&mut self, cutoff_ms: u64) {
        self.vehicles.retain(|_, v| v.last_seen_ms >= cutoff_ms);
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }
}

/// Decides whether vehicle `v` at `p` should move from `this` to a neighbor.
pub fn evaluate_handover(
    v: u32,
    p: GeoPoint,
    this: &MecDescriptor,
    hs: &mut HandoverState,
    now_ms: u64,
) -> Option<HandoverDirective> {
    let rec = hs.vehicles.entry(v).or_insert_with(|| VehicleHandover {
        current_mec: this.mec_id.clone(),
        last_handover_ms: now_ms,
        last_seen_ms: now_ms,
    });
    // handed away earlier and absent for a full cooldown: it came back
    let returned = rec.current_mec != this.mec_id
        && now_ms.saturating_sub(rec.last_seen_ms) > hs.policy.cooldown_ms;
    if returned {
        rec.current_mec = this.mec_id.clone();
        rec.last_handover_ms = now_ms;
    }
    rec.last_seen_ms = rec.last_seen_ms.max(now_ms);
    let margin = hs.policy.margin_m;
    if haversine_m(p, this.position) <= this.r_optimal_m + margin {
        return None;
    }
    if now_ms.saturating_sub(rec.last_handover_ms) <= hs.policy.cooldown_ms {
        return None;
    }
    let target = this
        .neighbors
        .iter()
        .filter(|n| n.mec_id != this.mec_id)
        .map(|n| (haversine_m(p, n.position), n))
        .filter(|(d, n)| *d < n.r_optimal_m - margin)
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.mec_id.cmp(&b.1.mec_id)))?
        .1;
    rec.current_mec = target.mec_id.clone();
    rec.last_handover_ms = now_ms;
    Some(HandoverDirective {
        station_id: v,
        target_mec: target.mec_id.clone(),
        endpoint: target.broker_endpoint.clone(),
    })
}
