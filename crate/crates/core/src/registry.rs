//! MEC registry: live descriptor set, neighbor relation and vehicle login.
//!
//! Two MECs are neighbors iff their operating discs intersect. Every
//! mutation returns the publications it causes; the caller owns the I/O.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use bytes::Bytes;
use thiserror::Error;

use crate::cam::CamFields;
use crate::geo::haversine_m;
use crate::mec::{DescriptorError, MecDescriptor};
use crate::pubsub::{TopicError, TopicName};
use crate::{topics, GeoPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error(transparent)]
    InvalidDescriptor(#[from] DescriptorError),
    #[error("unknown MEC {0:?}")]
    UnknownMec(String),
    #[error("no MEC server registered")]
    NoMecAvailable,
    #[error("vehicle id space exhausted")]
    VehicleIdsExhausted,
    #[error("invalid login position: {0}")]
    InvalidPosition(String),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("bad snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publication {
    pub topic: TopicName,
    pub payload: Bytes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub vehicle_id: u32,
    pub login_position: GeoPoint,
    pub assigned_mec: String,
    pub login_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoginResponse {
    pub vehicle_id: u32,
    pub mec_id: String,
    pub endpoint: String,
}

impl LoginResponse {
    /// `vehicle_id=<n>;mec_id=<id>;endpoint=<host:port>`
    pub fn payload(&self) -> Bytes {
        Bytes::from(format!(
            "vehicle_id={};mec_id={};endpoint={}",
            self.vehicle_id, self.mec_id, self.endpoint
        ))
    }

    pub fn parse(payload: &[u8]) -> Option<Self> {
        let text = std::str::from_utf8(payload).ok()?;
        let (mut id, mut mec, mut ep) = (None, None, None);
        for kv in text.trim().split(';') {
            match kv.split_once('=')? {
                ("vehicle_id", v) => id = v.parse().ok(),
                ("mec_id", v) => mec = Some(v.to_owned()),
                ("endpoint", v) => ep = Some(v.to_owned()),
                _ => {}
            }
        }
        Some(Self { vehicle_id: id?, mec_id: mec?, endpoint: ep? })
    }
}

/// Distances closer than this count as equal when choosing a MEC.
pub const DISTANCE_TIE_M: f64 = 1e-6;

/// Covered-then-nearest: among MECs whose operating disc contains `p`, the
/// nearest; otherwise the globally nearest. Ties go to the smaller id.
pub fn best_mec<'a, I>(p: GeoPoint, mecs: I) -> Option<&'a MecDescriptor>
where
    I: IntoIterator<Item = &'a MecDescriptor>,
{
    let all: Vec<(bool, f64, &MecDescriptor)> = mecs
        .into_iter()
        .map(|m| {
            let d = haversine_m(p, m.position);
            (d <= m.r_operating_m, d, m)
        })
        .collect();
    let covered = all.iter().any(|a| a.0);
    let pool = || all.iter().filter(move |a| a.0 == covered);
    let nearest = pool().map(|a| a.1).min_by(f64::total_cmp)?;
    pool()
        .filter(|a| a.1 <= nearest + DISTANCE_TIE_M)
        .map(|a| a.2)
        .min_by(|a, b| a.mec_id.cmp(&b.mec_id))
}

#[derive(Debug, Clone, PartialEq)]
struct MecEntry {
    descriptor: MecDescriptor,
    last_update_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RegistryState {
    registry_id: String,
    mecs: BTreeMap<String, MecEntry>,
    neighbors: BTreeMap<String, BTreeSet<String>>,
    next_vehicle_id: u32,
    vehicles: HashMap<u32, VehicleRecord>,
}

impl Default for RegistryState {
    fn default() -> Self {
        Self::new(topics::DEFAULT_REGISTRY_ID)
    }
}

impl RegistryState {
    pub fn new(registry_id: impl Into<String>) -> Self {
        Self {
            registry_id: registry_id.into(),
            mecs: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            next_vehicle_id: 1,
            vehicles: HashMap::new(),
        }
    }

    pub fn registry_id(&self) -> &str {
        &self.registry_id
    }

    pub fn mec_count(&self) -> usize {
        self.mecs.len()
    }

    pub fn mec(&self, id: &str) -> Option<&MecDescriptor> {
        self.mecs.get(id).map(|e| &e.descriptor)
    }

    pub fn mecs(&self) -> impl Iterator<Item = &MecDescriptor> {
        self.mecs.values().map(|e| &e.descriptor)
    }

    pub fn last_update_ms(&self, id: &str) -> Option<u64> {
        self.mecs.get(id).map(|e| e.last_update_ms)
    }

    pub fn neighbor_ids(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.neighbors.get(id)
    }

    /// Shallow descriptors of `id`'s neighbors, ordered by id.
    pub fn neighbors_of(&self, id: &str) -> Vec<MecDescriptor> {
        self.neighbors
            .get(id)
            .into_iter()
            .flatten()
            .filter_map(|n| self.mec(n).cloned())
            .collect()
    }

    pub fn vehicle(&self, vehicle_id: u32) -> Option<&VehicleRecord> {
        self.vehicles.get(&vehicle_id)
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn next_vehicle_id(&self) -> u32 {
        self.next_vehicle_id
    }

    fn overlapping(&self, d: &MecDescriptor) -> BTreeSet<String> {
        self.mecs
            .values()
            .filter(|e| e.descriptor.mec_id != d.mec_id && d.overlaps(&e.descriptor))
            .map(|e| e.descriptor.mec_id.clone())
            .collect()
    }

    fn neighbour_notice(&self, id: &str) -> Result<Publication, RegistryError> {
        Ok(Publication {
            topic: topics::neighbours(&self.registry_id, id)?,
            payload: Bytes::from(MecDescriptor::lines(&self.neighbors_of(id))),
        })
    }

    /// Inserts or replaces `d`, updates the relation symmetrically and
    /// returns the ids whose neighbor notices must be republished.
    fn upsert(&mut self, d: MecDescriptor, now_ms: u64) -> BTreeSet<String> {
        let id = d.mec_id.clone();
        let prev = self.mecs.get(&id).map(|e| e.descriptor.clone());
        let new_set = self.overlapping(&d);
        let old_set = self.neighbors.get(&id).cloned().unwrap_or_default();

        let mut recipients = BTreeSet::new();
        for lost in old_set.difference(&new_set) {
            if let Some(s) = self.neighbors.get_mut(lost) {
                s.remove(&id);
            }
            recipients.insert(lost.clone());
        }
        for gained in new_set.difference(&old_set) {
            self.neighbors.entry(gained.clone()).or_default().insert(id.clone());
            recipients.insert(gained.clone());
        }
        if old_set != new_set {
            recipients.insert(id.clone());
        }
        if prev.as_ref() != Some(&d) {
            // neighbors hold a copy of the changed descriptor
            recipients.extend(new_set.iter().cloned());
        }
        self.neighbors.insert(id.clone(), new_set);
        self.mecs.insert(id, MecEntry { descriptor: d, last_update_ms: now_ms });
        recipients
    }

    /// MEC login, also used for re-login. The registering MEC always gets its
    /// neighbor list; affected neighbors get their refreshed lists.
    pub fn register_mec(&mut self, d: MecDescriptor, now_ms: u64) -> Result<Vec<Publication>, RegistryError> {
        d.validate()?;
        let d = d.shallow();
        let id = d.mec_id.clone();
        let mut recipients = self.upsert(d, now_ms);
        recipients.insert(id);
        recipients.iter().map(|r| self.neighbour_notice(r)).collect()
    }

    /// Applies a descriptor change. An identical descriptor yields no notices.
    pub fn update_mec(&mut self, d: MecDescriptor, now_ms: u64) -> Result<Vec<Publication>, RegistryError> {
        d.validate()?;
        let d = d.shallow();
        let Some(entry) = self.mecs.get_mut(&d.mec_id) else {
            return Err(RegistryError::UnknownMec(d.mec_id));
        };
        if entry.descriptor == d {
            entry.last_update_ms = now_ms;
            return Ok(Vec::new());
        }
        let recipients = self.upsert(d, now_ms);
        recipients.iter().map(|r| self.neighbour_notice(r)).collect()
    }

    /// Full descriptor republished on the update topic after a change.
    pub fn update_echo(&self, mec_id: &str) -> Result<Publication, RegistryError> {
        let d = self.mec(mec_id).ok_or_else(|| RegistryError::UnknownMec(mec_id.to_owned()))?;
        Ok(Publication {
            topic: topics::mec_update(&self.registry_id, mec_id)?,
            payload: Bytes::from(d.to_line()),
        })
    }

    /// Assigns a fresh vehicle id and the best MEC for the login CAM. The
    /// response goes to the topic keyed by the CAM's station id (the nonce).
    pub fn login_vehicle(
        &mut self,
        cam: &CamFields,
        now_ms: u64,
    ) -> Result<(VehicleRecord, Publication), RegistryError> {
        let p = cam.position().map_err(|e| RegistryError::InvalidPosition(e.to_string()))?;
        let mec = best_mec(p, self.mecs()).ok_or(RegistryError::NoMecAvailable)?.clone();
        let vehicle_id = self.next_vehicle_id;
        self.next_vehicle_id = vehicle_id.checked_add(1).ok_or(RegistryError::VehicleIdsExhausted)?;
        let rec = VehicleRecord {
            vehicle_id,
            login_position: p,
            assigned_mec: mec.mec_id.clone(),
            login_ms: now_ms,
        };
        self.vehicles.insert(vehicle_id, rec.clone());
        let resp = LoginResponse { vehicle_id, mec_id: mec.mec_id, endpoint: mec.broker_endpoint };
        let pub_ = Publication {
            topic: topics::login_response(&self.registry_id, cam.station_id)?,
            payload: resp.payload(),
        };
        Ok((rec, pub_))
    }

    /// Snapshot of MEC descriptors and the vehicle id counter. Vehicle
    /// records are not persisted.
    pub fn snapshot_csv(&self) -> String {
        let mut out = String::from("# kind,mec_id,lat,lon,r_opt,r_oper,endpoint,last_update_ms\n");
        let _ = writeln!(out, "next_vehicle_id,{}", self.next_vehicle_id);
        for e in self.mecs.values() {
            let _ = writeln!(out, "mec,{},{}", e.descriptor.to_line(), e.last_update_ms);
        }
        out
    }

    pub fn from_snapshot_csv(registry_id: impl Into<String>, text: &str) -> Result<Self, RegistryError> {
        let mut s = Self::new(registry_id);
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| RegistryError::Snapshot { line: i + 1, message };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(n) = line.strip_prefix("next_vehicle_id,") {
                s.next_vehicle_id = n.parse().map_err(|_| err(format!("counter {n:?}")))?;
            } else if let Some(rest) = line.strip_prefix("mec,") {
                let (desc, ts) = rest.rsplit_once(',').ok_or_else(|| err("missing timestamp".into()))?;
                let ts = ts.parse().map_err(|_| err(format!("timestamp {ts:?}")))?;
                let d = MecDescriptor::parse_line(desc).map_err(|e| err(e.to_string()))?;
                if s.mecs.contains_key(&d.mec_id) {
                    return Err(err(format!("duplicate mec {}", d.mec_id)));
                }
                s.upsert(d, ts);
            } else {
                return Err(err(format!("unknown record {line:?}")));
            }
        }
        Ok(s)
    }
}
