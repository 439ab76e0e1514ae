//! Vehicle fleet: trajectories, CAM emission schedule, login and handover
//! bookkeeping. Network I/O lives with the caller.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::time::Instant;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cam::{decode_fields, encode_fields, CamFields, StationType};
use crate::fcd::{finite_difference_accel, parse_fcd, FcdError, FcdTimestep};
use crate::geo::EARTH_RADIUS_M;
use crate::mec::HandoverDirective;
use crate::pubsub::TopicName;
use crate::registry::LoginResponse;
use crate::{topics, GeoBounds, GeoPoint, HexGrid};

pub const DEFAULT_SEND_RATE_HZ: u32 = 10;
pub const MIN_SEND_RATE_HZ: u32 = 1;
pub const MAX_SEND_RATE_HZ: u32 = 10;
pub const DEFAULT_SPEED_RANGE_MPS: (f64, f64) = (5.0, 20.0);

#[derive(Debug, Error)]
pub enum FleetError {
    #[error(transparent)]
    Fcd(#[from] FcdError),
    #[error("invalid route model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRoutes {
    pub bbox: GeoBounds,
    pub n_vehicles: usize,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub seed: u64,
}

impl SyntheticRoutes {
    pub fn new(bbox: GeoBounds, n_vehicles: usize, seed: u64) -> Self {
        Self {
            bbox,
            n_vehicles,
            speed_min_mps: DEFAULT_SPEED_RANGE_MPS.0,
            speed_max_mps: DEFAULT_SPEED_RANGE_MPS.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteModel {
    Synthetic(SyntheticRoutes),
    FcdReplay { timesteps: Vec<FcdTimestep>, looped: bool },
}

impl RouteModel {
    pub fn from_fcd<R: BufRead>(reader: R, looped: bool) -> Result<Self, FleetError> {
        let timesteps = parse_fcd(reader).collect::<Result<Vec<_>, _>>()?;
        Ok(RouteModel::FcdReplay { timesteps, looped })
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |m: &str| Err(FleetError::InvalidModel(m.to_owned()));
        match self {
            RouteModel::Synthetic(s) => {
                let b = s.bbox;
                if !(b.lat_min < b.lat_max && b.lon_min < b.lon_max) {
                    return bad("empty bounding box");
                }
                if b.lat_min.abs() >= 85.0 || b.lat_max.abs() >= 85.0 || b.lon_min < -180.0 || b.lon_max >= 180.0 {
                    return bad("bounding box outside the supported domain");
                }
                if s.n_vehicles == 0 {
                    return bad("need at least one vehicle");
                }
                if !(s.speed_min_mps > 0.0 && s.speed_min_mps <= s.speed_max_mps && s.speed_max_mps.is_finite()) {
                    return bad("speed range must satisfy 0 < min <= max");
                }
            }
            RouteModel::FcdReplay { timesteps, .. } => {
                if timesteps.iter().all(|t| t.vehicles.is_empty()) {
                    return bad("FCD file contains no vehicles");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: GeoPoint,
    pub heading_deg: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
}

/// Local tangent plane about the synthetic area's center.
#[derive(Debug, Clone, Copy)]
struct Plane {
    lat0: f64,
    lon0: f64,
    cos_lat0: f64,
}

impl Plane {
    fn new(lat0: f64, lon0: f64) -> Self {
        Self { lat0, lon0, cos_lat0: lat0.to_radians().cos() }
    }

    fn to_xy(self, lat: f64, lon: f64) -> (f64, f64) {
        (
            EARTH_RADIUS_M * (lon - self.lon0).to_radians() * self.cos_lat0,
            EARTH_RADIUS_M * (lat - self.lat0).to_radians(),
        )
    }

    fn to_geo(self, x: f64, y: f64) -> (f64, f64) {
        (
            self.lat0 + (y / EARTH_RADIUS_M).to_degrees(),
            self.lon0 + (x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees(),
        )
    }
}

#[derive(Debug, Clone)]
struct Waypoint {
    rng: ChaCha8Rng,
    plane: Plane,
    half_w: f64,
    half_h: f64,
    speed_range: (f64, f64),
    x: f64,
    y: f64,
    tx: f64,
    ty: f64,
    speed: f64,
    heading: f64,
    accel: f64,
}

impl Waypoint {
    fn new(mut rng: ChaCha8Rng, r: &SyntheticRoutes) -> Self {
        let b = r.bbox;
        let plane = Plane::new((b.lat_min + b.lat_max) / 2.0, (b.lon_min + b.lon_max) / 2.0);
        let (x1, y1) = plane.to_xy(b.lat_max, b.lon_max);
        // shrink slightly so unprojected points stay inside the box
        let (half_w, half_h) = (x1.abs() * 0.999, y1.abs() * 0.999);
        let x = rng.gen_range(-half_w..=half_w);
        let y = rng.gen_range(-half_h..=half_h);
        let mut w = Self {
            rng,
            plane,
            half_w,
            half_h,
            speed_range: (r.speed_min_mps, r.speed_max_mps),
            x,
            y,
            tx: x,
            ty: y,
            speed: 0.0,
            heading: 0.0,
            accel: 0.0,
        };
        w.new_leg();
        w.accel = 0.0;
        w
    }

    fn new_leg(&mut self) {
        self.tx = self.rng.gen_range(-self.half_w..=self.half_w);
        self.ty = self.rng.gen_range(-self.half_h..=self.half_h);
        let (lo, hi) = self.speed_range;
        let speed = if lo < hi { self.rng.gen_range(lo..hi) } else { lo };
        self.accel = speed - self.speed;
        self.speed = speed;
        self.heading = (self.tx - self.x).atan2(self.ty - self.y).to_degrees().rem_euclid(360.0);
    }

    fn advance(&mut self, dt_ms: u64) {
        let dt = dt_ms as f64 / 1e3;
        self.accel = 0.0;
        let mut budget = self.speed * dt;
        // a bounded number of legs per step keeps pathological boxes finite
        for _ in 0..16 {
            let (dx, dy) = (self.tx - self.x, self.ty - self.y);
            let dist = dx.hypot(dy);
            if dist > budget {
                self.x += dx / dist * budget;
                self.y += dy / dist * budget;
                return;
            }
            self.x = self.tx;
            self.y = self.ty;
            budget -= dist;
            let v0 = self.speed;
            self.new_leg();
            if dt > 0.0 {
                self.accel = (self.speed - v0) / dt;
            }
        }
    }

    fn kinematics(&self) -> Kinematics {
        let (lat, lon) = self.plane.to_geo(self.x, self.y);
        Kinematics {
            position: GeoPoint::new(lat, lon).expect("synthetic area validated"),
            heading_deg: self.heading,
            speed_mps: self.speed,
            accel_mps2: self.accel,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ReplaySample {
    t_ms: u64,
    lat: f64,
    lon: f64,
    heading: f64,
    speed: f64,
    accel: f64,
}

#[derive(Debug, Clone)]
struct Replay {
    samples: Vec<ReplaySample>,
    /// Offset of the file's first timestep; sample times are absolute file times.
    t0_ms: u64,
    period_ms: Option<u64>,
}

impl Replay {
    fn at(&self, t_rel_ms: u64) -> Option<Kinematics> {
        let t_rel = match self.period_ms {
            Some(p) => t_rel_ms % p,
            None => t_rel_ms,
        };
        let t = self.t0_ms + t_rel;
        let i = self.samples.partition_point(|s| s.t_ms <= t);
        if i == 0 {
            return None;
        }
        let a = self.samples[i - 1];
        let (lat, lon) = match self.samples.get(i) {
            Some(b) => {
                let f = (t - a.t_ms) as f64 / (b.t_ms - a.t_ms) as f64;
                (a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f)
            }
            None if t == a.t_ms || self.period_ms.is_some() => (a.lat, a.lon),
            None => return None,
        };
        Some(Kinematics {
            position: GeoPoint::new(lat, lon).ok()?,
            heading_deg: a.heading,
            speed_mps: a.speed,
            accel_mps2: a.accel,
        })
    }
}

#[derive(Debug, Clone)]
enum Motion {
    Waypoint(Box<Waypoint>),
    Replay(Replay),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub mec_id: String,
    pub endpoint: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentOptions {
    pub send_rate_hz: u32,
    pub t_send_ms: u64,
    pub station_type: StationType,
}

impl Default for AgentOptions {
    fn default() -> Self {
        Self { send_rate_hz: DEFAULT_SEND_RATE_HZ, t_send_ms: 0, station_type: StationType::Car }
    }
}

#[derive(Debug, Clone)]
pub struct VehicleAgent {
    /// Registry-assigned id once logged in; the login nonce before that.
    pub station_id: u32,
    pub nonce: u32,
    pub label: String,
    pub station_type: StationType,
    pub send_rate_hz: u32,
    pub t_send_ms: u64,
    pub assigned: Option<Assignment>,
    motion: Motion,
    state: Option<Kinematics>,
    next_send_ms: u64,
    frames_sent: u64,
}

impl VehicleAgent {
    pub fn kinematics(&self) -> Option<&Kinematics> {
        self.state.as_ref()
    }

    pub fn is_active(&self) -> bool {
        self.state.is_some()
    }

    pub fn is_logged_in(&self) -> bool {
        self.assigned.is_some()
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn send_period_ms(&self) -> u64 {
        1000 / self.send_rate_hz as u64
    }

    fn fields(&self, station_id: u32, now_ms: u64) -> Option<CamFields> {
        let k = self.state?;
        Some(CamFields {
            station_id,
            gen_time_ms: now_ms,
            lat: k.position.lat(),
            lon: k.position.lon(),
            station_type: self.station_type,
            heading_deg: k.heading_deg,
            speed_mps: k.speed_mps,
            accel_mps2: k.accel_mps2,
        })
    }

    /// Login CAM carrying the nonce as station id.
    pub fn login_frame(&self, now_ms: u64) -> Option<Bytes> {
        let f = self.fields(self.nonce, now_ms)?;
        encode_fields(&f).ok().map(|b| Bytes::copy_from_slice(&b))
    }

    pub fn apply_login(&mut self, resp: &LoginResponse) {
        self.station_id = resp.vehicle_id;
        self.assigned = Some(Assignment { mec_id: resp.mec_id.clone(), endpoint: resp.endpoint.clone() });
    }

    /// The assignment a directive asks for, or `None` if it names the current MEC.
    pub fn handover_target(&self, d: &HandoverDirective) -> Option<Assignment> {
        match &self.assigned {
            Some(a) if a.mec_id == d.target_mec => None,
            _ => Some(Assignment { mec_id: d.target_mec.clone(), endpoint: d.endpoint.clone() }),
        }
    }

    /// Switches publication after the new connection is up.
    pub fn commit_handover(&mut self, a: Assignment) {
        self.assigned = Some(a);
    }

    fn advance(&mut self, t_rel_ms: u64, dt_ms: u64) {
        match &mut self.motion {
            Motion::Waypoint(w) => {
                if dt_ms > 0 {
                    w.advance(dt_ms);
                }
                self.state = Some(w.kinematics());
            }
            Motion::Replay(r) => self.state = r.at(t_rel_ms),
        }
    }
}

/// One CAM ready to publish at `send_at_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub agent: usize,
    pub topic: TopicName,
    pub frame: Bytes,
    pub fields: CamFields,
    pub send_at_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Fleet {
    agents: Vec<VehicleAgent>,
    grid: HexGrid,
    start_ms: u64,
    last_ms: u64,
}

impl Fleet {
    /// One agent per vehicle, positioned at `start_ms`. Agents emit nothing
    /// until they have been assigned a MEC.
    pub fn spawn(model: &RouteModel, grid: HexGrid, opts: AgentOptions, start_ms: u64) -> Result<Self, FleetError> {
        model.validate()?;
        if !(MIN_SEND_RATE_HZ..=MAX_SEND_RATE_HZ).contains(&opts.send_rate_hz) {
            return Err(FleetError::InvalidModel(format!("send rate {} Hz outside [1, 10]", opts.send_rate_hz)));
        }
        let period = 1000 / opts.send_rate_hz as u64;
        let mut nonce_rng = ChaCha8Rng::seed_from_u64(match model {
            RouteModel::Synthetic(s) => s.seed,
            RouteModel::FcdReplay { .. } => 0x5eed,
        });
        nonce_rng.set_stream(u64::MAX);
        let mut nonces = HashSet::new();
        let mut next_nonce = move || loop {
            let n: u32 = nonce_rng.gen();
            if n != 0 && nonces.insert(n) {
                return n;
            }
        };

        let motions: Vec<(String, Motion)> = match model {
            RouteModel::Synthetic(s) => (0..s.n_vehicles)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                    rng.set_stream(i as u64);
                    (format!("veh{i}"), Motion::Waypoint(Box::new(Waypoint::new(rng, s))))
                })
                .collect(),
            RouteModel::FcdReplay { timesteps, looped } => replay_motions(timesteps, *looped),
        };

        let mut agents = Vec::with_capacity(motions.len());
        for (i, (label, motion)) in motions.into_iter().enumerate() {
            let nonce = next_nonce();
            let mut a = VehicleAgent {
                station_id: nonce,
                nonce,
                label,
                station_type: opts.station_type,
                send_rate_hz: opts.send_rate_hz,
                t_send_ms: opts.t_send_ms,
                assigned: None,
                motion,
                state: None,
                // spread first sends over one period
                next_send_ms: start_ms + (i as u64 * 7919) % period,
                frames_sent: 0,
            };
            a.advance(0, 0);
            agents.push(a);
        }
        Ok(Self { agents, grid, start_ms, last_ms: start_ms })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[VehicleAgent] {
        &self.agents
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut VehicleAgent {
        &mut self.agents[i]
    }

    pub fn grid(&self) -> &HexGrid {
        &self.grid
    }

    pub fn now_ms(&self) -> u64 {
        self.last_ms
    }

    /// Index of the agent logging in with `nonce`.
    pub fn by_nonce(&self) -> HashMap<u32, usize> {
        self.agents.iter().enumerate().map(|(i, a)| (a.nonce, i)).collect()
    }

    /// Moves every agent to `now_ms` and returns the CAMs due at this tick.
    pub fn step(&mut self, now_ms: u64) -> Vec<Emission> {
        let now_ms = now_ms.max(self.last_ms);
        let dt = now_ms - self.last_ms;
        self.last_ms = now_ms;
        let t_rel = now_ms - self.start_ms;
        let mut out = Vec::new();
        for (i, a) in self.agents.iter_mut().enumerate() {
            a.advance(t_rel, dt);
            if now_ms < a.next_send_ms {
                continue;
            }
            let period = a.send_period_ms();
            a.next_send_ms = if now_ms >= a.next_send_ms + period {
                now_ms + period
            } else {
                a.next_send_ms + period
            };
            let Some(mec) = a.assigned.as_ref() else { continue };
            let Some(fields) = a.fields(a.station_id, now_ms) else { continue };
            let Ok(raw) = encode_fields(&fields) else { continue };
            // the topic cell must match the position the receiver decodes
            let wire = decode_fields(&raw).expect("freshly encoded frame decodes");
            let Ok(cell) = wire.position().and_then(|p| self.grid.cell_of(p)) else { continue };
            let Ok(topic) = topics::feed(&mec.mec_id, cell) else { continue };
            a.frames_sent += 1;
            out.push(Emission {
                agent: i,
                topic,
                frame: Bytes::copy_from_slice(&raw),
                fields: wire,
                send_at_ms: now_ms + a.t_send_ms,
            });
        }
        out
    }
}

fn replay_motions(timesteps: &[FcdTimestep], looped: bool) -> Vec<(String, Motion)> {
    let mut order: Vec<String> = Vec::new();
    let mut per: HashMap<String, Vec<ReplaySample>> = HashMap::new();
    for ts in timesteps {
        let t_ms = (ts.time_s * 1e3).round() as u64;
        for v in &ts.vehicles {
            let samples = per.entry(v.name.clone()).or_insert_with(|| {
                order.push(v.name.clone());
                Vec::new()
            });
            samples.push(ReplaySample {
                t_ms,
                lat: v.lat,
                lon: v.lon,
                heading: v.heading_deg,
                speed: v.speed_mps,
                accel: 0.0,
            });
        }
    }
    let t0_ms = timesteps.first().map(|t| (t.time_s * 1e3).round() as u64).unwrap_or(0);
    let period_ms = looped.then(|| {
        let times: Vec<u64> = timesteps.iter().map(|t| (t.time_s * 1e3).round() as u64).collect();
        let step = times.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0).min().unwrap_or(1000);
        times.last().copied().unwrap_or(t0_ms) - t0_ms + step
    });
    order
        .into_iter()
        .map(|name| {
            let mut samples = per.remove(&name).unwrap_or_default();
            let series: Vec<(f64, f64)> = samples.iter().map(|s| (s.t_ms as f64 / 1e3, s.speed)).collect();
            for (s, a) in samples.iter_mut().zip(finite_difference_accel(&series)) {
                s.accel = a;
            }
            (name, Motion::Replay(Replay { samples, t0_ms, period_ms }))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    Realtime,
    /// Wall time scaled by the factor.
    Accelerated(f64),
    /// Advances only through [`SimClock::advance`].
    Virtual,
}

/// Monotone simulation clock.
#[derive(Debug, Clone)]
pub struct SimClock {
    mode: ClockMode,
    started: Instant,
    base_ms: u64,
    virtual_ms: u64,
    last_ms: u64,
}

impl SimClock {
    pub fn new(mode: ClockMode, base_ms: u64) -> Self {
        Self { mode, started: Instant::now(), base_ms, virtual_ms: 0, last_ms: base_ms }
    }

    pub fn realtime() -> Self {
        Self::new(ClockMode::Realtime, unix_ms())
    }

    pub fn virtual_at(base_ms: u64) -> Self {
        Self::new(ClockMode::Virtual, base_ms)
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now_ms(&mut self) -> u64 {
        let elapsed = self.started.elapsed().as_secs_f64() * 1e3;
        let t = match self.mode {
            ClockMode::Realtime => self.base_ms + elapsed as u64,
            ClockMode::Accelerated(f) => self.base_ms + (elapsed * f) as u64,
            ClockMode::Virtual => self.base_ms + self.virtual_ms,
        };
        self.last_ms = self.last_ms.max(t);
        self.last_ms
    }

    /// Moves a virtual clock forward; other modes ignore it.
    pub fn advance(&mut self, dt_ms: u64) -> u64 {
        if self.mode == ClockMode::Virtual {
            self.virtual_ms += dt_ms;
        }
        self.now_ms()
    }
}

pub fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
