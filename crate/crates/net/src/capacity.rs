//! Full-stack capacity run: registry, one MEC and a synthetic fleet in one
//! process, with a probe that measures when each CAM becomes query-visible.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use edm_core::bench::box_around;
use edm_core::fleet::{unix_ms, AgentOptions, Fleet, RouteModel, SyntheticRoutes};
use edm_core::mec::{CounterSnapshot, MecConfig, MecCore, MecDescriptor};
use edm_core::stats::summarize;
use edm_core::store::QuerySpec;
use edm_core::{topics, CellId, GeoPoint, HexGrid, LatencyStats};

use crate::fleet::{spawn_fleet, FleetOptions, FleetSnapshot};
use crate::{BrokerClient, MecOptions, MecServer, NetError, RegistryOptions, RegistryServer};

pub const PROBE_INTERVAL: Duration = Duration::from_millis(5);
pub const BUDGET_OK_TARGET: f64 = 0.99;
pub const AVAILABILITY_TARGET_MS: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct CapacityConfig {
    pub n_vehicles: usize,
    pub rate_hz: u32,
    pub t_buffer_ms: u64,
    pub t_send_ms: u64,
    pub duration: Duration,
    pub seed: u64,
    /// Garbage frames published per second on the MEC feed.
    pub malformed_per_s: u32,
    pub origin: GeoPoint,
    /// Longest wait for every vehicle to log in before measuring.
    pub login_timeout: Duration,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 2000,
            rate_hz: 10,
            t_buffer_ms: 50,
            t_send_ms: 0,
            duration: Duration::from_secs(60),
            seed: 7,
            malformed_per_s: 0,
            origin: GeoPoint::new(40.4168, -3.7038).expect("valid origin"),
            login_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CapacityReport {
    pub n_vehicles: usize,
    pub logged_in: u64,
    pub duration_s: f64,
    /// Query-visible time minus generation time, per CAM.
    pub availability: LatencyStats,
    /// Over flushes inside the measurement window.
    pub budget_ok_fraction: f64,
    pub flushes: u64,
    pub counters: CounterSnapshot,
    pub broker_dropped: u64,
    pub fleet: FleetSnapshot,
    /// Rows stored during measurement that the probe never saw.
    pub unseen: u64,
    pub saturated: bool,
}

impl CapacityReport {
    pub const CSV_HEADER: &'static str = "n_vehicles,logged_in,duration_s,samples,mean_ms,std_ms,p50_ms,p90_ms,p99_ms,max_ms,budget_ok_fraction,flushes,received,stored,malformed,overflow,store_rejected,broker_dropped,unseen,saturated";

    pub fn csv(&self) -> String {
        let a = &self.availability;
        let c = &self.counters;
        format!(
            "{}\n{},{},{:.3},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.5},{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.n_vehicles,
            self.logged_in,
            self.duration_s,
            a.n,
            a.mean_ms,
            a.std_ms,
            a.p50_ms,
            a.p90_ms,
            a.p99_ms,
            a.max_ms,
            self.budget_ok_fraction,
            self.flushes,
            c.received,
            c.stored,
            c.malformed,
            c.overflow,
            c.store_rejected,
            self.broker_dropped,
            self.unseen,
            self.saturated
        )
    }
}

struct Probe {
    samples: Vec<f64>,
    seen: u64,
}

/// Polls the store for rows newer than the last seen insertion timestamp.
fn probe_loop(core: Arc<MecCore>, from_ms: u64, stop: &AtomicBool) -> Probe {
    let mut last_ts = 0u64;
    let mut keys: HashSet<(u32, u64)> = HashSet::new();
    let mut out = Probe { samples: Vec::new(), seen: 0 };
    while !stop.load(Ordering::Relaxed) {
        thread::sleep(PROBE_INTERVAL);
        let now = unix_ms();
        let window = if last_ts == 0 { 1000 } else { now.saturating_sub(last_ts) };
        let rows = match core.store().read().query(&QuerySpec::recent(window.max(1)), now) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let seen_at = unix_ms();
        let mut newest = last_ts;
        for r in rows.iter().filter(|r| r.ts_ms > last_ts) {
            newest = newest.max(r.ts_ms);
            if r.ts_ms < from_ms || !keys.insert((r.station_id, r.gen_time_ms)) {
                continue;
            }
            out.seen += 1;
            if r.gen_time_ms >= from_ms {
                out.samples.push(seen_at.saturating_sub(r.gen_time_ms) as f64);
            }
        }
        last_ts = newest;
        if keys.len() > 1_000_000 {
            keys.clear();
        }
    }
    out
}

/// Runs registry, MEC and fleet over loopback for `cfg.duration` after all
/// vehicles have logged in.
pub async fn run_capacity(cfg: &CapacityConfig) -> Result<CapacityReport, NetError> {
    let grid = HexGrid::with_default_area(cfg.origin).map_err(|e| NetError::Config(e.to_string()))?;
    let reg = RegistryServer::start(RegistryOptions::new("127.0.0.1:0")).await?;
    let d = MecDescriptor::new("mec_cap", cfg.origin, 500.0, 800.0, "127.0.0.1:0").map_err(|e| NetError::Config(e.to_string()))?;
    let mut mc = MecConfig::new(d, grid);
    mc.t_buffer_ms = cfg.t_buffer_ms;
    let mut mo = MecOptions::new(mc, "127.0.0.1:0");
    mo.registry = Some(reg.endpoint());
    let mec = MecServer::start(mo).await?;
    let core = mec.core().clone();
    let t_login = Instant::now();
    while reg.with_state(|s| s.mec_count()) == 0 {
        if t_login.elapsed() > cfg.login_timeout {
            return Err(NetError::Timeout("MEC registration"));
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }

    let model = RouteModel::Synthetic(SyntheticRoutes::new(box_around(cfg.origin, 700.0), cfg.n_vehicles, cfg.seed));
    let opts = AgentOptions { send_rate_hz: cfg.rate_hz, t_send_ms: cfg.t_send_ms, ..Default::default() };
    let fleet = Fleet::spawn(&model, grid, opts, unix_ms()).map_err(|e| NetError::Config(e.to_string()))?;
    let fleet = spawn_fleet(fleet, FleetOptions::new(reg.endpoint())).await?;
    while fleet.stats().logins < cfg.n_vehicles as u64 && t_login.elapsed() < cfg.login_timeout {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    // let the first full period settle
    tokio::time::sleep(Duration::from_millis(500)).await;

    let (junk, _junk_rx) = BrokerClient::connect(mec.endpoint().as_str(), "capacity-junk").await?;
    let junk_topic = topics::feed("mec_cap", CellId::new(0, 0))?;

    let from_ms = unix_ms();
    let before = core.counters();
    let stop = Arc::new(AtomicBool::new(false));
    let probe = {
        let (core, stop) = (core.clone(), stop.clone());
        thread::Builder::new().name("capacity-probe".into()).spawn(move || probe_loop(core, from_ms, &stop))?
    };
    let t0 = Instant::now();
    let mut next_junk = Duration::ZERO;
    let junk_every = (cfg.malformed_per_s > 0).then(|| Duration::from_secs(1) / cfg.malformed_per_s);
    while t0.elapsed() < cfg.duration {
        match junk_every {
            Some(every) if t0.elapsed() >= next_junk => {
                junk.publish(&junk_topic, Bytes::from_static(b"not a cam frame"))?;
                next_junk += every;
            }
            _ => tokio::time::sleep(Duration::from_millis(5)).await,
        }
    }
    let during = core.counters();
    let fleet_stats = fleet.stats();
    fleet.stop().await?;
    junk.disconnect().await;
    // in-flight frames reach the buffer, then one last flush
    tokio::time::sleep(Duration::from_millis(3 * cfg.t_buffer_ms + 100)).await;
    stop.store(true, Ordering::Relaxed);
    let probe = tokio::task::spawn_blocking(move || probe.join())
        .await
        .map_err(|e| NetError::Closed(e.to_string()))?
        .map_err(|_| NetError::Closed("probe thread panicked".into()))?;
    let broker_dropped = mec.broker().broker().counters().dropped;
    let worker = mec.shutdown().await;
    let counters = worker.core().counters();
    reg.shutdown()?;

    let flushes = during.flushes - before.flushes;
    let budget_ok_fraction = if flushes == 0 { 1.0 } else { (during.budget_ok_flushes - before.budget_ok_flushes) as f64 / flushes as f64 };
    let stored_in_window = counters.stored.saturating_sub(before.stored);
    let availability = summarize(&probe.samples).unwrap_or_else(|_| LatencyStats::zero());
    let unseen = stored_in_window.saturating_sub(probe.seen);
    let saturated = budget_ok_fraction < BUDGET_OK_TARGET
        || counters.overflow > 0
        || broker_dropped > 0
        || availability.p99_ms >= AVAILABILITY_TARGET_MS;
    Ok(CapacityReport {
        n_vehicles: cfg.n_vehicles,
        logged_in: fleet_stats.logins,
        duration_s: t0.elapsed().as_secs_f64(),
        availability,
        budget_ok_fraction,
        flushes,
        counters,
        broker_dropped,
        fleet: fleet_stats,
        unseen,
        saturated,
    })
}
