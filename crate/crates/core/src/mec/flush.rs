use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use super::buffer::BufferedFrame;
use super::handover::{evaluate_handover, HandoverDirective, HandoverState};
use super::MecCore;
use crate::cam::decode_cam;
use crate::store::{StoreError, StoredPoint};
use crate::{GeoPoint, HexGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlushReport {
    pub count: usize,
    pub t_decode_ms: f64,
    pub t_insertion_ms: f64,
    pub budget_ok: bool,
}

impl FlushReport {
    pub fn empty() -> Self {
        Self { count: 0, t_decode_ms: 0.0, t_insertion_ms: 0.0, budget_ok: true }
    }

    pub fn total_ms(&self) -> f64 {
        self.t_decode_ms + self.t_insertion_ms
    }

    /// The metrics log line, e.g. `flush count=1000 t_decode=12.460 t_insert=13.920 budget_ok=true`.
    pub fn metrics_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FlushReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "flush count={} t_decode={:.3} t_insert={:.3} budget_ok={}",
            self.count, self.t_decode_ms, self.t_insertion_ms, self.budget_ok
        )
    }
}

impl FromStr for FlushReport {
    type Err = String;

    /// Accepts a metrics line, possibly preceded by log decoration.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let start = s.find("flush count=").ok_or_else(|| format!("not a flush line: {s:?}"))?;
        let (mut count, mut dec, mut ins, mut ok) = (None, None, None, None);
        for kv in s[start + "flush ".len()..].split_whitespace() {
            let Some((k, v)) = kv.split_once('=') else { continue };
            match k {
                "count" => count = v.parse().ok(),
                "t_decode" => dec = v.parse().ok(),
                "t_insert" => ins = v.parse().ok(),
                "budget_ok" => ok = v.parse().ok(),
                _ => {}
            }
        }
        match (count, dec, ins, ok) {
            (Some(count), Some(t_decode_ms), Some(t_insertion_ms), Some(budget_ok)) => {
                Ok(Self { count, t_decode_ms, t_insertion_ms, budget_ok })
            }
            _ => Err(format!("incomplete flush line: {s:?}")),
        }
    }
}

#[derive(Debug, Default)]
pub struct DecodedBatch {
    pub points: Vec<StoredPoint>,
    /// Parallel to `points`.
    pub origins: Vec<Option<Arc<str>>>,
    pub malformed: usize,
}

/// Decodes raw CAM frames and recomputes their cells; bad frames are counted and skipped.
pub fn decode_frames(frames: &[BufferedFrame], grid: &HexGrid) -> DecodedBatch {
    let mut out = DecodedBatch {
        points: Vec::with_capacity(frames.len()),
        origins: Vec::with_capacity(frames.len()),
        malformed: 0,
    };
    for f in frames {
        match decode_cam(&f.raw, grid) {
            Ok(m) => {
                out.points.push(StoredPoint::from_cam(&m));
                out.origins.push(f.origin.clone());
            }
            Err(_) => out.malformed += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlushOutcome {
    pub report: FlushReport,
    pub directives: Vec<HandoverDirective>,
    pub stored: usize,
    pub malformed: usize,
    pub rejected: usize,
}

/// The single store writer of a MEC server. Owns the handover state.
#[derive(Debug)]
pub struct FlushWorker {
    core: Arc<MecCore>,
    handover: HandoverState,
    last_ts_ms: u64,
    last_prune_ms: Option<u64>,
}

impl FlushWorker {
    pub fn new(core: Arc<MecCore>) -> Self {
        let handover = HandoverState::new(core.handover_policy());
        Self { core, handover, last_ts_ms: 0, last_prune_ms: None }
    }

    pub fn core(&self) -> &Arc<MecCore> {
        &self.core
    }

    pub fn handover_state(&self) -> &HandoverState {
        &self.handover
    }

    pub fn flush(&mut self, now_ms: u64) -> FlushOutcome {
        let core = &*self.core;
        let frames = core.buffer.swap_out();
        if frames.is_empty() {
            core.counters.record_flush(&FlushReport::empty());
            return FlushOutcome {
                report: FlushReport::empty(),
                directives: Vec::new(),
                stored: 0,
                malformed: 0,
                rejected: 0,
            };
        }
        let count = frames.len();

        let t0 = Instant::now();
        let batch = decode_frames(&frames, core.grid());
        let t_decode_ms = t0.elapsed().as_secs_f64() * 1e3;
        drop(frames);

        // latest local position per vehicle, by generation time
        let mut candidates: HashMap<u32, (u64, f64, f64)> = HashMap::new();
        for (p, origin) in batch.points.iter().zip(&batch.origins) {
            match origin {
                None => {
                    let e = candidates.entry(p.station_id).or_insert((p.gen_time_ms, p.lat, p.lon));
                    if p.gen_time_ms >= e.0 {
                        *e = (p.gen_time_ms, p.lat, p.lon);
                    }
                }
                Some(o) => core.counters.record_mirrored(o),
            }
        }

        let n_points = batch.points.len();
        let ts = now_ms.max(self.last_ts_ms);
        let t1 = Instant::now();
        let inserted = core.store.write().insert_batch(batch.points, ts);
        let t_insertion_ms = t1.elapsed().as_secs_f64() * 1e3;
        self.last_ts_ms = ts;

        let (stored, rejected) = match inserted {
            Ok(r) => (r.count, 0),
            Err(StoreError::CapacityExceeded { .. }) => (0, n_points),
            Err(e) => {
                debug_assert!(false, "unexpected insert error {e}");
                (0, n_points)
            }
        };

        let report = FlushReport {
            count,
            t_decode_ms,
            t_insertion_ms,
            budget_ok: t_decode_ms + t_insertion_ms < core.t_buffer_ms() as f64,
        };
        core.counters.record_batch(stored, batch.malformed, rejected);
        core.counters.record_flush(&report);

        let mut directives = Vec::new();
        if !candidates.is_empty() {
            let desc = core.descriptor.read();
            if !desc.neighbors.is_empty() {
                let mut ids: Vec<_> = candidates.into_iter().collect();
                ids.sort_unstable_by_key(|(id, _)| *id);
                for (v, (_, lat, lon)) in ids {
                    let Ok(p) = GeoPoint::new(lat, lon) else { continue };
                    if let Some(d) = evaluate_handover(v, p, &desc, &mut self.handover, now_ms) {
                        directives.push(d);
                    }
                }
            }
        }
        core.counters.record_directives(directives.len());

        FlushOutcome { report, directives, stored, malformed: batch.malformed, rejected }
    }

    /// Prunes expired rows once per prune interval; returns the number removed.
    pub fn maybe_prune(&mut self, now_ms: u64) -> usize {
        let retention = self.core.retention();
        if let Some(last) = self.last_prune_ms {
            if now_ms.saturating_sub(last) < retention.prune_interval_ms {
                return 0;
            }
        }
        self.last_prune_ms = Some(now_ms);
        let cooldown = self.handover.policy.cooldown_ms;
        self.handover.forget_before(now_ms.saturating_sub(cooldown.saturating_mul(2)));
        self.core.store.write().prune(now_ms, &retention)
    }
}
