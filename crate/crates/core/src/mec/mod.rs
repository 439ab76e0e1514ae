//! MEC server logic, independent of any network runtime.
//!
//! [`MecCore`] is shared between broker callbacks (ingest), the single
//! [`FlushWorker`] (store writer) and query handlers (store readers).

mod border;
mod buffer;
mod descriptor;
mod flush;
mod handover;
mod its;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::{Mutex, RwLock};

pub use border::{border_cells, BorderAction, BorderSubscriptions};
pub use buffer::{BufferedFrame, FrameBuffer, IngestError, DEFAULT_BUFFER_LIMIT};
pub use descriptor::{DescriptorError, MecDescriptor};
pub use flush::{decode_frames, DecodedBatch, FlushOutcome, FlushReport, FlushWorker};
pub use handover::{
    evaluate_handover, HandoverDirective, HandoverPolicy, HandoverState, VehicleHandover,
    DEFAULT_COOLDOWN_MS, DEFAULT_MARGIN_M,
};
pub use its::{
    answer_query, format_query, parse_query, parse_response, response_csv, ItsError,
    PROXIMITY_APP, RESPONSE_CSV_HEADER,
};

use crate::pubsub::TopicName;
use crate::store::{EdmStore, RetentionConfig, SharedStore, StoreConfig};
use crate::{topics, GeoPoint, HexGrid};

pub const DEFAULT_T_BUFFER_MS: u64 = 50;

#[derive(Debug, Clone)]
pub struct MecConfig {
    pub descriptor: MecDescriptor,
    pub grid: HexGrid,
    pub t_buffer_ms: u64,
    pub retention: RetentionConfig,
    pub handover: HandoverPolicy,
    pub buffer_limit: usize,
    pub store: StoreConfig,
}

impl MecConfig {
    pub fn new(descriptor: MecDescriptor, grid: HexGrid) -> Self {
        Self {
            descriptor,
            grid,
            t_buffer_ms: DEFAULT_T_BUFFER_MS,
            retention: RetentionConfig::default(),
            handover: HandoverPolicy::default(),
            buffer_limit: DEFAULT_BUFFER_LIMIT,
            store: StoreConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.descriptor.validate().map_err(|e| e.to_string())?;
        self.retention.validate().map_err(|e| e.to_string())?;
        if self.t_buffer_ms == 0 {
            return Err("t_buffer_ms must be positive".into());
        }
        if self.handover.cooldown_ms == 0 || self.handover.margin_m.is_nan() || self.handover.margin_m < 0.0 {
            return Err("handover needs cooldown_ms > 0 and margin >= 0".into());
        }
        if self.buffer_limit == 0 {
            return Err("buffer limit must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MecCounters {
    stored: AtomicU64,
    malformed: AtomicU64,
    store_rejected: AtomicU64,
    mirrored: AtomicU64,
    flushes: AtomicU64,
    budget_ok_flushes: AtomicU64,
    directives: AtomicU64,
    mirrored_by_origin: Mutex<BTreeMap<String, u64>>,
}

impl MecCounters {
    fn record_batch(&self, stored: usize, malformed: usize, rejected: usize) {
        self.stored.fetch_add(stored as u64, Ordering::Relaxed);
        self.malformed.fetch_add(malformed as u64, Ordering::Relaxed);
        self.store_rejected.fetch_add(rejected as u64, Ordering::Relaxed);
    }

    fn record_flush(&self, r: &FlushReport) {
        self.flushes.fetch_add(1, Ordering::Relaxed);
        if r.budget_ok {
            self.budget_ok_flushes.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn record_mirrored(&self, origin: &str) {
        self.mirrored.fetch_add(1, Ordering::Relaxed);
        *self.mirrored_by_origin.lock().entry(origin.to_owned()).or_default() += 1;
    }

    fn record_directives(&self, n: usize) {
        self.directives.fetch_add(n as u64, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    /// Frames offered on a valid feed topic.
    pub received: u64,
    pub stored: u64,
    pub malformed: u64,
    pub overflow: u64,
    pub store_rejected: u64,
    /// Frames still in the active buffer.
    pub pending: u64,
    pub mirrored: u64,
    pub mirrored_by_origin: BTreeMap<String, u64>,
    pub flushes: u64,
    pub budget_ok_flushes: u64,
    pub directives: u64,
}

impl CounterSnapshot {
    /// Every received frame is accounted for exactly once.
    pub fn conserved(&self) -> bool {
        self.received
            == self.stored + self.malformed + self.overflow + self.store_rejected + self.pending
    }
}

#[derive(Debug)]
pub struct MecCore {
    mec_id: Arc<str>,
    descriptor: RwLock<MecDescriptor>,
    grid: HexGrid,
    t_buffer_ms: u64,
    retention: RetentionConfig,
    handover: HandoverPolicy,
    buffer: FrameBuffer,
    store: SharedStore,
    counters: MecCounters,
}

impl MecCore {
    pub fn new(cfg: MecConfig) -> Result<Arc<Self>, String> {
        cfg.validate()?;
        Ok(Arc::new(Self {
            mec_id: Arc::from(cfg.descriptor.mec_id.as_str()),
            store: EdmStore::new(cfg.grid, cfg.store).shared(),
            descriptor: RwLock::new(cfg.descriptor),
            grid: cfg.grid,
            t_buffer_ms: cfg.t_buffer_ms,
            retention: cfg.retention,
            handover: cfg.handover,
            buffer: FrameBuffer::new(cfg.buffer_limit),
            counters: MecCounters::default(),
        }))
    }

    pub fn mec_id(&self) -> &str {
        &self.mec_id
    }

    pub fn grid(&self) -> &HexGrid {
        &self.grid
    }

    pub fn t_buffer_ms(&self) -> u64 {
        self.t_buffer_ms
    }

    pub fn retention(&self) -> RetentionConfig {
        self.retention
    }

    pub fn handover_policy(&self) -> HandoverPolicy {
        self.handover
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn descriptor(&self) -> MecDescriptor {
        self.descriptor.read().clone()
    }

    /// Replaces the neighbor list (shallow copies, self excluded).
    pub fn set_neighbors(&self, neighbors: Vec<MecDescriptor>) {
        let mut d = self.descriptor.write();
        d.neighbors = neighbors
            .into_iter()
            .filter(|n| n.mec_id != d.mec_id)
            .map(|n| n.shallow())
            .collect();
    }

    /// Moves or resizes this server. The id and endpoint stay fixed; on error
    /// nothing changes.
    pub fn set_coverage(&self, position: GeoPoint, r_optimal_m: f64, r_operating_m: f64) -> Result<MecDescriptor, DescriptorError> {
        let mut d = self.descriptor.write();
        let mut next = d.clone();
        next.position = position;
        next.r_optimal_m = r_optimal_m;
        next.r_operating_m = r_operating_m;
        next.validate()?;
        *d = next;
        Ok(d.clone())
    }

    /// Appends a frame received on `<mec_id>/edm_feed/<cell>`. Frames on
    /// another server's feed are treated as mirrored from that server.
    pub fn ingest(&self, raw: Bytes, topic: &TopicName, arrival_ms: u64) -> Result<(), IngestError> {
        let (mec, _) = topics::parse_feed(topic).ok_or(IngestError::NotAFeedTopic)?;
        let origin = (mec != &*self.mec_id).then(|| Arc::<str>::from(mec));
        self.buffer.push(BufferedFrame { raw, arrival_ms, origin })
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    pub fn counters(&self) -> CounterSnapshot {
        let c = &self.counters;
        let load = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CounterSnapshot {
            received: self.buffer.received(),
            stored: load(&c.stored),
            malformed: load(&c.malformed),
            overflow: self.buffer.overflow_drops(),
            store_rejected: load(&c.store_rejected),
            pending: self.buffer.len() as u64,
            mirrored: load(&c.mirrored),
            mirrored_by_origin: c.mirrored_by_origin.lock().clone(),
            flushes: load(&c.flushes),
            budget_ok_flushes: load(&c.budget_ok_flushes),
            directives: load(&c.directives),
        }
    }

    /// Answers an ITS query against a read snapshot of the store, with a
    /// response body of at most `max_len` bytes.
    pub fn answer(
        &self,
        topic: &TopicName,
        payload: &[u8],
        now_ms: u64,
        max_len: usize,
    ) -> Result<(TopicName, Bytes), ItsError> {
        let store = self.store.read();
        answer_query(&store, topic, payload, now_ms, max_len)
    }
}
