//! Double-buffered CAM intake.
//!
//! Producers append to the active buffer under a short lock; the flush
//! worker swaps the whole buffer out in O(1) and processes it without
//! holding the lock, so ingestion never waits on decoding or insertion.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::Mutex;
use thiserror::Error;

pub const DEFAULT_BUFFER_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferedFrame {
    pub raw: Bytes,
    pub arrival_ms: u64,
    /// `None` for the server's own feed, otherwise the neighbor it was mirrored from.
    pub origin: Option<Arc<str>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("active buffer full ({limit} frames); frame dropped")]
    BufferOverflow { limit: usize },
    #[error("topic is not a CAM feed topic")]
    NotAFeedTopic,
}

#[derive(Debug)]
pub struct FrameBuffer {
    active: Mutex<Vec<BufferedFrame>>,
    limit: usize,
    received: AtomicU64,
    overflow: AtomicU64,
}

impl Default for FrameBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_LIMIT)
    }
}

impl FrameBuffer {
    pub fn new(limit: usize) -> Self {
        Self {
            active: Mutex::new(Vec::with_capacity(limit.min(4096))),
            limit,
            received: AtomicU64::new(0),
            overflow: AtomicU64::new(0),
        }
    }

    pub fn push(&self, frame: BufferedFrame) -> Result<(), IngestError> {
        self.received.fetch_add(1, Ordering::Relaxed);
        let mut active = self.active.lock();
        if active.len() >= self.limit {
            drop(active);
            self.overflow.fetch_add(1, Ordering::Relaxed);
            return Err(IngestError::BufferOverflow { limit: self.limit });
        }
        active.push(frame);
        Ok(())
    }

    /// Hands the active buffer to the caller and leaves an empty one behind.
    pub fn swap_out(&self) -> Vec<BufferedFrame> {
        let mut active = self.active.lock();
        let cap = active.capacity().min(self.limit);
        std::mem::replace(&mut *active, Vec::with_capacity(cap))
    }

    pub fn len(&self) -> usize {
        self.active.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames offered on a valid feed topic, including overflow drops.
    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }

    pub fn overflow_drops(&self) -> u64 {
        self.overflow.load(Ordering::Relaxed)
    }
}
