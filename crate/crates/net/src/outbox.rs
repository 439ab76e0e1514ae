//! Bounded per-session send queue that drops its oldest frame when full.

use std::collections::VecDeque;
use std::sync::Arc;

use edm_core::pubsub::Frame;
use parking_lot::Mutex;
use tokio::sync::Notify;

pub const DEFAULT_OUTBOX_CAPACITY: usize = 10_000;

#[derive(Debug)]
struct Inner {
    queue: VecDeque<Frame>,
    closed: bool,
    dropped: u64,
}

/// Single-consumer queue between a session's producers and its writer.
#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<Inner>,
    notify: Notify,
    capacity: usize,
}

impl Outbox {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new(Inner { queue: VecDeque::new(), closed: false, dropped: 0 }),
            notify: Notify::new(),
            capacity: capacity.max(1),
        })
    }

    /// Queues `frame`; returns true when an older frame was dropped for it.
    /// Frames pushed after [`Outbox::close`] are discarded silently.
    pub fn push(&self, frame: Frame) -> bool {
        let mut g = self.inner.lock();
        if g.closed {
            return false;
        }
        let dropped = g.queue.len() >= self.capacity;
        if dropped {
            g.queue.pop_front();
            g.dropped += 1;
        }
        g.queue.push_back(frame);
        drop(g);
        self.notify.notify_one();
        dropped
    }

    /// Queues `frame` and then closes; the writer flushes it before stopping.
    pub fn push_and_close(&self, frame: Frame) {
        let mut g = self.inner.lock();
        if !g.closed {
            g.queue.push_back(frame);
            g.closed = true;
        }
        drop(g);
        self.notify.notify_one();
    }

    pub fn close(&self) {
        self.inner.lock().closed = true;
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().dropped
    }

    /// Waits for queued frames and takes up to `max` of them. `None` once
    /// closed and drained.
    pub async fn next_batch(&self, max: usize) -> Option<Vec<Frame>> {
        loop {
            {
                let mut g = self.inner.lock();
                if !g.queue.is_empty() {
                    let n = g.queue.len().min(max.max(1));
                    return Some(g.queue.drain(..n).collect());
                }
                if g.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn drops_oldest_when_full() {
        let o = Outbox::new(2);
        assert!(!o.push(Frame::Ping));
        assert!(!o.push(Frame::Pong));
        assert!(o.push(Frame::ConnAck));
        assert_eq!(o.dropped(), 1);
        assert_eq!(o.next_batch(10).await.unwrap(), vec![Frame::Pong, Frame::ConnAck]);
    }

    #[tokio::test]
    async fn close_drains_then_ends() {
        let o = Outbox::new(8);
        o.push(Frame::Ping);
        o.push_and_close(Frame::Disconnect { reason: String::new() });
        assert!(!o.push(Frame::Pong));
        assert_eq!(o.next_batch(1).await.unwrap(), vec![Frame::Ping]);
        assert_eq!(o.next_batch(1).await.unwrap().len(), 1);
        assert_eq!(o.next_batch(1).await, None);
    }

    #[tokio::test]
    async fn wakes_a_waiting_consumer() {
        let o = Outbox::new(8);
        let o2 = o.clone();
        let h = tokio::spawn(async move { o2.next_batch(4).await });
        tokio::task::yield_now().await;
        o.push(Frame::Ping);
        assert_eq!(h.await.unwrap().unwrap(), vec![Frame::Ping]);
    }
}
