//! TCP transport around [`BrokerState`].
//!
//! Every session, remote or in-process, owns an [`Outbox`]. Frames from one
//! connection are handled in arrival order under the hub lock, which gives
//! per-publisher FIFO delivery.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bytes::{Bytes, BytesMut};
use edm_core::pubsub::{
    max_body_len, BrokerCounters, BrokerError, BrokerState, Effect, Frame, SessionId, TopicFilter, TopicName,
    DEFAULT_MAX_PAYLOAD,
};
use parking_lot::Mutex;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::task::JoinHandle;

use crate::outbox::{Outbox, DEFAULT_OUTBOX_CAPACITY};

const WRITE_BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrokerConfig {
    pub max_payload: usize,
    pub outbox_capacity: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self { max_payload: DEFAULT_MAX_PAYLOAD, outbox_capacity: DEFAULT_OUTBOX_CAPACITY }
    }
}

#[derive(Debug)]
struct Hub {
    state: BrokerState,
    sinks: HashMap<SessionId, Arc<Outbox>>,
}

impl Hub {
    fn apply(&mut self, effects: Vec<Effect>) {
        for e in effects {
            match e {
                Effect::Send { to, frame } => {
                    if let Some(o) = self.sinks.get(&to) {
                        if o.push(frame) {
                            self.state.record_dropped(1);
                        }
                    }
                }
                Effect::Close { session } => {
                    if let Some(o) = self.sinks.remove(&session) {
                        o.close();
                    }
                }
            }
        }
    }
}

/// Shared broker core; cheap to clone through `Arc`.
#[derive(Debug)]
pub struct Broker {
    hub: Mutex<Hub>,
    next_session: AtomicU64,
    config: BrokerConfig,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Arc<Self> {
        Arc::new(Self {
            hub: Mutex::new(Hub { state: BrokerState::new(config.max_payload), sinks: HashMap::new() }),
            next_session: AtomicU64::new(1),
            config,
        })
    }

    pub fn config(&self) -> BrokerConfig {
        self.config
    }

    pub fn counters(&self) -> BrokerCounters {
        self.hub.lock().state.counters()
    }

    pub fn session_count(&self) -> usize {
        self.hub.lock().state.session_count()
    }

    /// In-process publish; returns the number of deliveries.
    pub fn publish(&self, topic: &TopicName, payload: Bytes) -> Result<usize, BrokerError> {
        let mut hub = self.hub.lock();
        let effects = hub.state.publish(topic, payload)?;
        let n = effects.len();
        hub.apply(effects);
        Ok(n)
    }

    /// Registers an in-process session with the default outbox capacity.
    pub fn attach_internal(self: &Arc<Self>, client_id: impl Into<String>) -> InternalSession {
        self.attach_internal_with(client_id, self.config.outbox_capacity)
    }

    pub fn attach_internal_with(self: &Arc<Self>, client_id: impl Into<String>, capacity: usize) -> InternalSession {
        let id = self.next_session.fetch_add(1, Ordering::Relaxed);
        let outbox = Outbox::new(capacity);
        let mut hub = self.hub.lock();
        hub.sinks.insert(id, outbox.clone());
        let effects = hub.state.attach_internal(id, client_id);
        hub.apply(effects);
        InternalSession { broker: self.clone(), id, outbox }
    }

    fn detach(&self, id: SessionId) {
        let mut hub = self.hub.lock();
        hub.state.drop_session(id);
        if let Some(o) = hub.sinks.remove(&id) {
            o.close();
        }
    }

    /// Sends DISCONNECT to every session and closes them.
    pub fn disconnect_all(&self, reason: &str) {
        let mut hub = self.hub.lock();
        let ids: Vec<SessionId> = hub.sinks.keys().copied().collect();
        for id in ids {
            hub.state.drop_session(id);
            if let Some(o) = hub.sinks.remove(&id) {
                o.push_and_close(Frame::Disconnect { reason: reason.to_owned() });
            }
        }
    }

    /// Accepts connections until the listener fails or the task is aborted.
    pub async fn serve(self: Arc<Self>, listener: TcpListener) {
        loop {
            match listener.accept().await {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(self.clone().run_connection(stream));
                }
                Err(e) => {
                    tracing::warn!("accept failed: {e}");
                    tokio::time::sleep(std::time::Duration::from_millis(10)).await;
                }
            }
        }
    }

    async fn run_connection(self: Arc<Self>, stream: TcpStream) {
        let id = self.next_session.fetch_add(1, Ordering::Relaxed);
        let outbox = Outbox::new(self.config.outbox_capacity);
        self.hub.lock().sinks.insert(id, outbox.clone());
        let (rd, wr) = stream.into_split();
        let writer = tokio::spawn(write_loop(outbox.clone(), wr));
        if let Err(e) = self.read_loop(id, &outbox, rd).await {
            tracing::debug!("session {id} ended: {e}");
        }
        self.detach(id);
        let _ = writer.await;
    }

    async fn read_loop(&self, id: SessionId, outbox: &Outbox, mut rd: OwnedReadHalf) -> std::io::Result<()> {
        let max_body = max_body_len(self.config.max_payload);
        let mut buf = BytesMut::with_capacity(16 * 1024);
        loop {
            loop {
                match Frame::decode_from(&mut buf, max_body) {
                    Ok(Some(Frame::Disconnect { .. })) => return Ok(()),
                    Ok(Some(frame)) => {
                        let mut hub = self.hub.lock();
                        let effects = hub.state.handle_frame(id, frame);
                        hub.apply(effects);
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let mut hub = self.hub.lock();
                        hub.state.drop_session(id);
                        hub.sinks.remove(&id);
                        outbox.push_and_close(Frame::Disconnect { reason: format!("protocol violation: {e}") });
                        return Ok(());
                    }
                }
            }
            if outbox.is_closed() {
                return Ok(());
            }
            if rd.read_buf(&mut buf).await? == 0 {
                return Ok(());
            }
        }
    }
}

pub(crate) async fn write_loop(outbox: Arc<Outbox>, mut wr: OwnedWriteHalf) {
    let mut buf = BytesMut::with_capacity(16 * 1024);
    while let Some(batch) = outbox.next_batch(WRITE_BATCH).await {
        buf.clear();
        for f in &batch {
            f.encode(&mut buf);
        }
        if wr.write_all(&buf).await.is_err() {
            outbox.close();
            return;
        }
    }
    let _ = wr.shutdown().await;
}

/// A session living inside the broker process.
#[derive(Debug)]
pub struct InternalSession {
    broker: Arc<Broker>,
    id: SessionId,
    outbox: Arc<Outbox>,
}

impl InternalSession {
    pub fn id(&self) -> SessionId {
        self.id
    }

    /// Active as soon as this returns.
    pub fn subscribe(&self, filter: TopicFilter) -> bool {
        self.broker.hub.lock().state.subscribe(self.id, filter)
    }

    pub fn unsubscribe(&self, filter: &TopicFilter) -> bool {
        self.broker.hub.lock().state.unsubscribe(self.id, filter)
    }

    pub fn publish(&self, topic: &TopicName, payload: Bytes) -> Result<usize, BrokerError> {
        self.broker.publish(topic, payload)
    }

    /// Next deliveries in order; `None` once the session is closed.
    pub async fn recv(&self) -> Option<Vec<(TopicName, Bytes)>> {
        loop {
            let batch = self.outbox.next_batch(WRITE_BATCH).await?;
            let msgs: Vec<_> = batch
                .into_iter()
                .filter_map(|f| match f {
                    Frame::Publish { topic, payload } => Some((topic, payload)),
                    _ => None,
                })
                .collect();
            if !msgs.is_empty() {
                return Some(msgs);
            }
        }
    }

    pub fn dropped(&self) -> u64 {
        self.outbox.dropped()
    }
}

impl Drop for InternalSession {
    fn drop(&mut self) {
        self.broker.detach(self.id);
    }
}

/// A broker bound to a TCP listener.
#[derive(Debug)]
pub struct BrokerServer {
    broker: Arc<Broker>,
    local_addr: SocketAddr,
    accept: JoinHandle<()>,
}

impl BrokerServer {
    pub async fn bind(addr: impl ToSocketAddrs, config: BrokerConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let broker = Broker::new(config);
        let accept = tokio::spawn(broker.clone().serve(listener));
        Ok(Self { broker, local_addr, accept })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    /// Stops accepting and disconnects every session.
    pub fn shutdown(&self) {
        self.accept.abort();
        self.broker.disconnect_all("");
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
