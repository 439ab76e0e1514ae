//! TCP client for the broker.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use bytes::{Bytes, BytesMut};
use edm_core::pubsub::{max_body_len, Frame, TopicFilter, TopicName, DEFAULT_MAX_PAYLOAD};
use parking_lot::Mutex;
use tokio::io::AsyncReadExt;
use tokio::net::tcp::OwnedReadHalf;
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::broker::write_loop;
use crate::outbox::{Outbox, DEFAULT_OUTBOX_CAPACITY};
use crate::NetError;

pub const ACK_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: TopicName,
    pub payload: Bytes,
}

type AckMap = HashMap<TopicFilter, VecDeque<oneshot::Sender<()>>>;

#[derive(Debug, Default)]
struct Pending {
    subacks: AckMap,
    unsubacks: AckMap,
    closed: Option<String>,
}

/// One broker connection. Messages arrive on the receiver returned by
/// [`BrokerClient::connect`].
#[derive(Debug)]
pub struct BrokerClient {
    client_id: String,
    outbox: Arc<Outbox>,
    pending: Arc<Mutex<Pending>>,
    reader: JoinHandle<()>,
    writer: Option<JoinHandle<()>>,
}

impl BrokerClient {
    pub async fn connect(
        addr: impl ToSocketAddrs,
        client_id: impl Into<String>,
    ) -> Result<(Self, mpsc::UnboundedReceiver<Message>), NetError> {
        let client_id = client_id.into();
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (mut rd, wr) = stream.into_split();
        let outbox = Outbox::new(DEFAULT_OUTBOX_CAPACITY);
        outbox.push(Frame::Connect { client_id: client_id.clone() });
        let writer = tokio::spawn(write_loop(outbox.clone(), wr));

        let max_body = max_body_len(DEFAULT_MAX_PAYLOAD);
        let mut buf = BytesMut::with_capacity(16 * 1024);
        let first = tokio::time::timeout(ACK_TIMEOUT, async {
            loop {
                if let Some(f) = Frame::decode_from(&mut buf, max_body)? {
                    return Ok::<_, NetError>(f);
                }
                if rd.read_buf(&mut buf).await? == 0 {
                    return Err(NetError::Closed("before CONNACK".into()));
                }
            }
        })
        .await
        .map_err(|_| NetError::Timeout("CONNACK"))??;
        match first {
            Frame::ConnAck => {}
            Frame::Disconnect { reason } => return Err(NetError::Closed(reason)),
            other => return Err(NetError::Protocol(format!("expected CONNACK, got {:?}", other.kind()))),
        }

        let (tx, rx) = mpsc::unbounded_channel();
        let pending = Arc::new(Mutex::new(Pending::default()));
        let reader = tokio::spawn(read_loop(rd, buf, max_body, tx, outbox.clone(), pending.clone()));
        Ok((Self { client_id, outbox, pending, reader, writer: Some(writer) }, rx))
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn is_closed(&self) -> bool {
        self.outbox.is_closed()
    }

    /// Why the connection closed, if it has.
    pub fn close_reason(&self) -> Option<String> {
        self.pending.lock().closed.clone()
    }

    /// Queues a PUBLISH without waiting for the socket.
    pub fn publish(&self, topic: &TopicName, payload: Bytes) -> Result<(), NetError> {
        if self.outbox.is_closed() {
            return Err(NetError::Closed(self.close_reason().unwrap_or_default()));
        }
        self.outbox.push(Frame::Publish { topic: topic.clone(), payload });
        Ok(())
    }

    /// Frames dropped because the send queue was full.
    pub fn dropped(&self) -> u64 {
        self.outbox.dropped()
    }

    pub async fn subscribe(&self, filter: &TopicFilter) -> Result<(), NetError> {
        let rx = self.expect_ack(filter, true)?;
        self.outbox.push(Frame::Subscribe { filter: filter.clone() });
        self.await_ack(rx, "SUBACK").await
    }

    pub async fn unsubscribe(&self, filter: &TopicFilter) -> Result<(), NetError> {
        let rx = self.expect_ack(filter, false)?;
        self.outbox.push(Frame::Unsubscribe { filter: filter.clone() });
        self.await_ack(rx, "UNSUBACK").await
    }

    fn expect_ack(&self, filter: &TopicFilter, sub: bool) -> Result<oneshot::Receiver<()>, NetError> {
        let mut p = self.pending.lock();
        if let Some(r) = &p.closed {
            return Err(NetError::Closed(r.clone()));
        }
        let (tx, rx) = oneshot::channel();
        let map = if sub { &mut p.subacks } else { &mut p.unsubacks };
        map.entry(filter.clone()).or_default().push_back(tx);
        Ok(rx)
    }

    async fn await_ack(&self, rx: oneshot::Receiver<()>, what: &'static str) -> Result<(), NetError> {
        match tokio::time::timeout(ACK_TIMEOUT, rx).await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(_)) => Err(NetError::Closed(self.close_reason().unwrap_or_default())),
            Err(_) => Err(NetError::Timeout(what)),
        }
    }

    /// Sends DISCONNECT after everything already queued and waits for the
    /// writer to finish.
    pub async fn disconnect(mut self) {
        self.outbox.push_and_close(Frame::Disconnect { reason: String::new() });
        if let Some(w) = self.writer.take() {
            let _ = tokio::time::timeout(ACK_TIMEOUT, w).await;
        }
        self.reader.abort();
    }
}

impl Drop for BrokerClient {
    fn drop(&mut self) {
        self.outbox.close();
        self.reader.abort();
    }
}

async fn read_loop(
    mut rd: OwnedReadHalf,
    mut buf: BytesMut,
    max_body: usize,
    tx: mpsc::UnboundedSender<Message>,
    outbox: Arc<Outbox>,
    pending: Arc<Mutex<Pending>>,
) {
    let reason = loop {
        match Frame::decode_from(&mut buf, max_body) {
            Ok(Some(Frame::Publish { topic, payload })) => {
                let _ = tx.send(Message { topic, payload });
                continue;
            }
            Ok(Some(Frame::SubAck { filter })) => {
                ack(&mut pending.lock().subacks, &filter);
                continue;
            }
            Ok(Some(Frame::UnsubAck { filter })) => {
                ack(&mut pending.lock().unsubacks, &filter);
                continue;
            }
            Ok(Some(Frame::Ping)) => {
                outbox.push(Frame::Pong);
                continue;
            }
            Ok(Some(Frame::Disconnect { reason })) => break reason,
            Ok(Some(_)) => continue,
            Ok(None) => {}
            Err(e) => break e.to_string(),
        }
        match rd.read_buf(&mut buf).await {
            Ok(0) => break "connection closed by peer".to_owned(),
            Ok(_) => {}
            Err(e) => break e.to_string(),
        }
    };
    if !reason.is_empty() {
        tracing::debug!("broker connection closed: {reason}");
    }
    let mut p = pending.lock();
    p.closed = Some(reason);
    p.subacks.clear();
    p.unsubacks.clear();
    drop(p);
    outbox.close();
}

fn ack(map: &mut AckMap, filter: &TopicFilter) {
    if let Some(q) = map.get_mut(filter) {
        if let Some(tx) = q.pop_front() {
            let _ = tx.send(());
        }
        if q.is_empty() {
            map.remove(filter);
        }
    }
}
