//! Broker throughput: one publisher at a fixed rate, one subscriber checking
//! sequence continuity.

use std::time::{Duration, Instant};

use bytes::{BufMut, Bytes, BytesMut};
use edm_core::cam::CAM_FRAME_LEN;
use edm_core::pubsub::{TopicFilter, TopicName};

use crate::{BrokerClient, BrokerConfig, BrokerServer, NetError};

#[derive(Debug, Clone)]
pub struct ThroughputConfig {
    pub rate_per_s: u64,
    pub duration: Duration,
    pub payload_len: usize,
}

impl Default for ThroughputConfig {
    fn default() -> Self {
        Self { rate_per_s: 20_000, duration: Duration::from_secs(60), payload_len: CAM_FRAME_LEN }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThroughputReport {
    pub sent: u64,
    pub received: u64,
    /// Missing sequence numbers, including any never delivered.
    pub gaps: u64,
    pub out_of_order: u64,
    pub achieved_rate: f64,
    pub broker_dropped: u64,
    pub publisher_dropped: u64,
    pub elapsed_s: f64,
}

impl ThroughputReport {
    pub fn clean(&self) -> bool {
        self.gaps == 0 && self.out_of_order == 0 && self.received == self.sent
    }
}

/// Starts a loopback broker and pushes `rate_per_s` publishes through it.
pub async fn run_throughput(cfg: &ThroughputConfig) -> Result<ThroughputReport, NetError> {
    if cfg.payload_len < 8 {
        return Err(NetError::Config("payload must hold an 8-byte sequence number".into()));
    }
    let server = BrokerServer::bind("127.0.0.1:0", BrokerConfig::default()).await?;
    let topic = TopicName::new("bench/edm_feed/h0_0")?;
    let (sub, mut rx) = BrokerClient::connect(server.local_addr(), "tp-sub").await?;
    sub.subscribe(&TopicFilter::new(topic.as_str())?).await?;
    let (publ, _) = BrokerClient::connect(server.local_addr(), "tp-pub").await?;

    let recv = tokio::spawn(async move {
        let (mut received, mut gaps, mut ooo, mut expect) = (0u64, 0u64, 0u64, 0u64);
        while let Some(m) = rx.recv().await {
            let seq = u64::from_le_bytes(m.payload[..8].try_into().expect("8-byte prefix"));
            if seq == u64::MAX {
                break;
            }
            received += 1;
            if seq > expect {
                gaps += seq - expect;
            } else if seq < expect {
                ooo += 1;
                continue;
            }
            expect = seq + 1;
        }
        (received, gaps, ooo, expect)
    });

    let mut payload = BytesMut::zeroed(cfg.payload_len);
    let t0 = Instant::now();
    let mut sent = 0u64;
    let mut tick = tokio::time::interval(Duration::from_millis(1));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
    while t0.elapsed() < cfg.duration {
        tick.tick().await;
        let due = (t0.elapsed().as_secs_f64().min(cfg.duration.as_secs_f64()) * cfg.rate_per_s as f64) as u64;
        while sent < due {
            payload[..8].copy_from_slice(&sent.to_le_bytes());
            publ.publish(&topic, Bytes::copy_from_slice(&payload))?;
            sent += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let mut end = BytesMut::with_capacity(cfg.payload_len);
    end.put_u64_le(u64::MAX);
    end.resize(cfg.payload_len, 0);
    publ.publish(&topic, end.freeze())?;
    let publisher_dropped = publ.dropped();

    let (received, gaps, out_of_order, expect) = tokio::time::timeout(Duration::from_secs(10), recv)
        .await
        .map_err(|_| NetError::Timeout("end marker"))?
        .map_err(|e| NetError::Closed(e.to_string()))?;
    let broker_dropped = server.broker().counters().dropped;
    publ.disconnect().await;
    sub.disconnect().await;
    Ok(ThroughputReport {
        sent,
        received,
        gaps: gaps + sent.saturating_sub(expect),
        out_of_order,
        achieved_rate: received as f64 / elapsed,
        broker_dropped,
        publisher_dropped,
        elapsed_s: elapsed,
    })
}
