//! Drives a [`Fleet`] against real brokers: login through the registry, one
//! connection per agent, CAMs at the agent's rate and make-before-break
//! handover.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use edm_core::fleet::{unix_ms, Assignment, Fleet};
use edm_core::mec::HandoverDirective;
use edm_core::pubsub::{TopicFilter, TopicName};
use edm_core::registry::LoginResponse;
use edm_core::topics;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::client::{BrokerClient, Message};
use crate::NetError;

#[derive(Debug, Clone)]
pub struct FleetOptions {
    pub registry: String,
    pub registry_id: String,
    pub tick: Duration,
    /// A login without a response after this long is sent again.
    pub login_retry: Duration,
}

impl FleetOptions {
    pub fn new(registry: impl Into<String>) -> Self {
        Self {
            registry: registry.into(),
            registry_id: topics::DEFAULT_REGISTRY_ID.to_owned(),
            tick: Duration::from_millis(10),
            login_retry: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Default)]
pub struct FleetStats {
    pub logins: AtomicU64,
    pub published: AtomicU64,
    pub publish_errors: AtomicU64,
    pub handovers: AtomicU64,
    pub failed_handovers: AtomicU64,
    pub reconnects: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FleetSnapshot {
    pub logins: u64,
    pub published: u64,
    pub publish_errors: u64,
    pub handovers: u64,
    pub failed_handovers: u64,
    pub reconnects: u64,
}

impl FleetStats {
    pub fn snapshot(&self) -> FleetSnapshot {
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        FleetSnapshot {
            logins: l(&self.logins),
            published: l(&self.published),
            publish_errors: l(&self.publish_errors),
            handovers: l(&self.handovers),
            failed_handovers: l(&self.failed_handovers),
            reconnects: l(&self.reconnects),
        }
    }
}

/// Handle to a running fleet.
#[derive(Debug)]
pub struct FleetHandle {
    stats: Arc<FleetStats>,
    stop: watch::Sender<bool>,
    task: JoinHandle<Result<Fleet, NetError>>,
}

impl FleetHandle {
    pub fn stats(&self) -> FleetSnapshot {
        self.stats.snapshot()
    }

    /// Stops publishing, closes every connection and returns the fleet.
    pub async fn stop(self) -> Result<Fleet, NetError> {
        let _ = self.stop.send(true);
        self.task.await.map_err(|e| NetError::Closed(e.to_string()))?
    }

    pub fn is_finished(&self) -> bool {
        self.task.is_finished()
    }
}

/// Starts the fleet; returns once the registry connection is up.
pub async fn spawn_fleet(fleet: Fleet, opts: FleetOptions) -> Result<FleetHandle, NetError> {
    let (login, login_rx) = BrokerClient::connect(opts.registry.as_str(), format!("fleet-login-{}", std::process::id())).await?;
    login.subscribe(&TopicFilter::new(format!("{}/login_response/+", opts.registry_id))?).await?;
    let stats = Arc::new(FleetStats::default());
    let (stop, stop_rx) = watch::channel(false);
    let runner = Runner::new(fleet, opts, login, stats.clone());
    let task = tokio::spawn(runner.run(login_rx, stop_rx));
    Ok(FleetHandle { stats, stop, task })
}

enum Event {
    Connected { agent: usize, purpose: Purpose, link: Result<Link, NetError> },
    Inbound { agent: usize, epoch: u64, msg: Message },
}

enum Purpose {
    Login(LoginResponse),
    Handover(Assignment),
}

struct Link {
    client: Arc<BrokerClient>,
    pump: JoinHandle<()>,
    epoch: u64,
}

impl Link {
    async fn close(self) {
        self.pump.abort();
        if let Ok(c) = Arc::try_unwrap(self.client) {
            c.disconnect().await;
        }
    }
}

#[derive(Default)]
struct Slot {
    link: Option<Link>,
    /// Previous connection, closed after the first publish on the new one.
    retiring: Option<Link>,
    login_sent_ms: Option<u64>,
    connecting: bool,
}

struct Runner {
    fleet: Fleet,
    opts: FleetOptions,
    login: BrokerClient,
    login_topic: TopicName,
    stats: Arc<FleetStats>,
    slots: Vec<Slot>,
    by_nonce: HashMap<u32, usize>,
    events_tx: mpsc::UnboundedSender<Event>,
    events_rx: mpsc::UnboundedReceiver<Event>,
    next_epoch: u64,
}

impl Runner {
    fn new(fleet: Fleet, opts: FleetOptions, login: BrokerClient, stats: Arc<FleetStats>) -> Self {
        let (events_tx, events_rx) = mpsc::unbounded_channel();
        let login_topic = topics::vehicle_login(&opts.registry_id).expect("registry id is a valid segment");
        Self {
            slots: (0..fleet.len()).map(|_| Slot::default()).collect(),
            by_nonce: fleet.by_nonce(),
            fleet,
            opts,
            login,
            login_topic,
            stats,
            events_tx,
            events_rx,
            next_epoch: 1,
        }
    }

    async fn run(mut self, mut login_rx: mpsc::UnboundedReceiver<Message>, mut stop: watch::Receiver<bool>) -> Result<Fleet, NetError> {
        let mut tick = tokio::time::interval(self.opts.tick);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                biased;
                _ = stop.changed() => break,
                m = login_rx.recv() => match m {
                    Some(m) => self.on_login_response(m),
                    None => return Err(NetError::Closed("registry connection lost".into())),
                },
                Some(ev) = self.events_rx.recv() => self.on_event(ev).await,
                _ = tick.tick() => self.on_tick().await,
            }
        }
        self.login.disconnect().await;
        for s in &mut self.slots {
            if let Some(l) = s.retiring.take() {
                l.close().await;
            }
            if let Some(l) = s.link.take() {
                l.close().await;
            }
        }
        Ok(self.fleet)
    }

    async fn on_tick(&mut self) {
        let now = unix_ms();
        for i in 0..self.slots.len() {
            self.check_link(i);
            let a = &self.fleet.agents()[i];
            let slot = &mut self.slots[i];
            if a.is_logged_in() || slot.connecting || !a.is_active() {
                continue;
            }
            let due = slot.login_sent_ms.is_none_or(|t| now >= t + self.opts.login_retry.as_millis() as u64);
            if due {
                if let Some(frame) = a.login_frame(now) {
                    if self.login.publish(&self.login_topic, frame).is_ok() {
                        slot.login_sent_ms = Some(now);
                    }
                }
            }
        }
        for e in self.fleet.step(now) {
            let slot = &mut self.slots[e.agent];
            let Some(link) = &slot.link else { continue };
            let client = link.client.clone();
            let delay = e.send_at_ms.saturating_sub(now);
            let stats = self.stats.clone();
            if delay == 0 {
                publish(&client, &e.topic, e.frame, &stats);
            } else {
                tokio::spawn(async move {
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                    publish(&client, &e.topic, e.frame, &stats);
                });
            }
            if let Some(old) = slot.retiring.take() {
                tokio::spawn(old.close());
            }
        }
    }

    /// A dead connection sends the agent back through login.
    fn check_link(&mut self, i: usize) {
        let slot = &mut self.slots[i];
        if slot.link.as_ref().is_some_and(|l| l.client.is_closed()) {
            slot.link = None;
            slot.login_sent_ms = None;
            let a = self.fleet.agent_mut(i);
            a.assigned = None;
            a.station_id = a.nonce;
            self.stats.reconnects.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn on_login_response(&mut self, m: Message) {
        let Some(nonce) = m.topic.segments().last().and_then(|s| s.parse::<u32>().ok()) else { return };
        let Some(&i) = self.by_nonce.get(&nonce) else { return };
        let Some(resp) = LoginResponse::parse(&m.payload) else {
            tracing::warn!("bad login response on {}", m.topic);
            return;
        };
        let slot = &mut self.slots[i];
        if slot.connecting || self.fleet.agents()[i].is_logged_in() {
            return;
        }
        slot.connecting = true;
        let (endpoint, mec, vid) = (resp.endpoint.clone(), resp.mec_id.clone(), resp.vehicle_id);
        self.connect(i, endpoint, mec, vid, Purpose::Login(resp));
    }

    fn connect(&mut self, agent: usize, endpoint: String, mec: String, station_id: u32, purpose: Purpose) {
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        let tx = self.events_tx.clone();
        let label = self.fleet.agents()[agent].label.clone();
        tokio::spawn(async move {
            let link = open_link(&endpoint, &mec, station_id, &label, agent, epoch, tx.clone()).await;
            let _ = tx.send(Event::Connected { agent, purpose, link });
        });
    }

    async fn on_event(&mut self, ev: Event) {
        match ev {
            Event::Connected { agent, purpose, link } => {
                self.slots[agent].connecting = false;
                match (purpose, link) {
                    (Purpose::Login(resp), Ok(link)) => {
                        self.fleet.agent_mut(agent).apply_login(&resp);
                        if let Some(old) = self.slots[agent].link.replace(link) {
                            old.close().await;
                        }
                        self.stats.logins.fetch_add(1, Ordering::Relaxed);
                    }
                    (Purpose::Handover(a), Ok(link)) => {
                        self.fleet.agent_mut(agent).commit_handover(a);
                        let slot = &mut self.slots[agent];
                        slot.retiring = slot.link.replace(link);
                        self.stats.handovers.fetch_add(1, Ordering::Relaxed);
                    }
                    (Purpose::Login(_), Err(e)) => {
                        tracing::warn!("agent {agent}: MEC unreachable after login: {e}");
                        self.slots[agent].login_sent_ms = None;
                    }
                    (Purpose::Handover(a), Err(e)) => {
                        tracing::warn!("agent {agent}: handover target {} unreachable: {e}", a.mec_id);
                        self.stats.failed_handovers.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            Event::Inbound { agent, epoch, msg } => {
                let slot = &self.slots[agent];
                if slot.connecting || slot.link.as_ref().map(|l| l.epoch) != Some(epoch) {
                    return;
                }
                let a = &self.fleet.agents()[agent];
                let Some(d) = HandoverDirective::parse_payload(a.station_id, &msg.payload) else { return };
                if let Some(target) = a.handover_target(&d) {
                    self.slots[agent].connecting = true;
                    let (ep, mec, sid) = (target.endpoint.clone(), target.mec_id.clone(), a.station_id);
                    self.connect(agent, ep, mec, sid, Purpose::Handover(target));
                }
            }
        }
    }
}

fn publish(client: &BrokerClient, topic: &TopicName, frame: bytes::Bytes, stats: &FleetStats) {
    match client.publish(topic, frame) {
        Ok(()) => stats.published.fetch_add(1, Ordering::Relaxed),
        Err(_) => stats.publish_errors.fetch_add(1, Ordering::Relaxed),
    };
}

async fn open_link(
    endpoint: &str,
    mec: &str,
    station_id: u32,
    label: &str,
    agent: usize,
    epoch: u64,
    tx: mpsc::UnboundedSender<Event>,
) -> Result<Link, NetError> {
    let (client, mut rx) = tokio::time::timeout(
        crate::client::ACK_TIMEOUT,
        BrokerClient::connect(endpoint, format!("{label}-{station_id}-{epoch}")),
    )
    .await
    .map_err(|_| NetError::Timeout("connect"))??;
    let filter = TopicFilter::new(topics::handover(mec, station_id)?.as_str())?;
    client.subscribe(&filter).await?;
    let pump = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if tx.send(Event::Inbound { agent, epoch, msg }).is_err() {
                return;
            }
        }
    });
    Ok(Link { client: Arc::new(client), pump, epoch })
}
