//! MEC server process: embedded broker, ingest, flush scheduler, ITS
//! queries, registry session and border mirroring.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use edm_core::fleet::unix_ms;
use edm_core::mec::{BorderAction, BorderSubscriptions, FlushWorker, MecConfig, MecCore, MecDescriptor};
use edm_core::pubsub::TopicName;
use edm_core::{topics, GeoPoint};
use parking_lot::Mutex;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::broker::{BrokerConfig, BrokerServer, InternalSession};
use crate::client::{BrokerClient, Message};
use crate::NetError;

const BACKOFF_MIN: Duration = Duration::from_millis(100);
const BACKOFF_MAX: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct MecOptions {
    pub config: MecConfig,
    /// Address the embedded broker binds to.
    pub listen: String,
    pub registry: Option<String>,
    pub registry_id: String,
    pub broker: BrokerConfig,
}

impl MecOptions {
    pub fn new(config: MecConfig, listen: impl Into<String>) -> Self {
        Self {
            config,
            listen: listen.into(),
            registry: None,
            registry_id: topics::DEFAULT_REGISTRY_ID.to_owned(),
            broker: BrokerConfig::default(),
        }
    }
}

enum Control {
    Neighbors(Vec<MecDescriptor>),
    Republish,
}

/// A running MEC server.
#[derive(Debug)]
pub struct MecServer {
    core: Arc<MecCore>,
    broker: BrokerServer,
    stop: Arc<AtomicBool>,
    flusher: Option<thread::JoinHandle<FlushWorker>>,
    tasks: Vec<JoinHandle<()>>,
    control: mpsc::UnboundedSender<Control>,
    mirrors: Arc<Mutex<HashMap<String, usize>>>,
}

impl MecServer {
    /// Binds the broker and starts every activity. If the descriptor's
    /// endpoint port is 0 it is rewritten to the bound address.
    pub async fn start(mut opts: MecOptions) -> Result<Self, NetError> {
        let broker = BrokerServer::bind(&opts.listen, opts.broker).await?;
        let d = &mut opts.config.descriptor;
        if d.broker_endpoint.is_empty() || d.broker_endpoint.ends_with(":0") {
            d.broker_endpoint = broker.local_addr().to_string();
        }
        let core = MecCore::new(opts.config.clone()).map_err(NetError::Config)?;
        let id = core.mec_id().to_owned();
        let b = broker.broker();

        let feed = b.attach_internal_with(format!("{id}-ingest"), opts.config.buffer_limit);
        feed.subscribe(topics::feed_all(&id)?);
        let its = b.attach_internal(format!("{id}-its"));
        its.subscribe(topics::its_query_all(&id)?);

        let mut tasks = vec![
            tokio::spawn(ingest_loop(core.clone(), feed)),
            tokio::spawn(its_loop(core.clone(), its, b.config().max_payload)),
        ];

        let stop = Arc::new(AtomicBool::new(false));
        let flusher = {
            let (core, stop, broker) = (core.clone(), stop.clone(), b.clone());
            thread::Builder::new()
                .name(format!("{id}-flush"))
                .spawn(move || flush_loop(FlushWorker::new(core), &broker, &stop))?
        };

        let (control, rx) = mpsc::unbounded_channel();
        let mirrors = Arc::new(Mutex::new(HashMap::new()));
        let border = BorderTask { core: core.clone(), subs: BorderSubscriptions::new(), links: HashMap::new(), mirrors: mirrors.clone() };
        tasks.push(tokio::spawn(registry_loop(opts.registry.clone(), opts.registry_id.clone(), core.clone(), border, rx)));

        Ok(Self { core, broker, stop, flusher: Some(flusher), tasks, control, mirrors })
    }

    pub fn core(&self) -> &Arc<MecCore> {
        &self.core
    }

    pub fn endpoint(&self) -> String {
        self.core.descriptor().broker_endpoint
    }

    pub fn broker(&self) -> &BrokerServer {
        &self.broker
    }

    /// Border cells currently mirrored, per neighbor.
    pub fn mirrored_cells(&self) -> HashMap<String, usize> {
        self.mirrors.lock().clone()
    }

    /// Applies a neighbor list directly, as a registry notice would.
    pub fn set_neighbors(&self, neighbors: Vec<MecDescriptor>) {
        let _ = self.control.send(Control::Neighbors(neighbors));
    }

    /// Changes coverage and republishes the descriptor to the registry.
    pub fn set_coverage(&self, position: GeoPoint, r_optimal_m: f64, r_operating_m: f64) -> Result<(), NetError> {
        self.core.set_coverage(position, r_optimal_m, r_operating_m).map_err(|e| NetError::Config(e.to_string()))?;
        let _ = self.control.send(Control::Republish);
        Ok(())
    }

    /// Stops the scheduler after a final flush, disconnects every session
    /// and returns the flush worker for inspection.
    pub async fn shutdown(mut self) -> FlushWorker {
        self.stop.store(true, Ordering::Relaxed);
        let worker = self.flusher.take().map(|h| tokio::task::spawn_blocking(move || h.join()));
        let worker = match worker {
            Some(h) => h.await.ok().and_then(|r| r.ok()),
            None => None,
        };
        for t in &self.tasks {
            t.abort();
        }
        self.broker.shutdown();
        worker.unwrap_or_else(|| FlushWorker::new(self.core.clone()))
    }
}

impl Drop for MecServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in &self.tasks {
            t.abort();
        }
    }
}

async fn ingest_loop(core: Arc<MecCore>, feed: InternalSession) {
    while let Some(batch) = feed.recv().await {
        let now = unix_ms();
        for (topic, payload) in batch {
            // overflow is counted by the buffer
            let _ = core.ingest(payload, &topic, now);
        }
    }
}

async fn its_loop(core: Arc<MecCore>, its: InternalSession, max_payload: usize) {
    while let Some(batch) = its.recv().await {
        for (topic, payload) in batch {
            match core.answer(&topic, &payload, unix_ms(), max_payload) {
                Ok((resp, body)) => {
                    if let Err(e) = its.publish(&resp, body) {
                        tracing::warn!("ITS response on {resp} failed: {e}");
                    }
                }
                Err(e) => tracing::debug!("ignoring query on {topic}: {e}"),
            }
        }
    }
}

fn flush_loop(mut worker: FlushWorker, broker: &crate::Broker, stop: &AtomicBool) -> FlushWorker {
    let period = Duration::from_millis(worker.core().t_buffer_ms());
    let mec_id = worker.core().mec_id().to_owned();
    let mut next = Instant::now() + period;
    loop {
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        }
        let stopping = stop.load(Ordering::Relaxed);
        let now_ms = unix_ms();
        let out = worker.flush(now_ms);
        if out.report.count > 0 {
            tracing::info!(target: "edm::metrics", "{}", out.report.metrics_line());
        }
        for d in &out.directives {
            match topics::handover(&mec_id, d.station_id) {
                Ok(t) => {
                    let _ = broker.publish(&t, d.payload());
                }
                Err(e) => tracing::warn!("handover topic: {e}"),
            }
        }
        worker.maybe_prune(now_ms);
        if stopping {
            return worker;
        }
        // an overrun delays the next flush instead of stacking them
        let done = Instant::now();
        next += period;
        if next < done {
            next = done + period;
        }
    }
}

struct BorderTask {
    core: Arc<MecCore>,
    subs: BorderSubscriptions,
    links: HashMap<String, (BrokerClient, JoinHandle<()>)>,
    mirrors: Arc<Mutex<HashMap<String, usize>>>,
}

impl BorderTask {
    async fn apply_neighbors(&mut self, neighbors: Vec<MecDescriptor>) {
        self.core.set_neighbors(neighbors);
        let me = self.core.descriptor();
        for action in self.subs.reconcile(&me, self.core.grid()) {
            if let Err(e) = self.apply(action).await {
                tracing::warn!("border mirroring: {e}");
            }
        }
        let mut m = self.mirrors.lock();
        m.clear();
        for n in self.subs.neighbors() {
            let live = self.links.contains_key(n);
            m.insert(n.to_owned(), if live { self.subs.cells(n).map_or(0, |c| c.len()) } else { 0 });
        }
    }

    async fn apply(&mut self, action: BorderAction) -> Result<(), NetError> {
        match action {
            BorderAction::Connect(n) => {
                let id = format!("{}-mirror-{}", self.core.mec_id(), n.mec_id);
                let (client, rx) = BrokerClient::connect(n.broker_endpoint.as_str(), id).await?;
                let pump = tokio::spawn(mirror_loop(self.core.clone(), rx));
                if let Some((old, task)) = self.links.insert(n.mec_id.clone(), (client, pump)) {
                    task.abort();
                    old.disconnect().await;
                }
            }
            BorderAction::Subscribe { neighbor, cell } => {
                if let Some((c, _)) = self.links.get(&neighbor) {
                    c.subscribe(&topics::feed(&neighbor, cell)?.as_str().parse()?).await?;
                }
            }
            BorderAction::Unsubscribe { neighbor, cell } => {
                if let Some((c, _)) = self.links.get(&neighbor) {
                    c.unsubscribe(&topics::feed(&neighbor, cell)?.as_str().parse()?).await?;
                }
            }
            BorderAction::Disconnect { neighbor } => {
                if let Some((c, task)) = self.links.remove(&neighbor) {
                    task.abort();
                    c.disconnect().await;
                }
            }
        }
        Ok(())
    }
}

async fn mirror_loop(core: Arc<MecCore>, mut rx: mpsc::UnboundedReceiver<Message>) {
    while let Some(m) = rx.recv().await {
        let _ = core.ingest(m.payload, &m.topic, unix_ms());
    }
}

async fn registry_loop(
    registry: Option<String>,
    registry_id: String,
    core: Arc<MecCore>,
    mut border: BorderTask,
    mut control: mpsc::UnboundedReceiver<Control>,
) {
    let id = core.mec_id().to_owned();
    let Some(addr) = registry else {
        while let Some(c) = control.recv().await {
            if let Control::Neighbors(n) = c {
                border.apply_neighbors(n).await;
            }
        }
        return;
    };
    let mut backoff = BACKOFF_MIN;
    loop {
        match registry_session(&addr, &registry_id, &core, &mut border, &mut control).await {
            Ok(()) => return,
            Err(e) => {
                tracing::warn!(mec = %id, "registry {addr} unreachable: {e}; retrying in {backoff:?}");
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(BACKOFF_MAX);
            }
        }
    }
}

async fn registry_session(
    addr: &str,
    registry_id: &str,
    core: &MecCore,
    border: &mut BorderTask,
    control: &mut mpsc::UnboundedReceiver<Control>,
) -> Result<(), NetError> {
    let id = core.mec_id();
    let (client, mut rx) = BrokerClient::connect(addr, format!("{id}-registry")).await?;
    let notices = topics::neighbours(registry_id, id)?;
    client.subscribe(&notices.as_str().parse()?).await?;
    client.publish(&topics::mec_login(registry_id)?, Bytes::from(core.descriptor().to_line()))?;
    tracing::info!(mec = %id, "logged in to registry {addr}");
    let update = topics::mec_update(registry_id, id)?;
    loop {
        tokio::select! {
            m = rx.recv() => {
                let Some(m) = m else {
                    return Err(NetError::Closed(client.close_reason().unwrap_or_default()));
                };
                if m.topic == notices {
                    apply_notice(border, &m.topic, &m.payload).await;
                }
            }
            c = control.recv() => match c {
                Some(Control::Neighbors(n)) => border.apply_neighbors(n).await,
                Some(Control::Republish) => {
                    client.publish(&update, Bytes::from(core.descriptor().to_line()))?;
                    // geometry changed, so border cells may have too
                    let n = core.descriptor().neighbors;
                    border.apply_neighbors(n).await;
                }
                None => return Ok(()),
            },
        }
    }
}

async fn apply_notice(border: &mut BorderTask, topic: &TopicName, payload: &[u8]) {
    let text = String::from_utf8_lossy(payload);
    match MecDescriptor::parse_lines(&text) {
        Ok(list) => border.apply_neighbors(list).await,
        Err(e) => tracing::warn!("bad neighbour notice on {topic}: {e}"),
    }
}
