//! Registry process: embedded broker plus a single owner task that applies
//! MEC logins, MEC updates and vehicle logins in arrival order.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use edm_core::cam::decode_fields;
use edm_core::fleet::unix_ms;
use edm_core::mec::MecDescriptor;
use edm_core::pubsub::{TopicName, TopicFilter};
use edm_core::registry::{Publication, RegistryError, RegistryState};
use edm_core::topics;
use parking_lot::Mutex;
use tokio::task::JoinHandle;

use crate::broker::{Broker, BrokerConfig, BrokerServer, InternalSession};
use crate::NetError;

pub const DEFAULT_SNAPSHOT_INTERVAL: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct RegistryOptions {
    pub listen: String,
    pub registry_id: String,
    pub snapshot: Option<PathBuf>,
    pub snapshot_interval: Duration,
    pub broker: BrokerConfig,
}

impl RegistryOptions {
    pub fn new(listen: impl Into<String>) -> Self {
        Self {
            listen: listen.into(),
            registry_id: topics::DEFAULT_REGISTRY_ID.to_owned(),
            snapshot: None,
            snapshot_interval: DEFAULT_SNAPSHOT_INTERVAL,
            broker: BrokerConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct RegistryServer {
    broker: BrokerServer,
    state: Arc<Mutex<RegistryState>>,
    snapshot: Option<PathBuf>,
    tasks: Vec<JoinHandle<()>>,
}

impl RegistryServer {
    /// Loads the snapshot if one exists, binds the broker and starts serving.
    pub async fn start(opts: RegistryOptions) -> Result<Self, NetError> {
        let state = match &opts.snapshot {
            Some(p) if p.exists() => {
                let text = std::fs::read_to_string(p)?;
                let s = RegistryState::from_snapshot_csv(&opts.registry_id, &text)
                    .map_err(|e| NetError::Config(format!("{}: {e}", p.display())))?;
                tracing::info!("restored {} MECs from {}", s.mec_count(), p.display());
                s
            }
            _ => RegistryState::new(&opts.registry_id),
        };
        let state = Arc::new(Mutex::new(state));
        let broker = BrokerServer::bind(&opts.listen, opts.broker).await?;
        let rid = &opts.registry_id;
        let session = broker.broker().attach_internal(format!("{rid}-owner"));
        for f in [
            TopicFilter::new(topics::mec_login(rid)?.as_str())?,
            topics::mec_update_all(rid)?,
            TopicFilter::new(topics::vehicle_login(rid)?.as_str())?,
        ] {
            session.subscribe(f);
        }
        let mut tasks = vec![tokio::spawn(owner_loop(rid.clone(), state.clone(), session))];
        if let Some(p) = opts.snapshot.clone() {
            let st = state.clone();
            let every = opts.snapshot_interval;
            tasks.push(tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                tick.tick().await;
                loop {
                    tick.tick().await;
                    if let Err(e) = write_snapshot(&p, &st.lock().snapshot_csv()) {
                        tracing::warn!("snapshot {}: {e}", p.display());
                    }
                }
            }));
        }
        Ok(Self { broker, state, snapshot: opts.snapshot, tasks })
    }

    pub fn endpoint(&self) -> String {
        self.broker.local_addr().to_string()
    }

    pub fn broker(&self) -> &Arc<Broker> {
        self.broker.broker()
    }

    /// Runs `f` against a consistent view of the registry.
    pub fn with_state<R>(&self, f: impl FnOnce(&RegistryState) -> R) -> R {
        f(&self.state.lock())
    }

    /// Writes a final snapshot and disconnects every session.
    pub fn shutdown(&self) -> Result<(), NetError> {
        for t in &self.tasks {
            t.abort();
        }
        self.broker.shutdown();
        if let Some(p) = &self.snapshot {
            write_snapshot(p, &self.state.lock().snapshot_csv())?;
        }
        Ok(())
    }
}

impl Drop for RegistryServer {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

/// Replaces `path` atomically through a sibling temp file.
pub fn write_snapshot(path: &Path, text: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}

async fn owner_loop(registry_id: String, state: Arc<Mutex<RegistryState>>, session: InternalSession) {
    let login = topics::mec_login(&registry_id).ok();
    let vehicle = topics::vehicle_login(&registry_id).ok();
    while let Some(batch) = session.recv().await {
        for (topic, payload) in batch {
            let now = unix_ms();
            let result = {
                let mut s = state.lock();
                if Some(&topic) == vehicle.as_ref() {
                    vehicle_login(&mut s, &payload, now)
                } else if Some(&topic) == login.as_ref() {
                    mec_login(&mut s, &payload, now)
                } else {
                    mec_update(&mut s, &topic, &payload, now)
                }
            };
            match result {
                Ok(pubs) => {
                    for p in pubs {
                        if let Err(e) = session.publish(&p.topic, p.payload) {
                            tracing::warn!("publish {}: {e}", p.topic);
                        }
                    }
                }
                Err(e) => tracing::warn!("rejected message on {topic}: {e}"),
            }
        }
    }
}

fn parse_descriptor(payload: &[u8]) -> Result<MecDescriptor, RegistryError> {
    let text = String::from_utf8_lossy(payload);
    Ok(MecDescriptor::parse_line(text.trim())?)
}

fn mec_login(s: &mut RegistryState, payload: &[u8], now: u64) -> Result<Vec<Publication>, RegistryError> {
    let d = parse_descriptor(payload)?;
    tracing::info!("MEC {} logged in at {}", d.mec_id, d.broker_endpoint);
    s.register_mec(d, now)
}

fn mec_update(s: &mut RegistryState, topic: &TopicName, payload: &[u8], now: u64) -> Result<Vec<Publication>, RegistryError> {
    let d = parse_descriptor(payload)?;
    if topic.segments().nth(2) != Some(d.mec_id.as_str()) {
        return Err(RegistryError::UnknownMec(d.mec_id));
    }
    // the echo of an update is identical, so it is not echoed again
    let changed = s.mec(&d.mec_id).map(|cur| cur.to_line()) != Some(d.to_line());
    let id = d.mec_id.clone();
    let mut pubs = s.update_mec(d, now)?;
    if changed {
        pubs.push(s.update_echo(&id)?);
    }
    Ok(pubs)
}

fn vehicle_login(s: &mut RegistryState, payload: &[u8], now: u64) -> Result<Vec<Publication>, RegistryError> {
    let cam = decode_fields(payload).map_err(|e| RegistryError::InvalidPosition(e.to_string()))?;
    let (_, p) = s.login_vehicle(&cam, now)?;
    Ok(vec![p])
}
