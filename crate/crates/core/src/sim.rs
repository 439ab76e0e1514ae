//! In-process deployment on a virtual clock: MEC servers with their own
//! broker state, the registry and a fleet, wired together without sockets.
//! Used to test handover and border mirroring deterministically.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use bytes::Bytes;
use thiserror::Error;

use crate::cam::decode_fields;
use crate::fleet::Fleet;
use crate::mec::{
    BorderAction, BorderSubscriptions, FlushWorker, HandoverDirective, HandoverPolicy, MecConfig,
    MecCore, MecDescriptor,
};
use crate::pubsub::{BrokerState, Effect, Frame, SessionId, TopicFilter, TopicName, DEFAULT_MAX_PAYLOAD};
use crate::registry::{Publication, RegistryError, RegistryState};
use crate::{topics, HexGrid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("invalid MEC configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t_buffer_ms: u64,
    pub dt_ms: u64,
    pub handover: HandoverPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { t_buffer_ms: 50, dt_ms: 10, handover: HandoverPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub at_ms: u64,
    pub mec: String,
    pub station_id: u32,
    pub gen_time_ms: u64,
    pub mirrored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectiveEvent {
    pub at_ms: u64,
    pub from_mec: String,
    pub directive: HandoverDirective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Mec(usize),
    /// Session of MEC `.0` on a neighbor's broker.
    Mirror(usize),
    Vehicle(usize),
}

struct SimMec {
    core: Arc<MecCore>,
    worker: FlushWorker,
    broker: BrokerState,
    border: BorderSubscriptions,
    /// neighbor id → this MEC's session on that neighbor's broker
    mirrors: HashMap<String, SessionId>,
}

#[derive(Debug, Default)]
struct VehicleLink {
    /// (mec index, session) currently used for publishing
    active: Option<(usize, SessionId)>,
    /// previous connection, closed after the first publish on the new one
    retiring: Option<(usize, SessionId)>,
    inbox: VecDeque<(TopicName, Bytes)>,
}

pub struct Deployment {
    grid: HexGrid,
    cfg: SimConfig,
    now_ms: u64,
    mecs: Vec<SimMec>,
    by_id: HashMap<String, usize>,
    registry: RegistryState,
    fleet: Option<Fleet>,
    links: Vec<VehicleLink>,
    owners: HashMap<SessionId, Owner>,
    next_session: SessionId,
    receptions: Vec<Reception>,
    directives: Vec<DirectiveEvent>,
}

impl Deployment {
    pub fn new(grid: HexGrid, cfg: SimConfig, start_ms: u64) -> Self {
        Self {
            grid,
            cfg,
            now_ms: start_ms,
            mecs: Vec::new(),
            by_id: HashMap::new(),
            registry: RegistryState::default(),
            fleet: None,
            links: Vec::new(),
            owners: HashMap::new(),
            next_session: 1,
            receptions: Vec::new(),
            directives: Vec::new(),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn receptions(&self) -> &[Reception] {
        &self.receptions
    }

    pub fn directives(&self) -> &[DirectiveEvent] {
        &self.directives
    }

    pub fn mec(&self, id: &str) -> Option<&Arc<MecCore>> {
        self.by_id.get(id).map(|&i| &self.mecs[i].core)
    }

    pub fn fleet(&self) -> Option<&Fleet> {
        self.fleet.as_ref()
    }

    pub fn border_cells(&self, mec: &str, neighbor: &str) -> usize {
        self.by_id
            .get(mec)
            .and_then(|&i| self.mecs[i].border.cells(neighbor))
            .map_or(0, |c| c.len())
    }

    fn session(&mut self, owner: Owner) -> SessionId {
        let s = self.next_session;
        self.next_session += 1;
        self.owners.insert(s, owner);
        s
    }

    pub fn add_mec(&mut self, d: MecDescriptor) -> Result<(), SimError> {
        let mut cfg = MecConfig::new(d.shallow(), self.grid);
        cfg.t_buffer_ms = self.cfg.t_buffer_ms;
        cfg.handover = self.cfg.handover;
        let core = MecCore::new(cfg).map_err(SimError::Config)?;
        let idx = self.mecs.len();
        let internal = self.session(Owner::Mec(idx));
        let mut broker = BrokerState::new(DEFAULT_MAX_PAYLOAD);
        broker.attach_internal(internal, format!("{}-server", d.mec_id));
        broker.subscribe(internal, topics::feed_all(&d.mec_id).map_err(RegistryError::from)?);
        self.mecs.push(SimMec {
            worker: FlushWorker::new(core.clone()),
            core,
            broker,
            border: BorderSubscriptions::new(),
            mirrors: HashMap::new(),
        });
        self.by_id.insert(d.mec_id.clone(), idx);
        let notices = self.registry.register_mec(d, self.now_ms)?;
        self.apply_notices(notices);
        Ok(())
    }

    fn apply_notices(&mut self, notices: Vec<Publication>) {
        for n in notices {
            let Some(id) = n.topic.segments().last().map(str::to_owned) else { continue };
            let Some(&idx) = self.by_id.get(&id) else { continue };
            let text = String::from_utf8_lossy(&n.payload);
            let Ok(neighbors) = MecDescriptor::parse_lines(&text) else { continue };
            self.mecs[idx].core.set_neighbors(neighbors);
            let desc = self.mecs[idx].core.descriptor();
            let actions = self.mecs[idx].border.reconcile(&desc, &self.grid);
            for a in actions {
                self.apply_border(idx, a);
            }
        }
    }

    fn apply_border(&mut self, idx: usize, action: BorderAction) {
        match action {
            BorderAction::Connect(n) => {
                let Some(&nidx) = self.by_id.get(&n.mec_id) else { return };
                let s = self.session(Owner::Mirror(idx));
                let client = format!("{}-mirror", self.mecs[idx].core.mec_id());
                self.mecs[nidx].broker.handle_frame(s, Frame::Connect { client_id: client });
                self.mecs[idx].mirrors.insert(n.mec_id, s);
            }
            BorderAction::Subscribe { neighbor, cell } => {
                let (Some(&nidx), Some(&s)) = (self.by_id.get(&neighbor), self.mecs[idx].mirrors.get(&neighbor)) else {
                    return;
                };
                let filter = TopicFilter::from(topics::feed(&neighbor, cell).expect("valid feed topic"));
                self.mecs[nidx].broker.handle_frame(s, Frame::Subscribe { filter });
            }
            BorderAction::Unsubscribe { neighbor, cell } => {
                let (Some(&nidx), Some(&s)) = (self.by_id.get(&neighbor), self.mecs[idx].mirrors.get(&neighbor)) else {
                    return;
                };
                let filter = TopicFilter::from(topics::feed(&neighbor, cell).expect("valid feed topic"));
                self.mecs[nidx].broker.handle_frame(s, Frame::Unsubscribe { filter });
            }
            BorderAction::Disconnect { neighbor } => {
                if let (Some(&nidx), Some(s)) = (self.by_id.get(&neighbor), self.mecs[idx].mirrors.remove(&neighbor)) {
                    self.mecs[nidx].broker.handle_frame(s, Frame::Disconnect { reason: String::new() });
                    self.owners.remove(&s);
                }
            }
        }
    }

    /// Logs every vehicle in through the registry and connects it to its MEC.
    pub fn add_fleet(&mut self, mut fleet: Fleet) -> Result<(), RegistryError> {
        self.links = (0..fleet.len()).map(|_| VehicleLink::default()).collect();
        for v in 0..fleet.len() {
            let Some(login) = fleet.agents()[v].login_frame(self.now_ms.max(1)) else { continue };
            let cam = decode_fields(&login).expect("login frame decodes");
            let (_, publication) = self.registry.login_vehicle(&cam, self.now_ms)?;
            let resp = crate::registry::LoginResponse::parse(&publication.payload).expect("registry response parses");
            fleet.agent_mut(v).apply_login(&resp);
            let idx = self.by_id[&resp.mec_id];
            let s = self.connect_vehicle(v, idx, resp.vehicle_id);
            self.links[v].active = Some((idx, s));
        }
        self.fleet = Some(fleet);
        Ok(())
    }

    fn connect_vehicle(&mut self, v: usize, mec: usize, vehicle_id: u32) -> SessionId {
        let s = self.session(Owner::Vehicle(v));
        let mec_id = self.mecs[mec].core.mec_id().to_owned();
        let broker = &mut self.mecs[mec].broker;
        broker.handle_frame(s, Frame::Connect { client_id: format!("vehicle-{vehicle_id}") });
        let filter = TopicFilter::from(topics::handover(&mec_id, vehicle_id).expect("valid topic"));
        broker.handle_frame(s, Frame::Subscribe { filter });
        s
    }

    fn dispatch(&mut self, effects: Vec<Effect>) {
        for e in effects {
            let Effect::Send { to, frame: Frame::Publish { topic, payload } } = e else { continue };
            match self.owners.get(&to).copied() {
                Some(Owner::Mec(i)) | Some(Owner::Mirror(i)) => {
                    let core = &self.mecs[i].core;
                    let mirrored = topics::parse_feed(&topic).is_some_and(|(m, _)| m != core.mec_id());
                    if core.ingest(payload.clone(), &topic, self.now_ms).is_ok() {
                        if let Ok(f) = decode_fields(&payload) {
                            self.receptions.push(Reception {
                                at_ms: self.now_ms,
                                mec: core.mec_id().to_owned(),
                                station_id: f.station_id,
                                gen_time_ms: f.gen_time_ms,
                                mirrored,
                            });
                        }
                    }
                }
                Some(Owner::Vehicle(v)) => self.links[v].inbox.push_back((topic, payload)),
                None => {}
            }
        }
    }

    /// Advances the virtual clock by one tick.
    pub fn tick(&mut self) {
        self.now_ms += self.cfg.dt_ms;
        let now = self.now_ms;

        let emissions = self.fleet.as_mut().map(|f| f.step(now)).unwrap_or_default();
        for e in emissions {
            let link = &self.links[e.agent];
            let Some((mec, s)) = link.active else { continue };
            let effects = self.mecs[mec]
                .broker
                .handle_frame(s, Frame::Publish { topic: e.topic, payload: e.frame });
            self.dispatch(effects);
            if let Some((old_mec, old_s)) = self.links[e.agent].retiring.take() {
                self.mecs[old_mec].broker.handle_frame(old_s, Frame::Disconnect { reason: String::new() });
                self.owners.remove(&old_s);
            }
        }

        if now.is_multiple_of(self.cfg.t_buffer_ms) {
            for i in 0..self.mecs.len() {
                let out = self.mecs[i].worker.flush(now);
                self.mecs[i].worker.maybe_prune(now);
                let from = self.mecs[i].core.mec_id().to_owned();
                for d in out.directives {
                    let topic = topics::handover(&from, d.station_id).expect("valid topic");
                    let effects = self.mecs[i].broker.publish(&topic, d.payload()).unwrap_or_default();
                    self.directives.push(DirectiveEvent { at_ms: now, from_mec: from.clone(), directive: d });
                    self.dispatch(effects);
                }
            }
        }

        for v in 0..self.links.len() {
            while let Some((topic, payload)) = self.links[v].inbox.pop_front() {
                self.on_vehicle_message(v, &topic, &payload);
            }
        }
    }

    fn on_vehicle_message(&mut self, v: usize, topic: &TopicName, payload: &[u8]) {
        let Some(fleet) = self.fleet.as_mut() else { return };
        let agent = fleet.agent_mut(v);
        if !topic.segments().nth(1).is_some_and(|s| s == topics::HANDOVER) {
            return;
        }
        let Some(d) = HandoverDirective::parse_payload(agent.station_id, payload) else { return };
        let Some(target) = agent.handover_target(&d) else { return };
        // unknown target: stay on the current MEC
        let Some(&idx) = self.by_id.get(&target.mec_id) else { return };
        let vehicle_id = agent.station_id;
        // make before break: connect and subscribe first, then switch
        let s = self.connect_vehicle(v, idx, vehicle_id);
        self.fleet.as_mut().expect("fleet present").agent_mut(v).commit_handover(target);
        let link = &mut self.links[v];
        link.retiring = link.active.replace((idx, s));
    }

    pub fn run_until(&mut self, end_ms: u64) {
        while self.now_ms + self.cfg.dt_ms <= end_ms {
            self.tick();
        }
    }
}
