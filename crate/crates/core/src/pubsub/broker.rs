//! Transport-independent broker state.
//!
//! [`BrokerState::handle_frame`] turns one inbound frame into a list of
//! [`Effect`]s for the transport layer to carry out. Subscriptions live in a
//! segment trie so a publish touches only the branches its topic can reach.

use std::collections::{BTreeSet, HashMap, HashSet};

use bytes::Bytes;
use thiserror::Error;

use super::frame::{Frame, DEFAULT_MAX_PAYLOAD};
use super::topic::{FilterSegment, TopicFilter, TopicName};

pub type SessionId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// Queue `frame` on the session's outbound stream.
    Send { to: SessionId, frame: Frame },
    /// Close the session's transport once queued frames are written.
    Close { session: SessionId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("payload of {len} bytes exceeds limit {limit}")]
    PayloadTooLarge { len: usize, limit: usize },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerCounters {
    pub published: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug)]
struct Session {
    client_id: String,
    filters: HashSet<TopicFilter>,
}

#[derive(Debug, Default)]
struct TrieNode {
    children: HashMap<String, TrieNode>,
    single: Option<Box<TrieNode>>,
    /// Sessions subscribed with a filter ending here.
    exact: BTreeSet<SessionId>,
    /// Sessions subscribed with a filter ending in `#` at this level.
    multi: BTreeSet<SessionId>,
}

impl TrieNode {
    fn is_empty(&self) -> bool {
        self.children.is_empty() && self.single.is_none() && self.exact.is_empty() && self.multi.is_empty()
    }

    fn insert(&mut self, segs: &[FilterSegment], sid: SessionId) {
        match segs.split_first() {
            None => {
                self.exact.insert(sid);
            }
            Some((FilterSegment::Multi, _)) => {
                self.multi.insert(sid);
            }
            Some((FilterSegment::Single, rest)) => {
                self.single.get_or_insert_with(Default::default).insert(rest, sid)
            }
            Some((FilterSegment::Literal(l), rest)) => {
                self.children.entry(l.clone()).or_default().insert(rest, sid)
            }
        }
    }

    fn remove(&mut self, segs: &[FilterSegment], sid: SessionId) {
        match segs.split_first() {
            None => {
                self.exact.remove(&sid);
            }
            Some((FilterSegment::Multi, _)) => {
                self.multi.remove(&sid);
            }
            Some((FilterSegment::Single, rest)) => {
                if let Some(child) = self.single.as_mut() {
                    child.remove(rest, sid);
                    if child.is_empty() {
                        self.single = None;
                    }
                }
            }
            Some((FilterSegment::Literal(l), rest)) => {
                if let Some(child) = self.children.get_mut(l) {
                    child.remove(rest, sid);
                    if child.is_empty() {
                        self.children.remove(l);
                    }
                }
            }
        }
    }

    fn collect(&self, segs: &[&str], out: &mut BTreeSet<SessionId>) {
        if segs.is_empty() {
            out.extend(self.exact.iter().copied());
            return;
        }
        out.extend(self.multi.iter().copied());
        if let Some(child) = self.children.get(segs[0]) {
            child.collect(&segs[1..], out);
        }
        if let Some(child) = &self.single {
            child.collect(&segs[1..], out);
        }
    }
}

/// Live sessions, their subscriptions, and delivery counters of one broker.
#[derive(Debug)]
pub struct BrokerState {
    max_payload: usize,
    sessions: HashMap<SessionId, Session>,
    by_client: HashMap<String, SessionId>,
    trie: TrieNode,
    counters: BrokerCounters,
}

impl Default for BrokerState {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PAYLOAD)
    }
}

impl BrokerState {
    pub fn new(max_payload: usize) -> Self {
        Self {
            max_payload,
            sessions: HashMap::new(),
            by_client: HashMap::new(),
            trie: TrieNode::default(),
            counters: BrokerCounters::default(),
        }
    }

    pub fn max_payload(&self) -> usize {
        self.max_payload
    }

    pub fn counters(&self) -> BrokerCounters {
        self.counters
    }

    /// Outbound queue overflow is detected by the transport; it reports here.
    pub fn record_dropped(&mut self, n: u64) {
        self.counters.dropped += n;
    }

    pub fn is_connected(&self, session: SessionId) -> bool {
        self.sessions.contains_key(&session)
    }

    pub fn client_id(&self, session: SessionId) -> Option<&str> {
        self.sessions.get(&session).map(|s| s.client_id.as_str())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn subscriptions(&self, session: SessionId) -> Vec<TopicFilter> {
        let mut v: Vec<_> = self
            .sessions
            .get(&session)
            .map(|s| s.filters.iter().cloned().collect())
            .unwrap_or_default();
        v.sort();
        v
    }

    /// Sessions with at least one filter matching `topic`, ascending, each once.
    pub fn matching_sessions(&self, topic: &TopicName) -> Vec<SessionId> {
        let segs: Vec<&str> = topic.segments().collect();
        let mut out = BTreeSet::new();
        self.trie.collect(&segs, &mut out);
        out.into_iter().collect()
    }

    fn connect(&mut self, session: SessionId, client_id: String, effects: &mut Vec<Effect>) {
        if let Some(prev) = self.by_client.get(&client_id).copied() {
            if prev != session {
                self.drop_session(prev);
                effects.push(Effect::Send {
                    to: prev,
                    frame: Frame::Disconnect {
                        reason: format!("session taken over by new connection for {client_id}"),
                    },
                });
                effects.push(Effect::Close { session: prev });
            }
        }
        self.by_client.insert(client_id.clone(), session);
        self.sessions.insert(
            session,
            Session {
                client_id,
                filters: HashSet::new(),
            },
        );
        effects.push(Effect::Send {
            to: session,
            frame: Frame::ConnAck,
        });
    }

    /// Registers an in-process session that never sends frames itself.
    pub fn attach_internal(&mut self, session: SessionId, client_id: impl Into<String>) -> Vec<Effect> {
        let mut effects = Vec::new();
        self.connect(session, client_id.into(), &mut effects);
        effects.retain(|e| !matches!(e, Effect::Send { to, frame: Frame::ConnAck } if *to == session));
        effects
    }

    pub fn subscribe(&mut self, session: SessionId, filter: TopicFilter) -> bool {
        let Some(s) = self.sessions.get_mut(&session) else {
            return false;
        };
        if s.filters.insert(filter.clone()) {
            self.trie.insert(filter.segments(), session);
        }
        true
    }

    pub fn unsubscribe(&mut self, session: SessionId, filter: &TopicFilter) -> bool {
        let Some(s) = self.sessions.get_mut(&session) else {
            return false;
        };
        if s.filters.remove(filter) {
            self.trie.remove(filter.segments(), session);
        }
        true
    }

    /// Forgets a session whose transport went away. Idempotent.
    pub fn drop_session(&mut self, session: SessionId) {
        if let Some(s) = self.sessions.remove(&session) {
            for f in &s.filters {
                self.trie.remove(f.segments(), session);
            }
            if self.by_client.get(&s.client_id) == Some(&session) {
                self.by_client.remove(&s.client_id);
            }
        }
    }

    /// In-process publish, delivered exactly like a PUBLISH frame.
    pub fn publish(&mut self, topic: &TopicName, payload: Bytes) -> Result<Vec<Effect>, BrokerError> {
        if payload.len() > self.max_payload {
            return Err(BrokerError::PayloadTooLarge {
                len: payload.len(),
                limit: self.max_payload,
            });
        }
        let targets = self.matching_sessions(topic);
        self.counters.published += 1;
        self.counters.delivered += targets.len() as u64;
        Ok(targets
            .into_iter()
            .map(|to| Effect::Send {
                to,
                frame: Frame::Publish {
                    topic: topic.clone(),
                    payload: payload.clone(),
                },
            })
            .collect())
    }

    fn violation(&mut self, session: SessionId, reason: String) -> Vec<Effect> {
        self.drop_session(session);
        vec![
            Effect::Send {
                to: session,
                frame: Frame::Disconnect {
                    reason: format!("protocol violation: {reason}"),
                },
            },
            Effect::Close { session },
        ]
    }

    pub fn handle_frame(&mut self, session: SessionId, frame: Frame) -> Vec<Effect> {
        let connected = self.sessions.contains_key(&session);
        match frame {
            Frame::Connect { client_id } => {
                if connected {
                    return self.violation(session, "duplicate CONNECT".into());
                }
                if client_id.is_empty() {
                    return self.violation(session, "empty client id".into());
                }
                let mut effects = Vec::new();
                self.connect(session, client_id, &mut effects);
                effects
            }
            _ if !connected => self.violation(session, format!("{:?} before CONNECT", frame.kind())),
            Frame::Subscribe { filter } => {
                self.subscribe(session, filter.clone());
                vec![Effect::Send {
                    to: session,
                    frame: Frame::SubAck { filter },
                }]
            }
            Frame::Unsubscribe { filter } => {
                self.unsubscribe(session, &filter);
                vec![Effect::Send {
                    to: session,
                    frame: Frame::UnsubAck { filter },
                }]
            }
            Frame::Publish { topic, payload } => match self.publish(&topic, payload) {
                Ok(effects) => effects,
                Err(e) => self.violation(session, e.to_string()),
            },
            Frame::Ping => vec![Effect::Send {
                to: session,
                frame: Frame::Pong,
            }],
            Frame::Pong => Vec::new(),
            Frame::Disconnect { .. } => {
                self.drop_session(session);
                vec![Effect::Close { session }]
            }
            Frame::ConnAck | Frame::SubAck { .. } | Frame::UnsubAck { .. } => {
                self.violation(session, "server-only frame sent by client".into())
            }
        }
    }
}
