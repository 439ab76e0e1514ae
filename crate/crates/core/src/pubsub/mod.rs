//! Hierarchical-topic publish/subscribe: topic grammar, wire frames and the
//! broker state machine. Transport lives in `edm-net`.

pub mod broker;
pub mod frame;
pub mod topic;

pub use broker::{BrokerCounters, BrokerError, BrokerState, Effect, SessionId};
pub use frame::{max_body_len, Frame, FrameError, FrameKind, DEFAULT_MAX_PAYLOAD};
pub use topic::{topic_matches, FilterSegment, TopicError, TopicFilter, TopicName};
