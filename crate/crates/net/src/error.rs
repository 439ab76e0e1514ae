use std::io;

use edm_core::pubsub::{BrokerError, FrameError, TopicError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("connection closed: {0}")]
    Closed(String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{0}")]
    Config(String),
}
