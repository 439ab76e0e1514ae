//! Length-prefixed broker frames.
//!
//! A frame is a 4-byte big-endian body length `N` followed by `N` body bytes.
//! The body starts with a one-byte kind tag; strings are a 2-byte big-endian
//! length followed by UTF-8. See `docs/wire.md`.

use bytes::{Buf, BufMut, Bytes, BytesMut};
use thiserror::Error;

use super::topic::{TopicError, TopicFilter, TopicName};

pub const DEFAULT_MAX_PAYLOAD: usize = 64 * 1024;
pub const LENGTH_PREFIX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Connect = 1,
    ConnAck = 2,
    Subscribe = 3,
    SubAck = 4,
    Publish = 5,
    Ping = 6,
    Pong = 7,
    Disconnect = 8,
    Unsubscribe = 9,
    UnsubAck = 10,
}

impl FrameKind {
    fn from_tag(tag: u8) -> Option<Self> {
        use FrameKind::*;
        Some(match tag {
            1 => Connect,
            2 => ConnAck,
            3 => Subscribe,
            4 => SubAck,
            5 => Publish,
            6 => Ping,
            7 => Pong,
            8 => Disconnect,
            9 => Unsubscribe,
            10 => UnsubAck,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Connect { client_id: String },
    ConnAck,
    Subscribe { filter: TopicFilter },
    SubAck { filter: TopicFilter },
    Publish { topic: TopicName, payload: Bytes },
    Ping,
    Pong,
    /// Empty reason for a clean close; otherwise the error that closed the session.
    Disconnect { reason: String },
    Unsubscribe { filter: TopicFilter },
    UnsubAck { filter: TopicFilter },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame body truncated")]
    Truncated,
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("empty frame body")]
    Empty,
    #[error("string is not valid utf-8")]
    Utf8,
    #[error("trailing bytes after frame body")]
    Trailing,
    #[error("frame length {len} exceeds limit {limit}")]
    TooLarge { len: usize, limit: usize },
    #[error(transparent)]
    Topic(#[from] TopicError),
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        match self {
            Frame::Connect { .. } => FrameKind::Connect,
            Frame::ConnAck => FrameKind::ConnAck,
            Frame::Subscribe { .. } => FrameKind::Subscribe,
            Frame::SubAck { .. } => FrameKind::SubAck,
            Frame::Publish { .. } => FrameKind::Publish,
            Frame::Ping => FrameKind::Ping,
            Frame::Pong => FrameKind::Pong,
            Frame::Disconnect { .. } => FrameKind::Disconnect,
            Frame::Unsubscribe { .. } => FrameKind::Unsubscribe,
            Frame::UnsubAck { .. } => FrameKind::UnsubAck,
        }
    }

    /// Appends the length prefix and body to `out`.
    pub fn encode(&self, out: &mut BytesMut) {
        let start = out.len();
        out.put_u32(0);
        out.put_u8(self.kind() as u8);
        match self {
            Frame::Connect { client_id } => put_str(out, client_id),
            Frame::Subscribe { filter }
            | Frame::SubAck { filter }
            | Frame::Unsubscribe { filter }
            | Frame::UnsubAck { filter } => put_str(out, filter.as_str()),
            Frame::Publish { topic, payload } => {
                put_str(out, topic.as_str());
                out.put_slice(payload);
            }
            Frame::Disconnect { reason } => put_str(out, reason),
            Frame::ConnAck | Frame::Ping | Frame::Pong => {}
        }
        let body_len = (out.len() - start - LENGTH_PREFIX) as u32;
        out[start..start + LENGTH_PREFIX].copy_from_slice(&body_len.to_be_bytes());
    }

    pub fn to_bytes(&self) -> Bytes {
        let mut b = BytesMut::new();
        self.encode(&mut b);
        b.freeze()
    }

    /// Decodes one frame body (without the length prefix).
    pub fn decode_body(mut body: Bytes) -> Result<Frame, FrameError> {
        if body.is_empty() {
            return Err(FrameError::Empty);
        }
        let tag = body.get_u8();
        let kind = FrameKind::from_tag(tag).ok_or(FrameError::UnknownKind(tag))?;
        let frame = match kind {
            FrameKind::Connect => Frame::Connect {
                client_id: get_str(&mut body)?,
            },
            FrameKind::ConnAck => Frame::ConnAck,
            FrameKind::Subscribe => Frame::Subscribe {
                filter: TopicFilter::new(get_str(&mut body)?)?,
            },
            FrameKind::SubAck => Frame::SubAck {
                filter: TopicFilter::new(get_str(&mut body)?)?,
            },
            FrameKind::Unsubscribe => Frame::Unsubscribe {
                filter: TopicFilter::new(get_str(&mut body)?)?,
            },
            FrameKind::UnsubAck => Frame::UnsubAck {
                filter: TopicFilter::new(get_str(&mut body)?)?,
            },
            FrameKind::Publish => {
                let topic = TopicName::new(get_str(&mut body)?)?;
                let payload = body.split_to(body.len());
                Frame::Publish { topic, payload }
            }
            FrameKind::Ping => Frame::Ping,
            FrameKind::Pong => Frame::Pong,
            FrameKind::Disconnect => Frame::Disconnect {
                reason: get_str(&mut body)?,
            },
        };
        if !body.is_empty() {
            return Err(FrameError::Trailing);
        }
        Ok(frame)
    }

    /// Tries to split one complete frame off the front of `buf`. Returns
    /// `Ok(None)` when more bytes are needed.
    pub fn decode_from(buf: &mut BytesMut, max_body: usize) -> Result<Option<Frame>, FrameError> {
        if buf.len() < LENGTH_PREFIX {
            return Ok(None);
        }
        let len = u32::from_be_bytes(buf[..LENGTH_PREFIX].try_into().unwrap()) as usize;
        if len > max_body {
            return Err(FrameError::TooLarge {
                len,
                limit: max_body,
            });
        }
        if buf.len() < LENGTH_PREFIX + len {
            buf.reserve(LENGTH_PREFIX + len - buf.len());
            return Ok(None);
        }
        buf.advance(LENGTH_PREFIX);
        let body = buf.split_to(len).freeze();
        Frame::decode_body(body).map(Some)
    }
}

/// Upper bound on a frame body carrying a payload of `max_payload` bytes.
pub fn max_body_len(max_payload: usize) -> usize {
    1 + 2 + super::topic::MAX_TOPIC_LEN + max_payload
}

fn put_str(out: &mut BytesMut, s: &str) {
    let bytes = s.as_bytes();
    let len = bytes.len().min(u16::MAX as usize);
    out.put_u16(len as u16);
    out.put_slice(&bytes[..len]);
}

fn get_str(body: &mut Bytes) -> Result<String, FrameError> {
    if body.len() < 2 {
        return Err(FrameError::Truncated);
    }
    let len = body.get_u16() as usize;
    if body.len() < len {
        return Err(FrameError::Truncated);
    }
    let raw = body.split_to(len);
    String::from_utf8(raw.to_vec()).map_err(|_| FrameError::Utf8)
}
