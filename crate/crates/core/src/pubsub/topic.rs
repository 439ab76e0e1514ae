use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const MAX_TOPIC_LEN: usize = 256;
const SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic longer than {MAX_TOPIC_LEN} bytes")]
    TooLong,
    #[error("empty segment in {0:?}")]
    EmptySegment(String),
    #[error("segment {0:?} contains '/'")]
    SeparatorInSegment(String),
    #[error("wildcard not allowed here in {0:?}")]
    MisplacedWildcard(String),
}

fn check_len(s: &str) -> Result<(), TopicError> {
    if s.is_empty() {
        return Err(TopicError::Empty);
    }
    if s.len() > MAX_TOPIC_LEN {
        return Err(TopicError::TooLong);
    }
    Ok(())
}

/// A concrete topic a message is published to, e.g. `mec1/edm_feed/h3_m2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(s: impl Into<String>) -> Result<Self, TopicError> {
        let s = s.into();
        check_len(&s)?;
        for seg in s.split(SEPARATOR) {
            if seg.is_empty() {
                return Err(TopicError::EmptySegment(s));
            }
            if seg.contains(['+', '#']) {
                return Err(TopicError::MisplacedWildcard(s));
            }
        }
        Ok(Self(s))
    }

    /// Joins segments with `/`.
    pub fn from_segments<I, S>(segments: I) -> Result<Self, TopicError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut joined = String::new();
        for (i, seg) in segments.into_iter().enumerate() {
            let seg = seg.as_ref();
            if seg.contains(SEPARATOR) {
                return Err(TopicError::SeparatorInSegment(seg.to_owned()));
            }
            if i > 0 {
                joined.push(SEPARATOR);
            }
            joined.push_str(seg);
        }
        Self::new(joined)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split(SEPARATOR)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for TopicName {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterSegment {
    Literal(String),
    /// `+`: exactly one segment.
    Single,
    /// `#`: one or more trailing segments.
    Multi,
}

/// A subscription pattern: `+` matches one whole segment, a trailing `#`
/// matches one or more remaining segments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter {
    raw: String,
    segments: Vec<FilterSegment>,
}

impl TopicFilter {
    pub fn new(s: impl Into<String>) -> Result<Self, TopicError> {
        let raw = s.into();
        check_len(&raw)?;
        let parts: Vec<&str> = raw.split(SEPARATOR).collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, seg) in parts.iter().enumerate() {
            let parsed = match *seg {
                "" => return Err(TopicError::EmptySegment(raw.clone())),
                "+" => FilterSegment::Single,
                "#" if i + 1 == parts.len() => FilterSegment::Multi,
                s if s.contains(['+', '#']) => {
                    return Err(TopicError::MisplacedWildcard(raw.clone()))
                }
                s => FilterSegment::Literal(s.to_owned()),
            };
            segments.push(parsed);
        }
        Ok(Self { raw, segments })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn segments(&self) -> &[FilterSegment] {
        &self.segments
    }
}

impl From<TopicName> for TopicFilter {
    fn from(t: TopicName) -> Self {
        TopicFilter::new(t.0).expect("topic names are valid filters")
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for TopicFilter {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

pub fn topic_matches(filter: &TopicFilter, topic: &TopicName) -> bool {
    let mut topic_segs = topic.segments();
    for seg in &filter.segments {
        match seg {
            FilterSegment::Multi => return topic_segs.next().is_some(),
            FilterSegment::Single => {
                if topic_segs.next().is_none() {
                    return false;
                }
            }
            FilterSegment::Literal(l) => match topic_segs.next() {
                Some(t) if t == l => {}
                _ => return false,
            },
        }
    }
    topic_segs.next().is_none()
}
