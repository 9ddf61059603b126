//! Hierarchical topics and subscription patterns.
//!
//! Market traffic uses `market/<stage>/<sender>/<receiver>` with the stage
//! being one of the three protocol stages; coordination traffic uses
//! `market/control/<name>`. Subscription patterns may replace whole segments
//! with `*`; concrete topics never contain wildcards.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use temarket_core::messages::{STAGE_BID_OFFER, STAGE_DEMAND_BID, STAGE_MARKET_CLEARING};

use crate::error::BusError;

pub const CONTROL_SEGMENT: &str = "control";
pub const TOPIC_CONTROL_STAGE: &str = "market/control/stage";
pub const TOPIC_CONTROL_ACK: &str = "market/control/ack";
pub const TOPIC_CONTROL_FAULT: &str = "market/control/fault";

fn valid_segment(seg: &str) -> bool {
    !seg.is_empty()
        && seg
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn stage_segment(seg: &str) -> bool {
    matches!(seg, STAGE_DEMAND_BID | STAGE_BID_OFFER | STAGE_MARKET_CLEARING)
}

/// A concrete topic an envelope is published on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic {
    segments: Vec<String>,
}

impl Topic {
    pub fn parse(s: &str) -> Result<Self, BusError> {
        let segments: Vec<String> = s.split('/').map(str::to_string).collect();
        if segments.len() < 3 {
            return Err(BusError::Topic(format!("{s}: too few segments")));
        }
        for seg in &segments {
            if !valid_segment(seg) {
                return Err(BusError::Topic(format!("{s}: bad segment {seg:?}")));
            }
        }
        if segments[0] != "market" {
            return Err(BusError::Topic(format!("{s}: must start with market/")));
        }
        if stage_segment(&segments[1]) {
            if segments.len() != 4 {
                return Err(BusError::Topic(format!(
                    "{s}: stage topics are market/<stage>/<sender>/<receiver>"
                )));
            }
        } else if segments[1] == CONTROL_SEGMENT {
            if segments.len() != 3 {
                return Err(BusError::Topic(format!(
                    "{s}: control topics are market/control/<name>"
                )));
            }
        } else {
            return Err(BusError::Topic(format!(
                "{s}: unknown topic kind {}",
                segments[1]
            )));
        }
        Ok(Self { segments })
    }

    pub fn market(stage: &str, sender: &str, receiver: &str) -> Result<Self, BusError> {
        Topic::parse(&format!("market/{stage}/{sender}/{receiver}"))
    }

    pub fn control(name: &str) -> Result<Self, BusError> {
        Topic::parse(&format!("market/control/{name}"))
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// The protocol stage for market topics, `None` for control topics.
    pub fn stage(&self) -> Option<&str> {
        if stage_segment(&self.segments[1]) {
            Some(&self.segments[1])
        } else {
            None
        }
    }

    pub fn is_control(&self) -> bool {
        self.segments[1] == CONTROL_SEGMENT
    }

    pub fn sender_segment(&self) -> Option<&str> {
        self.stage().map(|_| self.segments[2].as_str())
    }

    pub fn receiver_segment(&self) -> Option<&str> {
        self.stage().map(|_| self.segments[3].as_str())
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.segments.join("/"))
    }
}

impl Serialize for Topic {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Topic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Topic::parse(&s).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Segment {
    Literal(String),
    Wildcard,
}

/// A subscription pattern: topic segments where `*` matches any single
/// segment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicPattern {
    segments: Vec<Segment>,
}

impl TopicPattern {
    pub fn parse(s: &str) -> Result<Self, BusError> {
        let raw: Vec<&str> = s.split('/').collect();
        if raw.len() < 3 {
            return Err(BusError::Topic(format!("{s}: too few segments")));
        }
        let mut segments = Vec::with_capacity(raw.len());
        for seg in raw {
            if seg == "*" {
                segments.push(Segment::Wildcard);
            } else if valid_segment(seg) {
                segments.push(Segment::Literal(seg.to_string()));
            } else {
                return Err(BusError::Topic(format!("{s}: bad segment {seg:?}")));
            }
        }
        Ok(Self { segments })
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        if self.segments.len() != topic.segments().len() {
            return false;
        }
        self.segments
            .iter()
            .zip(topic.segments())
            .all(|(p, t)| match p {
                Segment::Wildcard => true,
                Segment::Literal(s) => s == t,
            })
    }

    /// Whether every topic matching `self` also matches `wider`: used to
    /// check a subscription request against an ACL entry.
    pub fn is_covered_by(&self, wider: &TopicPattern) -> bool {
        if self.segments.len() != wider.segments.len() {
            return false;
        }
        self.segments
            .iter()
            .zip(&wider.segments)
            .all(|(mine, theirs)| match (mine, theirs) {
                (_, Segment::Wildcard) => true,
                (Segment::Literal(a), Segment::Literal(b)) => a == b,
                (Segment::Wildcard, Segment::Literal(_)) => false,
            })
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Wildcard => "*",
                Segment::Literal(l) => l.as_str(),
            })
            .collect();
        write!(f, "{}", parts.join("/"))
    }
}

impl Serialize for TopicPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TopicPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TopicPattern::parse(&s).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_topics_have_four_segments() {
        assert!(Topic::parse("market/demand-bid/asker1/broadcast").is_ok());
        assert!(Topic::parse("market/demand-bid/asker1").is_err());
        assert!(Topic::parse("market/demand-bid/asker1/b/c").is_err());
    }

    #[test]
    fn control_topics_have_three_segments() {
        assert!(Topic::parse("market/control/stage").is_ok());
        assert!(Topic::parse("market/control/stage/x").is_err());
    }

    #[test]
    fn unknown_kinds_and_wildcards_are_rejected() {
        assert!(Topic::parse("market/gossip/a/b").is_err());
        assert!(Topic::parse("market/demand-bid/*/b").is_err());
        assert!(Topic::parse("market//a/b").is_err());
    }

    #[test]
    fn pattern_matching_is_segmentwise() {
        let t = Topic::parse("market/bid-offer/bidder1/asker1").unwrap();
        assert!(TopicPattern::parse("market/bid-offer/*/asker1").unwrap().matches(&t));
        assert!(TopicPattern::parse("market/bid-offer/*/*").unwrap().matches(&t));
        assert!(!TopicPattern::parse("market/bid-offer/*/asker2").unwrap().matches(&t));
        assert!(!TopicPattern::parse("market/demand-bid/*/*").unwrap().matches(&t));
        assert!(!TopicPattern::parse("market/control/*").unwrap().matches(&t));
    }

    #[test]
    fn pattern_coverage_orders_wildcards() {
        let wide = TopicPattern::parse("market/demand-bid/*/*").unwrap();
        let narrow = TopicPattern::parse("market/demand-bid/asker1/*").unwrap();
        assert!(narrow.is_covered_by(&wide));
        assert!(!wide.is_covered_by(&narrow));
        assert!(narrow.is_covered_by(&narrow));
    }

    #[test]
    fn topic_stage_accessors() {
        let t = Topic::parse("market/market-clearing/asker1/bidder2").unwrap();
        assert_eq!(t.stage(), Some("market-clearing"));
        assert_eq!(t.sender_segment(), Some("asker1"));
        assert_eq!(t.receiver_segment(), Some("bidder2"));
        let c = Topic::parse(TOPIC_CONTROL_ACK).unwrap();
        assert!(c.is_control());
        assert_eq!(c.stage(), None);
    }
}
