//! Per-agent publish and subscribe allow-lists. Absent agents have no
//! rights: the policy denies by default.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::topic::{Topic, TopicPattern};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthPolicy {
    #[serde(default)]
    pub publish: BTreeMap<String, Vec<TopicPattern>>,
    #[serde(default)]
    pub subscribe: BTreeMap<String, Vec<TopicPattern>>,
}

impl AuthPolicy {
    pub fn allow_publish(&mut self, agent: &str, pattern: TopicPattern) -> &mut Self {
        self.publish.entry(agent.to_string()).or_default().push(pattern);
        self
    }

    pub fn allow_subscribe(&mut self, agent: &str, pattern: TopicPattern) -> &mut Self {
        self.subscribe
            .entry(agent.to_string())
            .or_default()
            .push(pattern);
        self
    }

    pub fn may_publish(&self, agent: &str, topic: &Topic) -> bool {
        self.publish
            .get(agent)
            .map(|patterns| patterns.iter().any(|p| p.matches(topic)))
            .unwrap_or(false)
    }

    pub fn may_subscribe(&self, agent: &str, pattern: &TopicPattern) -> bool {
        self.subscribe
            .get(agent)
            .map(|patterns| patterns.iter().any(|acl| pattern.is_covered_by(acl)))
            .unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deny_by_default() {
        let policy = AuthPolicy::default();
        let topic = Topic::parse("market/demand-bid/asker1/broadcast").unwrap();
        assert!(!policy.may_publish("asker1", &topic));
        assert!(!policy.may_subscribe(
            "asker1",
            &TopicPattern::parse("market/demand-bid/*/*").unwrap()
        ));
    }

    #[test]
    fn wildcard_grants_cover_concrete_topics() {
        let mut policy = AuthPolicy::default();
        policy.allow_publish(
            "asker1",
            TopicPattern::parse("market/demand-bid/asker1/*").unwrap(),
        );
        let own = Topic::parse("market/demand-bid/asker1/broadcast").unwrap();
        let other = Topic::parse("market/demand-bid/asker2/broadcast").unwrap();
        assert!(policy.may_publish("asker1", &own));
        assert!(!policy.may_publish("asker1", &other));
        assert!(!policy.may_publish("bidder1", &own));
    }

    #[test]
    fn subscription_requests_must_fit_inside_the_grant() {
        let mut policy = AuthPolicy::default();
        policy.allow_subscribe(
            "bidder1",
            TopicPattern::parse("market/demand-bid/*/*").unwrap(),
        );
        assert!(policy.may_subscribe(
            "bidder1",
            &TopicPattern::parse("market/demand-bid/asker1/*").unwrap()
        ));
        assert!(!policy.may_subscribe(
            "bidder1",
            &TopicPattern::parse("market/bid-offer/*/*").unwrap()
        ));
    }
}
