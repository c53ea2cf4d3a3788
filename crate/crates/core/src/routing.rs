//! Where a publication goes: local subscribers and tree links.

use std::collections::BTreeMap;

use crate::codec::QoS;
use crate::topic::{TopicError, TopicFilter};
use crate::tree::{LinkId, Role, RoleSnapshot};

/// Where a publication entered this broker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin<C> {
    Client(C),
    Bridge(LinkId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route<C> {
    /// Local sessions with the QoS each copy is sent at.
    pub deliveries: Vec<(C, QoS)>,
    pub forwards: Vec<LinkId>,
}

impl<C> Route<C> {
    pub fn discarded() -> Self {
        Self {
            deliveries: Vec::new(),
            forwards: Vec::new(),
        }
    }

    pub fn is_discarded(&self) -> bool {
        self.deliveries.is_empty() && self.forwards.is_empty()
    }
}

/// Client subscriptions, keyed by session.
#[derive(Debug, Clone)]
pub struct SubscriptionTable<C> {
    by_session: BTreeMap<C, Vec<(TopicFilter, QoS)>>,
}

impl<C> Default for SubscriptionTable<C> {
    fn default() -> Self {
        Self {
            by_session: BTreeMap::new(),
        }
    }
}

impl<C: Ord + Copy> SubscriptionTable<C> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the subscription of `session` to `filter`.
    pub fn subscribe(&mut self, session: C, filter: &str, qos: QoS) -> Result<(), TopicError> {
        let filter = TopicFilter::new(filter)?;
        let subs = self.by_session.entry(session).or_default();
        match subs.iter_mut().find(|(f, _)| *f == filter) {
            Some(existing) => existing.1 = qos,
            None => subs.push((filter, qos)),
        }
        Ok(())
    }

    pub fn remove_session(&mut self, session: C) {
        self.by_session.remove(&session);
    }

    pub fn len(&self) -> usize {
        self.by_session.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Each matching session once, at the highest QoS among its matching
    /// filters.
    pub fn match_subscribers(&self, topic: &str) -> Vec<(C, QoS)> {
        self.by_session
            .iter()
            .filter_map(|(session, subs)| {
                subs.iter()
                    .filter(|(f, _)| f.matches(topic))
                    .map(|(_, q)| *q)
                    .max()
                    .map(|q| (*session, q))
            })
            .collect()
    }
}

/// Routes one publication against a single role snapshot.
///
/// Data arriving on a link that is not a forwarding tree edge (Blocked, or
/// Designated but not chosen by the peer) is discarded. Otherwise it is
/// delivered to every matching local subscriber at `min(qos, granted)` and
/// forwarded on every forwarding link except the one it came from.
pub fn route_publication<C: Ord + Copy>(
    origin: Origin<C>,
    topic: &str,
    qos: QoS,
    roles: &RoleSnapshot,
    subscriptions: &SubscriptionTable<C>,
) -> Route<C> {
    if let Origin::Bridge(link) = origin {
        match roles.links.get(&link) {
            Some(l) if l.forwarding && l.role != Role::Blocked => {}
            _ => return Route::discarded(),
        }
    }
    let deliveries = subscriptions
        .match_subscribers(topic)
        .into_iter()
        .map(|(s, granted)| (s, qos.min(granted)))
        .collect();
    let forwards = roles
        .forwarding_links()
        .filter(|l| origin != Origin::Bridge(*l))
        .collect();
    Route {
        deliveries,
        forwards,
    }
}
