//! Next-hop selection for aggregate rescue traffic.
//!
//! Two backends: a random gossip walk over the neighbors visible at the
//! moment, and a shortest-path lookup over a periodically refreshed global
//! topology snapshot (the proactive-routing comparator).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RoutingBackend {
    #[default]
    Gossip,
    Snapshot,
}

impl RoutingBackend {
    pub fn token(self) -> &'static str {
        match self {
            RoutingBackend::Gossip => "gossip",
            RoutingBackend::Snapshot => "snapshot",
        }
    }
}

impl fmt::Display for RoutingBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for RoutingBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gossip" => Ok(RoutingBackend::Gossip),
            "snapshot" => Ok(RoutingBackend::Snapshot),
            other => Err(format!("unknown routing backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("no neighbor available to forward through")]
    NoForwarder,
    #[error("destination unreachable in the topology snapshot")]
    NoRoute,
    #[error("relay set exhausted")]
    Exhausted,
}

/// Simulator-side bookkeeping that travels with a routed packet. Not part
/// of the wire format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePacketMeta {
    pub visited: BTreeSet<Address>,
    pub hops: u32,
    pub max_hops: u32,
}

impl RoutePacketMeta {
    pub fn originate(origin: Address, max_hops: u32) -> Self {
        RoutePacketMeta { visited: BTreeSet::from([origin]), hops: 0, max_hops: max_hops.max(1) }
    }

    /// The meta as seen by the next relay, after one more hop.
    pub fn advanced(&self, relay: Address) -> Self {
        let mut visited = self.visited.clone();
        visited.insert(relay);
        RoutePacketMeta { visited, hops: self.hops + 1, max_hops: self.max_hops }
    }

    pub fn exhausted(&self) -> bool {
        self.hops >= self.max_hops
    }
}

/// Uniform choice among unvisited neighbors, falling back to any neighbor
/// once all have been visited.
pub fn gossip_next_hop<R: Rng + ?Sized>(
    neighbors: &BTreeSet<Address>,
    meta: &RoutePacketMeta,
    rng: &mut R,
) -> Result<Address, RouteError> {
    if neighbors.is_empty() || meta.exhausted() {
        return Err(RouteError::NoForwarder);
    }
    let fresh: Vec<Address> = neighbors.difference(&meta.visited).copied().collect();
    let pool: Vec<Address> = if fresh.is_empty() {
        neighbors.iter().copied().collect()
    } else {
        fresh
    };
    Ok(pool[rng.random_range(0..pool.len())])
}

/// Symmetric, irreflexive adjacency at one instant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopologySnapshot {
    adjacency: BTreeMap<Address, BTreeSet<Address>>,
}

impl TopologySnapshot {
    pub fn new<I>(nodes: I) -> Self
    where
        I: IntoIterator<Item = Address>,
    {
        TopologySnapshot {
            adjacency: nodes.into_iter().map(|a| (a, BTreeSet::new())).collect(),
        }
    }

    pub fn from_edges<I>(nodes: impl IntoIterator<Item = Address>, edges: I) -> Self
    where
        I: IntoIterator<Item = (Address, Address)>,
    {
        let mut t = TopologySnapshot::new(nodes);
        for (a, b) in edges {
            t.add_edge(a, b);
        }
        t
    }

    pub fn add_edge(&mut self, a: Address, b: Address) {
        if a == b {
            return;
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    pub fn neighbors(&self, a: Address) -> impl Iterator<Item = Address> + '_ {
        self.adjacency.get(&a).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: Address, b: Address) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn nodes(&self) -> impl Iterator<Item = Address> + '_ {
        self.adjacency.keys().copied()
    }

    /// Hop distances from `origin` to every reachable node.
    pub fn hop_distances(&self, origin: Address) -> BTreeMap<Address, u32> {
        let mut dist = BTreeMap::new();
        if !self.adjacency.contains_key(&origin) {
            return dist;
        }
        dist.insert(origin, 0);
        let mut queue = VecDeque::from([origin]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// First hop of a minimum-hop path; ties go to the lowest address.
pub fn snapshot_shortest_path_next_hop(
    topo: &TopologySnapshot,
    from: Address,
    to: Address,
) -> Result<Address, RouteError> {
    let dist = topo.hop_distances(to);
    let Some(&d_from) = dist.get(&from) else {
        return Err(RouteError::NoRoute);
    };
    if d_from == 0 {
        return Err(RouteError::NoRoute);
    }
    topo.neighbors(from)
        .filter(|n| dist.get(n) == Some(&(d_from - 1)))
        .min()
        .ok_or(RouteError::NoRoute)
}

/// First relay-set entry not yet tried, nearest ancestor first.
pub fn choose_forward_target(
    relay_set: &[Address],
    already_tried: &BTreeSet<Address>,
) -> Result<Address, RouteError> {
    relay_set
        .iter()
        .copied()
        .find(|a| !already_tried.contains(a))
        .ok_or(RouteError::Exhausted)
}
