//! Per-node monitoring automaton.
//!
//! [`step`] is a pure transition function: it takes a node state and one
//! event and returns the successor state plus the actions the host must
//! perform. Next-hop decisions for routed rescue traffic are delegated to a
//! [`RouteContext`] supplied by the host.
//!
//! States: `Initial`, the query states `Q1` (joined, no child seen yet) and
//! `Q2` (children acknowledged), and the aggregate states `A1` (report sent
//! to the parent), `A2` (report gossiped toward the parent) and `A3` (report
//! forwarded to relay-set ancestors).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{combine, combine_all, local_observe, AggState, MonitorFunction, NodeMetrics};
use crate::routing::{choose_forward_target, RoutePacketMeta};
use crate::wire::{
    make_session_id, Address, AggregateBody, Header, MonitoringPacket, PacketType, QueryBody,
    SessionId, MAX_RELAY_SET,
};

/// Default per-session timeout carried in the query.
pub const DEFAULT_TIMEOUT_MS: u64 = 1000;

/// A node with acknowledged children waits this many timeouts (since the
/// last packet it accepted) for their aggregates.
pub const COLLECT_FACTOR: u64 = 5;

pub type TimerId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AutomatonState {
    Initial,
    Q1,
    Q2,
    A1,
    A2,
    A3,
}

impl AutomatonState {
    pub const ALL: [AutomatonState; 6] = [
        AutomatonState::Initial,
        AutomatonState::Q1,
        AutomatonState::Q2,
        AutomatonState::A1,
        AutomatonState::A2,
        AutomatonState::A3,
    ];

    pub fn is_query(self) -> bool {
        matches!(self, AutomatonState::Q1 | AutomatonState::Q2)
    }

    pub fn is_aggregate(self) -> bool {
        matches!(self, AutomatonState::A1 | AutomatonState::A2 | AutomatonState::A3)
    }
}

impl fmt::Display for AutomatonState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Timer durations derived from the session timeout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeouts {
    /// Edge detection after joining, and each aggregate-phase retry.
    pub base_ms: u64,
    /// Waiting for acknowledged children to report.
    pub collect_ms: u64,
}

impl Timeouts {
    pub fn from_timeout(timeout_ms: u64) -> Self {
        Timeouts { base_ms: timeout_ms, collect_ms: timeout_ms * COLLECT_FACTOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    /// Relay set exhausted without an acknowledgment.
    Isolated,
    /// A routed packet could not be relayed any further.
    NoRoute,
    IllegalTransition,
}

impl ErrorCode {
    pub fn token(self) -> &'static str {
        match self {
            ErrorCode::Isolated => "ISOLATED",
            ErrorCode::NoRoute => "NO_ROUTE",
            ErrorCode::IllegalTransition => "ILLEGAL_TRANSITION",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    StartMonitoring { function: MonitorFunction, timeout_ms: u64, now: u64 },
    PacketIn { packet: MonitoringPacket, route: Option<RoutePacketMeta>, now: u64 },
    TimerFired { timer: TimerId, now: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Broadcast { packet: MonitoringPacket, route: Option<RoutePacketMeta> },
    StartTimer { timer: TimerId, duration_ms: u64 },
    CancelTimer(TimerId),
    DeliverVerdict { outcome: f64, observations: u64 },
    LogError(ErrorCode),
    Done,
}

impl Action {
    pub fn is_broadcast(&self) -> bool {
        matches!(self, Action::Broadcast { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketClass {
    QueryForMe,
    QueryAckForMe,
    DuplicateQuery,
    AggregateForMe,
    AggregateAckForMe,
    RouteForMe,
    RouteToForward,
    ForwardForMe,
    Ignore,
}

impl PacketClass {
    pub const ALL: [PacketClass; 9] = [
        PacketClass::QueryForMe,
        PacketClass::QueryAckForMe,
        PacketClass::DuplicateQuery,
        PacketClass::AggregateForMe,
        PacketClass::AggregateAckForMe,
        PacketClass::RouteForMe,
        PacketClass::RouteToForward,
        PacketClass::ForwardForMe,
        PacketClass::Ignore,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventClass {
    StartMonitoring,
    Timer,
    Packet(PacketClass),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("illegal transition: {event:?} in state {state}")]
    IllegalTransition { state: AutomatonState, event: EventClass },
}

/// Host-provided next-hop oracle for routed packets.
pub trait RouteContext {
    /// `meta` already counts the calling node as visited.
    fn next_hop(&mut self, to: Address, meta: &RoutePacketMeta) -> Option<Address>;

    fn max_hops(&self) -> u32;
}

/// A context in which nothing is routable.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRoutes;

impl RouteContext for NoRoutes {
    fn next_hop(&mut self, _to: Address, _meta: &RoutePacketMeta) -> Option<Address> {
        None
    }

    fn max_hops(&self) -> u32 {
        1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeProtocolState {
    pub self_addr: Address,
    pub sensor: NodeMetrics,
    pub automaton: AutomatonState,
    pub is_root: bool,
    pub session: Option<SessionId>,
    /// Last session this node took part in; late duplicates are dropped.
    pub last_session: Option<SessionId>,
    pub parent: Option<Address>,
    /// Ancestors above the parent, nearest first, as received in the query.
    pub relay_set: Vec<Address>,
    pub function: Option<MonitorFunction>,
    pub timeout_ms: u64,
    pub acked_children: BTreeSet<Address>,
    pub received_child_aggregates: BTreeMap<Address, AggState>,
    pub extra_aggregates: Vec<AggState>,
    /// Origins of every payload already absorbed or relayed upward.
    pub absorbed_origins: BTreeSet<Address>,
    pub local: AggState,
    /// The payload this node sent upward; resent unchanged on retries.
    pub report: AggState,
    pub pending_timer: Option<TimerId>,
    pub next_timer: TimerId,
    pub tried_forwards: BTreeSet<Address>,
    pub forward_target: Option<Address>,
}

impl NodeProtocolState {
    pub fn new(self_addr: Address, sensor: NodeMetrics) -> Self {
        NodeProtocolState {
            self_addr,
            sensor,
            automaton: AutomatonState::Initial,
            is_root: false,
            session: None,
            last_session: None,
            parent: None,
            relay_set: Vec::new(),
            function: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            acked_children: BTreeSet::new(),
            received_child_aggregates: BTreeMap::new(),
            extra_aggregates: Vec::new(),
            absorbed_origins: BTreeSet::new(),
            local: AggState::EMPTY,
            report: AggState::EMPTY,
            pending_timer: None,
            next_timer: 0,
            tried_forwards: BTreeSet::new(),
            forward_target: None,
        }
    }

    pub fn timeouts(&self) -> Timeouts {
        Timeouts::from_timeout(self.timeout_ms)
    }

    /// Relay-set entries not yet tried as forward targets.
    pub fn forward_candidates(&self) -> Vec<Address> {
        self.relay_set.iter().copied().filter(|a| !self.tried_forwards.contains(a)).collect()
    }

    /// The node whose upward transmission acknowledges this node's report.
    fn awaited(&self) -> Option<Address> {
        match self.automaton {
            AutomatonState::A3 => self.forward_target,
            _ => self.parent,
        }
    }

    fn reset(&mut self) {
        let mut fresh = NodeProtocolState::new(self.self_addr, self.sensor);
        fresh.next_timer = self.next_timer;
        fresh.last_session = self.session.take().or_else(|| self.last_session.take());
        *self = fresh;
    }

    fn arm(&mut self, actions: &mut Vec<Action>, duration_ms: u64) {
        self.disarm(actions);
        let timer = self.next_timer;
        self.next_timer += 1;
        self.pending_timer = Some(timer);
        actions.push(Action::StartTimer { timer, duration_ms });
    }

    fn disarm(&mut self, actions: &mut Vec<Action>) {
        if let Some(t) = self.pending_timer.take() {
            actions.push(Action::CancelTimer(t));
        }
    }

    fn header_to(&self, source: Address, destination: Address, gateway: Address) -> Header {
        Header {
            parent: self.parent.unwrap_or(self.self_addr),
            source,
            destination,
            gateway,
            timeout_ms: self.timeout_ms,
            timestamp: self.session.clone().expect("header requires an active session"),
        }
    }

    fn aggregate_packet(
        &self,
        kind: PacketType,
        source: Address,
        destination: Address,
        gateway: Address,
        payload: AggState,
    ) -> MonitoringPacket {
        MonitoringPacket::new_aggregate(
            kind,
            self.header_to(source, destination, gateway),
            AggregateBody::from(payload),
        )
        .expect("aggregate payloads are never empty")
    }

    /// Final fold of own observation, child reports and rescued extras.
    fn fold(&self) -> AggState {
        let f = self.function.expect("fold requires a function");
        let own = local_observe(f, self.sensor.reading(f));
        let children = combine_all(f, self.received_child_aggregates.values().copied());
        let extras = combine_all(f, self.extra_aggregates.iter().copied());
        combine(f, combine(f, own, children), extras)
    }
}

enum Origin {
    Child,
    Extra,
    Duplicate,
}

pub fn classify_packet(s: &NodeProtocolState, p: &MonitoringPacket) -> PacketClass {
    let me = s.self_addr;
    if p.kind.carries_aggregate() && p.gateway == me && p.destination != me {
        return PacketClass::RouteToForward;
    }
    let same_session = s.session.as_ref() == Some(&p.timestamp);
    if p.kind == PacketType::Query {
        return if same_session {
            if p.parent == me && p.source != me {
                PacketClass::QueryAckForMe
            } else {
                PacketClass::DuplicateQuery
            }
        } else if s.last_session.as_ref() == Some(&p.timestamp) {
            PacketClass::DuplicateQuery
        } else {
            PacketClass::QueryForMe
        };
    }
    if !same_session {
        return PacketClass::Ignore;
    }
    if !s.is_root {
        let overheard = p.destination != me && s.awaited() == Some(p.source);
        let explicit = p.kind == PacketType::Aggregate && p.destination == me && p.parent != me;
        if overheard || explicit {
            return PacketClass::AggregateAckForMe;
        }
    }
    match p.kind {
        PacketType::Aggregate if p.destination == me => PacketClass::AggregateForMe,
        PacketType::AggregateRoute if p.destination == me && p.gateway == me => {
            PacketClass::RouteForMe
        }
        PacketType::AggregateForward if p.destination == me && p.gateway == me => {
            PacketClass::ForwardForMe
        }
        _ => PacketClass::Ignore,
    }
}

/// The query `s` rebroadcasts after adopting `incoming.source` as parent.
pub fn build_child_query(s: &NodeProtocolState, incoming: &MonitoringPacket) -> MonitoringPacket {
    let parent = incoming.source;
    let q = incoming.query.as_ref().expect("build_child_query needs a query packet");
    let mut relay_set = Vec::with_capacity(MAX_RELAY_SET);
    for a in std::iter::once(parent).chain(q.relay_set.iter().copied()) {
        if relay_set.len() == MAX_RELAY_SET {
            break;
        }
        if !relay_set.contains(&a) {
            relay_set.push(a);
        }
    }
    let header = Header {
        parent,
        source: s.self_addr,
        destination: parent,
        gateway: parent,
        timeout_ms: incoming.timeout_ms,
        timestamp: incoming.timestamp.clone(),
    };
    MonitoringPacket::new_query(header, QueryBody { function: q.function, relay_set })
        .expect("child query is well formed")
}

pub type Transition = (NodeProtocolState, Vec<Action>);

pub fn step(
    s: &NodeProtocolState,
    e: &Event,
    routes: &mut dyn RouteContext,
) -> Result<Transition, ProtocolError> {
    let mut next = s.clone();
    let mut actions = Vec::new();
    match e {
        Event::StartMonitoring { function, timeout_ms, now } => {
            if s.automaton != AutomatonState::Initial {
                return Err(illegal(s, EventClass::StartMonitoring));
            }
            next.start_as_root(*function, *timeout_ms, *now, &mut actions);
        }
        Event::TimerFired { timer, .. } => {
            if s.pending_timer != Some(*timer) {
                return Ok((next, actions));
            }
            next.pending_timer = None;
            match s.automaton {
                AutomatonState::Initial => {}
                AutomatonState::Q1 | AutomatonState::Q2 => next.finish_collection(&mut actions),
                AutomatonState::A1 => next.escalate_route(routes, &mut actions),
                AutomatonState::A2 | AutomatonState::A3 => {
                    next.escalate_forward(routes, &mut actions)
                }
            }
        }
        Event::PacketIn { packet, route, .. } => {
            let class = classify_packet(s, packet);
            use AutomatonState as S;
            use PacketClass as C;
            match (s.automaton, class) {
                (_, C::RouteToForward) => next.relay(packet, route.as_ref(), routes, &mut actions),
                (_, C::Ignore | C::DuplicateQuery) => {}
                (S::Initial, C::QueryForMe) => next.join(packet, &mut actions),
                (S::Q1 | S::Q2, C::QueryAckForMe) => {
                    next.acked_children.insert(packet.source);
                    next.automaton = S::Q2;
                    let wait = next.timeouts().collect_ms;
                    next.arm(&mut actions, wait);
                }
                (
                    S::Q1 | S::Q2 | S::A1 | S::A2 | S::A3,
                    C::AggregateForMe | C::RouteForMe | C::ForwardForMe,
                ) => next.absorb(packet, class, routes, &mut actions),
                (S::A1 | S::A2 | S::A3, C::AggregateAckForMe) => {
                    next.disarm(&mut actions);
                    next.reset();
                    actions.push(Action::Done);
                }
                (state, class) => return Err(illegal_state(state, EventClass::Packet(class))),
            }
        }
    }
    Ok((next, actions))
}

fn illegal(s: &NodeProtocolState, event: EventClass) -> ProtocolError {
    illegal_state(s.automaton, event)
}

fn illegal_state(state: AutomatonState, event: EventClass) -> ProtocolError {
    ProtocolError::IllegalTransition { state, event }
}

impl NodeProtocolState {
    fn start_as_root(
        &mut self,
        function: MonitorFunction,
        timeout_ms: u64,
        now: u64,
        actions: &mut Vec<Action>,
    ) {
        let me = self.self_addr;
        self.reset();
        self.is_root = true;
        self.session = Some(make_session_id(me, now));
        self.parent = Some(me);
        self.function = Some(function);
        self.timeout_ms = timeout_ms.max(1);
        self.automaton = AutomatonState::Q1;
        let query = MonitoringPacket::new_query(
            self.header_to(me, me, me),
            QueryBody { function, relay_set: vec![me] },
        )
        .expect("root query is well formed");
        actions.push(Action::Broadcast { packet: query, route: None });
        let wait = self.timeouts().base_ms;
        self.arm(actions, wait);
    }

    fn join(&mut self, p: &MonitoringPacket, actions: &mut Vec<Action>) {
        let q = p.query.as_ref().expect("query class implies query body");
        let me = self.self_addr;
        self.session = Some(p.timestamp.clone());
        self.parent = Some(p.source);
        self.function = Some(q.function);
        self.timeout_ms = p.timeout_ms;
        let mut relay_set: Vec<Address> = Vec::new();
        for &a in &q.relay_set {
            if a != me && !relay_set.contains(&a) && relay_set.len() < MAX_RELAY_SET {
                relay_set.push(a);
            }
        }
        self.relay_set = relay_set;
        self.automaton = AutomatonState::Q1;
        let child = build_child_query(self, p);
        actions.push(Action::Broadcast { packet: child, route: None });
        let wait = self.timeouts().base_ms;
        self.arm(actions, wait);
    }

    /// Fold what has been collected and either deliver (root) or report up.
    fn finish_collection(&mut self, actions: &mut Vec<Action>) {
        let f = self.function.expect("collecting requires a function");
        self.local = local_observe(f, self.sensor.reading(f));
        let folded = self.fold();
        if self.is_root {
            actions.push(Action::DeliverVerdict {
                outcome: folded.outcome,
                observations: folded.observations,
            });
            let me = self.self_addr;
            let children: Vec<Address> = self.received_child_aggregates.keys().copied().collect();
            for child in children {
                let ack = self.aggregate_packet(PacketType::Aggregate, me, child, child, folded);
                actions.push(Action::Broadcast { packet: ack, route: None });
            }
            self.disarm(actions);
            self.reset();
            actions.push(Action::Done);
            return;
        }
        self.report = folded;
        self.automaton = AutomatonState::A1;
        let parent = self.parent.expect("joined node has a parent");
        let up = self.aggregate_packet(PacketType::Aggregate, self.self_addr, parent, parent, folded);
        actions.push(Action::Broadcast { packet: up, route: None });
        let wait = self.timeouts().base_ms;
        self.arm(actions, wait);
    }

    fn escalate_route(&mut self, routes: &mut dyn RouteContext, actions: &mut Vec<Action>) {
        let me = self.self_addr;
        let parent = self.parent.expect("aggregating node has a parent");
        let meta = RoutePacketMeta::originate(me, routes.max_hops());
        self.automaton = AutomatonState::A2;
        match routes.next_hop(parent, &meta) {
            Some(gateway) => {
                let packet =
                    self.aggregate_packet(PacketType::AggregateRoute, me, parent, gateway, self.report);
                actions.push(Action::Broadcast { packet, route: Some(meta) });
                let wait = self.timeouts().base_ms;
                self.arm(actions, wait);
            }
            // Nobody to gossip through: go straight to the relay set.
            None => self.escalate_forward(routes, actions),
        }
    }

    fn escalate_forward(&mut self, routes: &mut dyn RouteContext, actions: &mut Vec<Action>) {
        let me = self.self_addr;
        loop {
            let target = match choose_forward_target(&self.relay_set, &self.tried_forwards) {
                Ok(t) => t,
                Err(_) => {
                    self.disarm(actions);
                    self.reset();
                    actions.push(Action::LogError(ErrorCode::Isolated));
                    return;
                }
            };
            self.tried_forwards.insert(target);
            let meta = RoutePacketMeta::originate(me, routes.max_hops());
            if let Some(gateway) = routes.next_hop(target, &meta) {
                self.automaton = AutomatonState::A3;
                self.forward_target = Some(target);
                let packet = self.aggregate_packet(
                    PacketType::AggregateForward,
                    me,
                    target,
                    gateway,
                    self.report,
                );
                actions.push(Action::Broadcast { packet, route: Some(meta) });
                let wait = self.timeouts().base_ms;
                self.arm(actions, wait);
                return;
            }
        }
    }

    fn relay(
        &mut self,
        p: &MonitoringPacket,
        route: Option<&RoutePacketMeta>,
        routes: &mut dyn RouteContext,
        actions: &mut Vec<Action>,
    ) {
        let meta = route
            .cloned()
            .unwrap_or_else(|| RoutePacketMeta::originate(p.source, routes.max_hops()))
            .advanced(self.self_addr);
        match routes.next_hop(p.destination, &meta) {
            Some(gateway) => {
                let mut out = p.clone();
                out.gateway = gateway;
                actions.push(Action::Broadcast { packet: out, route: Some(meta) });
            }
            None => actions.push(Action::LogError(ErrorCode::NoRoute)),
        }
    }

    fn origin_kind(&self, origin: Address) -> Origin {
        if self.received_child_aggregates.contains_key(&origin)
            || self.absorbed_origins.contains(&origin)
        {
            Origin::Duplicate
        } else if self.acked_children.contains(&origin) {
            Origin::Child
        } else {
            Origin::Extra
        }
    }

    fn absorb(
        &mut self,
        p: &MonitoringPacket,
        class: PacketClass,
        routes: &mut dyn RouteContext,
        actions: &mut Vec<Action>,
    ) {
        let origin = p.source;
        let payload = p.agg_state();
        let kind = self.origin_kind(origin);

        if matches!(class, PacketClass::RouteForMe | PacketClass::ForwardForMe) {
            self.send_explicit_ack(origin, payload, routes, actions);
        }

        let base = self.timeouts().base_ms;
        match (self.automaton, kind) {
            (_, Origin::Duplicate) => {}
            (AutomatonState::Q2, Origin::Child) => {
                self.received_child_aggregates.insert(origin, payload);
                let complete = self
                    .acked_children
                    .iter()
                    .all(|c| self.received_child_aggregates.contains_key(c));
                if complete {
                    self.finish_collection(actions);
                } else {
                    let wait = self.timeouts().collect_ms;
                    self.arm(actions, wait);
                }
            }
            (AutomatonState::Q1 | AutomatonState::Q2, _) => {
                self.absorbed_origins.insert(origin);
                self.extra_aggregates.push(payload);
                self.arm(actions, base);
            }
            (_, _) => {
                // Already reported: pass the late piece up unchanged.
                self.absorbed_origins.insert(origin);
                self.extra_aggregates.push(payload);
                let parent = self.parent.expect("aggregating node has a parent");
                let up = self.aggregate_packet(PacketType::Aggregate, origin, parent, parent, payload);
                actions.push(Action::Broadcast { packet: up, route: None });
                self.arm(actions, base);
            }
        }
    }

    fn send_explicit_ack(
        &mut self,
        origin: Address,
        payload: AggState,
        routes: &mut dyn RouteContext,
        actions: &mut Vec<Action>,
    ) {
        let me = self.self_addr;
        let meta = RoutePacketMeta::originate(me, routes.max_hops());
        let (gateway, route) = match routes.next_hop(origin, &meta) {
            Some(g) if g != origin => (g, Some(meta)),
            _ => (origin, None),
        };
        let ack = self.aggregate_packet(PacketType::Aggregate, me, origin, gateway, payload);
        actions.push(Action::Broadcast { packet: ack, route });
    }
}
