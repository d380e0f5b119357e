//! Exhaustive (state, event class) table for the monitoring automaton.
//!
//! The subject is node B, whose parent is A and whose relay set is [Q, R].
//! C is a child of B; D is an unrelated neighbor.

use std::fmt;

use vhtmon::aggregation::{MonitorFunction, NodeMetrics};
use vhtmon::protocol::{
    classify_packet, step, Action, AutomatonState, ErrorCode, Event, EventClass,
    NodeProtocolState, PacketClass, ProtocolError, RouteContext,
};
use vhtmon::routing::RoutePacketMeta;
use vhtmon::wire::{
    make_session_id, Address, AggregateBody, Header, MonitoringPacket, PacketType, QueryBody,
    SessionId,
};

use AutomatonState::{Initial, A1, A2, A3, Q1, Q2};

pub fn addr(i: usize) -> Address {
    Address::from_index(i)
}

pub const R: usize = 0;
pub const A: usize = 1;
pub const B: usize = 2;
pub const C: usize = 3;
pub const D: usize = 4;
pub const G: usize = 5;
pub const Q: usize = 6;

const T0: u64 = 1_500_000_000_000;

/// Always routes through G.
pub struct ViaG;

impl RouteContext for ViaG {
    fn next_hop(&mut self, _to: Address, meta: &RoutePacketMeta) -> Option<Address> {
        (!meta.exhausted()).then(|| addr(G))
    }

    fn max_hops(&self) -> u32 {
        20
    }
}

pub fn session() -> SessionId {
    make_session_id(addr(R), T0)
}

fn old_session() -> SessionId {
    make_session_id(addr(R), T0 - 60_000)
}

fn header(parent: usize, source: usize, dest: usize, gateway: usize, ts: SessionId) -> Header {
    Header {
        parent: addr(parent),
        source: addr(source),
        destination: addr(dest),
        gateway: addr(gateway),
        timeout_ms: 1000,
        timestamp: ts,
    }
}

fn query(parent: usize, source: usize, relay: &[usize], ts: SessionId) -> MonitoringPacket {
    MonitoringPacket::new_query(
        header(parent, source, parent, parent, ts),
        QueryBody {
            function: MonitorFunction::Count,
            relay_set: relay.iter().map(|&i| addr(i)).collect(),
        },
    )
    .unwrap()
}

fn aggregate(
    kind: PacketType,
    h: Header,
    observations: u64,
) -> MonitoringPacket {
    MonitoringPacket::new_aggregate(
        kind,
        h,
        AggregateBody { outcome: observations as f64, observations },
    )
    .unwrap()
}

pub fn packet_in(packet: MonitoringPacket) -> Event {
    Event::PacketIn { packet, route: None, now: T0 + 10 }
}

fn timer_of(s: &NodeProtocolState) -> Event {
    Event::TimerFired { timer: s.pending_timer.unwrap_or(999), now: T0 + 1000 }
}

pub fn drive(s: &NodeProtocolState, e: Event) -> (NodeProtocolState, Vec<Action>) {
    step(s, &e, &mut ViaG).expect("fixture transition is legal")
}

pub fn fresh_b() -> NodeProtocolState {
    NodeProtocolState::new(addr(B), NodeMetrics::uniform(7.0))
}

/// The query B receives from A.
pub fn query_from_a() -> MonitoringPacket {
    query(Q, A, &[Q, R], session())
}

pub fn fixture(state: AutomatonState) -> NodeProtocolState {
    let mut initial = fresh_b();
    initial.last_session = Some(old_session());
    let q1 = drive(&fresh_b(), packet_in(query_from_a())).0;
    match state {
        Initial => initial,
        Q1 => q1,
        Q2 => drive(&q1, packet_in(query(B, C, &[A, Q, R], session()))).0,
        A1 => drive(&q1, timer_of(&q1)).0,
        A2 => {
            let a1 = fixture(A1);
            drive(&a1, timer_of(&a1)).0
        }
        A3 => {
            let a2 = fixture(A2);
            drive(&a2, timer_of(&a2)).0
        }
    }
}

/// A representative event of `class` for `s`; `None` when the class cannot
/// arise in that state.
pub fn event_for(s: &NodeProtocolState, class: EventClass) -> Option<Event> {
    let ts = s.session.clone().unwrap_or_else(session);
    let packet = match class {
        EventClass::StartMonitoring => {
            return Some(Event::StartMonitoring {
                function: MonitorFunction::Count,
                timeout_ms: 1000,
                now: T0 + 5,
            });
        }
        EventClass::Timer => return Some(timer_of(s)),
        EventClass::Packet(c) => match c {
            PacketClass::QueryForMe => query(D, D, &[D], make_session_id(addr(D), T0 + 77)),
            PacketClass::QueryAckForMe => query(B, C, &[A, Q, R], ts),
            PacketClass::DuplicateQuery => {
                query(A, D, &[A, Q, R], s.session.clone().unwrap_or_else(old_session))
            }
            PacketClass::AggregateForMe => aggregate(PacketType::Aggregate, header(B, C, B, B, ts), 1),
            PacketClass::AggregateAckForMe => {
                let awaited = if s.automaton == A3 { s.forward_target.unwrap() } else { addr(A) };
                let mut p = aggregate(PacketType::Aggregate, header(R, A, R, R, ts), 4);
                p.source = awaited;
                p
            }
            PacketClass::RouteForMe => aggregate(PacketType::AggregateRoute, header(A, D, B, B, ts), 2),
            PacketClass::RouteToForward => {
                aggregate(PacketType::AggregateRoute, header(A, D, R, B, ts), 2)
            }
            PacketClass::ForwardForMe => {
                aggregate(PacketType::AggregateForward, header(A, D, B, B, ts), 2)
            }
            PacketClass::Ignore => aggregate(
                PacketType::Aggregate,
                header(B, C, B, B, make_session_id(addr(D), 1)),
                1,
            ),
        },
    };
    (classify_packet(s, &packet) == match class {
        EventClass::Packet(c) => c,
        _ => unreachable!(),
    })
    .then(|| packet_in(packet))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Unreachable,
    Illegal,
    /// State and actions untouched.
    NoOp,
    /// Successor state and the packet types broadcast, in order.
    To(AutomatonState, Vec<PacketType>),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::To(s, kinds) => {
                let k: Vec<&str> = kinds.iter().map(|k| k.token()).collect();
                write!(f, "{s} [{}]", k.join(","))
            }
            other => write!(f, "{other:?}"),
        }
    }
}

pub fn all_event_classes() -> Vec<EventClass> {
    let mut v = vec![EventClass::StartMonitoring, EventClass::Timer];
    v.extend(PacketClass::ALL.iter().map(|&c| EventClass::Packet(c)));
    v
}

pub fn observe(state: AutomatonState, class: EventClass) -> Outcome {
    let s = fixture(state);
    assert_eq!(s.automaton, state, "fixture for {state}");
    let Some(e) = event_for(&s, class) else {
        return Outcome::Unreachable;
    };
    match step(&s, &e, &mut ViaG) {
        Err(ProtocolError::IllegalTransition { .. }) => Outcome::Illegal,
        Ok((next, actions)) if next == s && actions.is_empty() => Outcome::NoOp,
        Ok((next, actions)) => Outcome::To(
            next.automaton,
            actions
                .iter()
                .filter_map(|a| match a {
                    Action::Broadcast { packet, .. } => Some(packet.kind),
                    _ => None,
                })
                .collect(),
        ),
    }
}

pub fn expected(state: AutomatonState, class: EventClass) -> Outcome {
    use EventClass as E;
    use Outcome::*;
    use PacketClass as P;
    use PacketType::{Aggregate as Agg, AggregateForward as Fwd, AggregateRoute as Rte, Query as Qry};
    let joined = state != Initial;
    match (state, class) {
        (_, E::Packet(P::Ignore | P::DuplicateQuery)) => NoOp,
        // Relaying rescue traffic is stateless and allowed everywhere.
        (s, E::Packet(P::RouteToForward)) => To(s, vec![Rte]),
        (Initial, E::StartMonitoring) => To(Q1, vec![Qry]),
        (Initial, E::Timer) => NoOp,
        (Initial, E::Packet(P::QueryForMe)) => To(Q1, vec![Qry]),
        (Initial, E::Packet(_)) => Unreachable,
        (_, E::StartMonitoring | E::Packet(P::QueryForMe)) => Illegal,
        (Q1 | Q2, E::Packet(P::QueryAckForMe)) => To(Q2, vec![]),
        (Q1 | Q2, E::Timer) => To(A1, vec![Agg]),
        (A1, E::Timer) => To(A2, vec![Rte]),
        (A2, E::Timer) => To(A3, vec![Fwd]),
        (A3, E::Timer) => To(A3, vec![Fwd]),
        (Q1 | Q2, E::Packet(P::AggregateAckForMe)) => Illegal,
        (_, E::Packet(P::AggregateAckForMe)) => To(Initial, vec![]),
        (_, E::Packet(P::QueryAckForMe)) => Illegal,
        // Q1 has no acknowledged children, so C's report is an extra piece.
        (Q1, E::Packet(P::AggregateForMe)) => To(Q1, vec![]),
        // C was the only acknowledged child: coverage completes.
        (Q2, E::Packet(P::AggregateForMe)) => To(A1, vec![Agg]),
        // Already reported: the late piece is passed up unchanged.
        (s, E::Packet(P::AggregateForMe)) => To(s, vec![Agg]),
        // Rescue consumers acknowledge explicitly; aggregate states also pass it up.
        (s @ (Q1 | Q2), E::Packet(P::RouteForMe | P::ForwardForMe)) => To(s, vec![Agg]),
        (s, E::Packet(P::RouteForMe | P::ForwardForMe)) if joined => To(s, vec![Agg, Agg]),
        _ => unreachable!("table is total"),
    }
}

/// Compares the full table; returns the mismatching cells.
pub fn table_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    for state in AutomatonState::ALL {
        for class in all_event_classes() {
            let got = observe(state, class);
            let want = expected(state, class);
            if got != want {
                bad.push(format!("({state}, {class:?}): got {got}, want {want}"));
            }
        }
    }
    bad
}

/// The (state, event class) pairs that emit at least one packet.
pub fn emitting_pairs() -> Vec<(AutomatonState, EventClass)> {
    let mut v = Vec::new();
    for state in AutomatonState::ALL {
        for class in all_event_classes() {
            if matches!(observe(state, class), Outcome::To(_, ref k) if !k.is_empty()) {
                v.push((state, class));
            }
        }
    }
    v
}

/// The labeled edges of the diagram, checked one by one with the detail the
/// table does not capture. Returns failures.
pub fn labeled_edge_failures() -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |label: &str, ok: bool| {
        if !ok {
            bad.push(label.to_string());
        }
    };

    // 1. startMonitoring()/ SND Query
    let (s, acts) = drive(&fresh_b(), event_for(&fresh_b(), EventClass::StartMonitoring).unwrap());
    let root_query = acts.iter().find_map(|a| match a {
        Action::Broadcast { packet, .. } => Some(packet.clone()),
        _ => None,
    });
    check(
        "1 start: Q1, query parent=self relaySet=[self], timer",
        s.automaton == Q1
            && s.is_root
            && root_query.as_ref().is_some_and(|q| {
                q.parent == addr(B) && q.query.as_ref().unwrap().relay_set == vec![addr(B)]
            })
            && acts.iter().any(|a| matches!(a, Action::StartTimer { duration_ms: 1000, .. })),
    );

    // 2. RCV Query/ SND Query
    let (q1, acts) = drive(&fresh_b(), packet_in(query_from_a()));
    let child = acts.iter().find_map(|a| match a {
        Action::Broadcast { packet, .. } => Some(packet.clone()),
        _ => None,
    });
    check(
        "2 join: parent=A, child query parent=A source=B relaySet=[A,Q,R]",
        q1.parent == Some(addr(A))
            && q1.relay_set == vec![addr(Q), addr(R)]
            && child.as_ref().is_some_and(|c| {
                c.parent == addr(A)
                    && c.source == addr(B)
                    && c.query.as_ref().unwrap().relay_set == vec![addr(A), addr(Q), addr(R)]
            }),
    );

    // 3, 4. RCV QueryACK/ acc(ACK_IP)
    let q2 = fixture(Q2);
    check("3 ack: acked_children={C}", q2.automaton == Q2 && q2.acked_children.contains(&addr(C)));
    let mut ack2 = query(B, D, &[A, Q, R], session());
    ack2.destination = addr(B);
    let (q2b, _) = drive(&q2, packet_in(ack2));
    check("4 second ack: stays Q2 with {C, D}", q2b.automaton == Q2 && q2b.acked_children.len() == 2);

    // 5. edge node timeout()/ SND Aggregate with own observation only
    let (a1, acts) = drive(&q1, timer_of(&q1));
    check(
        "5 edge timeout: A1, aggregate obs=1 to parent",
        a1.automaton == A1
            && acts.iter().any(|a| matches!(a, Action::Broadcast { packet, .. }
                if packet.kind == PacketType::Aggregate
                    && packet.destination == addr(A)
                    && packet.aggregate.unwrap().observations == 1)),
    );

    // 6. all children reported: fold and send
    let (a1c, acts) = drive(&q2, event_for(&q2, EventClass::Packet(PacketClass::AggregateForMe)).unwrap());
    check(
        "6 coverage: A1, aggregate obs=2",
        a1c.automaton == A1
            && acts.iter().any(|a| matches!(a, Action::Broadcast { packet, .. }
                if packet.aggregate.unwrap().observations == 2)),
    );

    // 7. partial fold on timeout
    let (a1p, acts) = drive(&q2b, timer_of(&q2b));
    check(
        "7 partial: A1 with own observation",
        a1p.automaton == A1
            && acts.iter().any(|a| matches!(a, Action::Broadcast { packet, .. }
                if packet.aggregate.unwrap().observations == 1)),
    );

    // 8, 10, 13. RCV AggregateACK/ done()
    for st in [A1, A2, A3] {
        let s = fixture(st);
        let (n, acts) = drive(&s, event_for(&s, EventClass::Packet(PacketClass::AggregateAckForMe)).unwrap());
        check(
            &format!("ack in {st}: Initial, Done"),
            n.automaton == Initial && acts.contains(&Action::Done),
        );
    }

    // 9. timeout()/ SND AggregateRoute toward the parent via a gateway
    let (a2, acts) = drive(&a1, timer_of(&a1));
    check(
        "9 route: A2, destination parent, gateway G",
        a2.automaton == A2
            && acts.iter().any(|a| matches!(a, Action::Broadcast { packet, route: Some(_) }
                if packet.kind == PacketType::AggregateRoute
                    && packet.destination == addr(A)
                    && packet.gateway == addr(G))),
    );

    // 11, 12. forwards walk the relay set nearest first
    let (a3, acts) = drive(&a2, timer_of(&a2));
    let first = acts.iter().find_map(|a| match a {
        Action::Broadcast { packet, .. } => Some(packet.destination),
        _ => None,
    });
    let (a3b, acts) = drive(&a3, timer_of(&a3));
    let second = acts.iter().find_map(|a| match a {
        Action::Broadcast { packet, .. } => Some(packet.destination),
        _ => None,
    });
    check(
        "11-12 forward: Q then R",
        a3.automaton == A3 && first == Some(addr(Q)) && a3b.automaton == A3 && second == Some(addr(R)),
    );

    // 14. emptyForwards()/ error()
    let (gone, acts) = drive(&a3b, timer_of(&a3b));
    check(
        "14 exhausted: Initial, ISOLATED, no packets",
        gone.automaton == Initial
            && acts.contains(&Action::LogError(ErrorCode::Isolated))
            && !acts.iter().any(Action::is_broadcast),
    );

    // Root completion: verdict, explicit acks, back to Initial.
    let mut root = fixture(Q2);
    root.is_root = true;
    root.parent = Some(addr(B));
    let (r, acts) = drive(&root, event_for(&root, EventClass::Packet(PacketClass::AggregateForMe)).unwrap());
    check(
        "root coverage: verdict obs=2, ack to C, Initial",
        r.automaton == Initial
            && acts.contains(&Action::DeliverVerdict { outcome: 2.0, observations: 2 })
            && acts.iter().any(|a| matches!(a, Action::Broadcast { packet, .. }
                if packet.kind == PacketType::Aggregate && packet.destination == addr(C))),
    );

    bad
}

/// Duplicate and grandchild rules. Returns failures.
pub fn duplicate_rule_failures() -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |label: &str, ok: bool| {
        if !ok {
            bad.push(label.to_string());
        }
    };
    let q2 = fixture(Q2);

    // A second copy of the query never triggers a second rebroadcast.
    for st in AutomatonState::ALL.into_iter().filter(|s| *s != Initial) {
        let s = fixture(st);
        let e = packet_in(query(A, A, &[Q, R], s.session.clone().unwrap()));
        let out = step(&s, &e, &mut ViaG);
        check(&format!("duplicate query in {st} is a no-op"), out == Ok((s.clone(), vec![])));
    }

    // Grandchild rescue: a non-child aggregate is kept as an extra and the
    // timer restarts with the base timeout.
    let mut p = aggregate(PacketType::Aggregate, header(B, D, B, B, session()), 3);
    p.parent = addr(B);
    let (n, acts) = drive(&q2, packet_in(p.clone()));
    check(
        "grandchild: extra kept, timer restarted at base",
        n.automaton == Q2
            && n.extra_aggregates.len() == 1
            && acts.iter().any(|a| matches!(a, Action::StartTimer { duration_ms: 1000, .. })),
    );
    let (n2, acts2) = drive(&n, packet_in(p));
    check("grandchild: same origin twice is absorbed once", n2 == n && acts2.is_empty());

    // Completion folds the extra in.
    let (done, acts) =
        drive(&n, event_for(&n, EventClass::Packet(PacketClass::AggregateForMe)).unwrap());
    check(
        "grandchild: folded into upward aggregate",
        done.automaton == A1
            && acts.iter().any(|a| matches!(a, Action::Broadcast { packet, .. }
                if packet.aggregate.unwrap().observations == 1 + 1 + 3)),
    );

    // A child report restarts the collection window.
    let q2c = drive(&q2, packet_in(query(B, D, &[A, Q, R], session()))).0;
    let (_, acts) = drive(&q2c, event_for(&q2c, EventClass::Packet(PacketClass::AggregateForMe)).unwrap());
    check(
        "child report with others pending restarts the long wait",
        acts.iter().any(|a| matches!(a, Action::StartTimer { duration_ms: 5000, .. })),
    );

    // Stale timers are ignored.
    let stale = Event::TimerFired { timer: 12345, now: T0 };
    check("stale timer is a no-op", step(&q2, &stale, &mut ViaG) == Ok((q2.clone(), vec![])));
    bad
}

/// The pairs expected to emit packets, listed independently of `expected`.
pub fn expected_emitting_pairs() -> Vec<(AutomatonState, EventClass)> {
    use EventClass as E;
    use PacketClass as P;
    let mut want = vec![(Initial, E::StartMonitoring), (Initial, E::Packet(P::QueryForMe))];
    for s in [Q1, Q2] {
        want.push((s, E::Timer));
    }
    want.push((Q2, E::Packet(P::AggregateForMe)));
    for s in [A1, A2, A3] {
        want.push((s, E::Timer));
        want.push((s, E::Packet(P::AggregateForMe)));
    }
    for s in [Q1, Q2, A1, A2, A3] {
        want.push((s, E::Packet(P::RouteForMe)));
        want.push((s, E::Packet(P::ForwardForMe)));
    }
    for s in AutomatonState::ALL {
        want.push((s, E::Packet(P::RouteToForward)));
    }
    want.sort();
    want
}
