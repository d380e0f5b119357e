//! Deterministic discrete-event network simulator.
//!
//! Events are ordered by `(time, seq)`; every random draw comes from a
//! ChaCha stream derived from the run seed, one stream per purpose, so a
//! configuration and seed fully determine the trace. Changing the routing
//! backend or the speed leaves placement and sensor values untouched, which
//! keeps paired comparisons paired.

mod config;
mod trace;

pub use config::{ConfigError, NodeFailure, RadioModel, RootSelection, ScenarioConfig};
pub use trace::{
    read_ndjson, to_ndjson, write_ndjson, RecordKind, SimTrace, TraceReadError, TraceRecord,
    TRACE_FORMAT, TRACE_VERSION,
};

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{MonitorFunction, NodeMetrics};
use crate::metrics::{reduce, MetricsReport};
use crate::mobility::{Area, MobilityModel, MobilityState, Position};
use crate::protocol::{step, Action, Event, NodeProtocolState, RouteContext, TimerId};
use crate::routing::{
    gossip_next_hop, snapshot_shortest_path_next_hop, RoutePacketMeta, RoutingBackend,
    TopologySnapshot,
};
use crate::wire::{encode_packet, Address, MonitoringPacket};

/// Protocol clocks read simulated time offset by this Unix epoch (ms).
pub const EPOCH_UNIX_MS: u64 = 1_500_000_000_000;

/// Attempts made to draw a connected placement when one is required.
pub const MAX_PLACEMENT_ATTEMPTS: u32 = 10_000;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_METRICS: u64 = 1;
const STREAM_MOBILITY: u64 = 2;
const STREAM_LOSS: u64 = 3;
const STREAM_ROUTING: u64 = 4;

pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// How the medium decides who hears a broadcast.
#[derive(Debug, Clone)]
pub enum Connectivity {
    UnitDisk { range_m: f64 },
    /// Fixed adjacency over `Address::from_index` addresses.
    Graph(TopologySnapshot),
}

/// Everything needed to start a simulation, independent of how placements
/// were produced.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub positions: Vec<Position>,
    pub metrics: Vec<NodeMetrics>,
    pub connectivity: Connectivity,
    pub area: Area,
    pub mobility: MobilityModel,
    pub speed: f64,
    pub root: usize,
    pub function: MonitorFunction,
    pub timeout_ms: u64,
    pub propagation_delay_ms: u64,
    pub loss_probability: f64,
    pub routing: RoutingBackend,
    pub duration_ms: u64,
    pub tick_ms: u64,
    pub snapshot_period_ms: u64,
    pub max_hops: u32,
    pub failures: Vec<NodeFailure>,
    pub seed: u64,
}

impl SimSetup {
    /// Static simulation over an explicit graph on `metrics.len()` nodes.
    pub fn on_graph(
        edges: &[(usize, usize)],
        metrics: Vec<NodeMetrics>,
        root: usize,
        function: MonitorFunction,
    ) -> Self {
        let n = metrics.len();
        let graph = TopologySnapshot::from_edges(
            (0..n).map(Address::from_index),
            edges.iter().map(|&(a, b)| (Address::from_index(a), Address::from_index(b))),
        );
        let defaults = ScenarioConfig::default();
        SimSetup {
            positions: vec![Position::default(); n],
            metrics,
            connectivity: Connectivity::Graph(graph),
            area: defaults.area,
            mobility: MobilityModel::Static,
            speed: 0.0,
            root,
            function,
            timeout_ms: defaults.timeout_ms,
            propagation_delay_ms: defaults.radio.propagation_delay_ms,
            loss_probability: 0.0,
            routing: RoutingBackend::Gossip,
            duration_ms: defaults.duration_ms,
            tick_ms: defaults.tick_ms,
            snapshot_period_ms: defaults.snapshot_period_ms,
            max_hops: 3 * n as u32,
            failures: Vec::new(),
            seed: 0,
        }
    }

    /// Draws placement, sensor values and root for `config`.
    pub fn from_config(config: &ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let n = config.node_count;
        let mut placement = stream(config.seed, STREAM_PLACEMENT);
        let positions = draw_positions(config, &mut placement)?;
        let root = match config.root {
            RootSelection::Index(i) => i,
            RootSelection::Random => placement.random_range(0..n),
        };
        let mut m = stream(config.seed, STREAM_METRICS);
        let metrics = (0..n)
            .map(|_| NodeMetrics {
                cpu: m.random::<f64>() * 100.0,
                ram: m.random::<f64>() * 100.0,
                value: m.random::<f64>() * 100.0,
            })
            .collect();
        Ok(SimSetup {
            positions,
            metrics,
            connectivity: Connectivity::UnitDisk { range_m: config.radio.range_m },
            area: config.area,
            mobility: config.mobility,
            speed: config.speed,
            root,
            function: config.function,
            timeout_ms: config.timeout_ms,
            propagation_delay_ms: config.radio.propagation_delay_ms,
            loss_probability: config.radio.loss_probability,
            routing: config.routing,
            duration_ms: config.duration_ms,
            tick_ms: config.tick_ms,
            snapshot_period_ms: config.snapshot_period_ms,
            max_hops: config.max_hops(),
            failures: config.failures.clone(),
            seed: config.seed,
        })
    }
}

fn draw_positions(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Position>, ConfigError> {
    let attempts = if config.require_connected { MAX_PLACEMENT_ATTEMPTS } else { 1 };
    for _ in 0..attempts {
        let positions: Vec<Position> =
            (0..config.node_count).map(|_| config.area.random_point(rng)).collect();
        if !config.require_connected || unit_disk_connected(&positions, config.radio.range_m) {
            return Ok(positions);
        }
    }
    Err(ConfigError::Disconnected(attempts))
}

pub fn unit_disk_topology(positions: &[Position], range_m: f64) -> TopologySnapshot {
    let mut t = TopologySnapshot::new((0..positions.len()).map(Address::from_index));
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if positions[i].distance(positions[j]) <= range_m {
                t.add_edge(Address::from_index(i), Address::from_index(j));
            }
        }
    }
    t
}

pub fn unit_disk_connected(positions: &[Position], range_m: f64) -> bool {
    let t = unit_disk_topology(positions, range_m);
    t.hop_distances(Address::from_index(0)).len() == positions.len()
}

#[derive(Debug, Clone)]
enum EventKind {
    StartMonitoring,
    Delivery { to: usize, from: usize, packet: MonitoringPacket, route: Option<RoutePacketMeta> },
    Timer { node: usize, timer: TimerId },
    MobilityTick,
    SnapshotRefresh,
    NodeDown { node: usize },
    ScenarioEnd,
}

#[derive(Debug, Clone)]
struct Scheduled {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct SimNode {
    addr: Address,
    proto: NodeProtocolState,
    mobility: MobilityState,
    alive: bool,
}

pub struct Simulator {
    setup: SimSetup,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: Vec<SimNode>,
    active_timers: BTreeSet<(usize, TimerId)>,
    snapshot: TopologySnapshot,
    mobility_rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
    trace: SimTrace,
    finished: bool,
}

struct SimRoutes<'a> {
    from: Address,
    neighbors: BTreeSet<Address>,
    backend: RoutingBackend,
    snapshot: &'a TopologySnapshot,
    rng: &'a mut ChaCha8Rng,
    max_hops: u32,
}

impl RouteContext for SimRoutes<'_> {
    fn next_hop(&mut self, to: Address, meta: &RoutePacketMeta) -> Option<Address> {
        if meta.exhausted() {
            return None;
        }
        match self.backend {
            RoutingBackend::Gossip => {
                if self.neighbors.contains(&to) {
                    Some(to)
                } else {
                    gossip_next_hop(&self.neighbors, meta, self.rng).ok()
                }
            }
            RoutingBackend::Snapshot => {
                snapshot_shortest_path_next_hop(self.snapshot, self.from, to).ok()
            }
        }
    }

    fn max_hops(&self) -> u32 {
        self.max_hops
    }
}

impl Simulator {
    pub fn new(setup: SimSetup) -> Self {
        let mut mobility_rng = stream(setup.seed, STREAM_MOBILITY);
        let nodes = setup
            .positions
            .iter()
            .zip(&setup.metrics)
            .enumerate()
            .map(|(i, (&pos, &metrics))| {
                let addr = Address::from_index(i);
                SimNode {
                    addr,
                    proto: NodeProtocolState::new(addr, metrics),
                    mobility: MobilityState::spawn(
                        setup.mobility,
                        pos,
                        setup.speed,
                        setup.area,
                        &mut mobility_rng,
                    ),
                    alive: true,
                }
            })
            .collect();
        let mut sim = Simulator {
            loss_rng: stream(setup.seed, STREAM_LOSS),
            routing_rng: stream(setup.seed, STREAM_ROUTING),
            mobility_rng,
            setup,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            active_timers: BTreeSet::new(),
            snapshot: TopologySnapshot::default(),
            trace: SimTrace::default(),
            finished: false,
        };
        sim.snapshot = sim.current_topology();
        sim.schedule(0, EventKind::StartMonitoring);
        if sim.setup.mobility != MobilityModel::Static {
            sim.schedule(sim.setup.tick_ms, EventKind::MobilityTick);
        }
        if sim.setup.routing == RoutingBackend::Snapshot {
            sim.schedule(sim.setup.snapshot_period_ms, EventKind::SnapshotRefresh);
        }
        for f in sim.setup.failures.clone() {
            sim.schedule(f.at_ms, EventKind::NodeDown { node: f.node });
        }
        let end = sim.setup.duration_ms;
        sim.schedule(end, EventKind::ScenarioEnd);
        sim
    }

    pub fn address(&self, node: usize) -> Address {
        self.nodes[node].addr
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.setup.root
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn protocol_state(&self, node: usize) -> &NodeProtocolState {
        &self.nodes[node].proto
    }

    pub fn position(&self, node: usize) -> Position {
        self.nodes[node].mobility.position
    }

    fn schedule(&mut self, time: u64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq, kind }));
    }

    fn in_range(&self, a: usize, b: usize) -> bool {
        match &self.setup.connectivity {
            Connectivity::UnitDisk { range_m } => {
                self.nodes[a].mobility.position.distance(self.nodes[b].mobility.position) <= *range_m
            }
            Connectivity::Graph(g) => g.has_edge(self.nodes[a].addr, self.nodes[b].addr),
        }
    }

    /// Indices of live nodes currently in range of `node`.
    pub fn neighbor_indices(&self, node: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&j| j != node && self.nodes[j].alive && self.in_range(node, j))
            .collect()
    }

    pub fn neighbors(&self, node: usize) -> BTreeSet<Address> {
        self.neighbor_indices(node).into_iter().map(|j| self.nodes[j].addr).collect()
    }

    fn current_topology(&self) -> TopologySnapshot {
        let mut t = TopologySnapshot::new(self.nodes.iter().map(|n| n.addr));
        for i in 0..self.nodes.len() {
            if !self.nodes[i].alive {
                continue;
            }
            for j in self.neighbor_indices(i) {
                t.add_edge(self.nodes[i].addr, self.nodes[j].addr);
            }
        }
        t
    }

    /// Single event. Returns `false` once the run is over.
    pub fn step_once(&mut self) -> bool {
        if self.finished {
            return false;
        }
        let Some(Reverse(ev)) = self.queue.pop() else {
            self.finished = true;
            return false;
        };
        self.now = ev.time;
        match ev.kind {
            EventKind::ScenarioEnd => {
                self.finished = true;
                return false;
            }
            EventKind::StartMonitoring => {
                let root = self.setup.root;
                let addr = self.nodes[root].addr;
                self.trace.push(self.now, addr, RecordKind::MonitoringStarted);
                let e = Event::StartMonitoring {
                    function: self.setup.function,
                    timeout_ms: self.setup.timeout_ms,
                    now: EPOCH_UNIX_MS + self.now,
                };
                self.drive(root, e);
            }
            EventKind::Delivery { to, from, packet, route } => {
                if self.nodes[to].alive {
                    let from_addr = self.nodes[from].addr;
                    self.trace.push(
                        self.now,
                        self.nodes[to].addr,
                        RecordKind::Delivered { from: from_addr, packet_type: packet.kind },
                    );
                    let e = Event::PacketIn { packet, route, now: EPOCH_UNIX_MS + self.now };
                    self.drive(to, e);
                }
            }
            EventKind::Timer { node, timer } => {
                if self.active_timers.remove(&(node, timer)) && self.nodes[node].alive {
                    self.drive(node, Event::TimerFired { timer, now: EPOCH_UNIX_MS + self.now });
                }
            }
            EventKind::MobilityTick => {
                let dt = self.setup.tick_ms as f64 / 1000.0;
                let area = self.setup.area;
                for n in &mut self.nodes {
                    n.mobility = n.mobility.step(dt, area, &mut self.mobility_rng);
                }
                let next = self.now + self.setup.tick_ms;
                self.schedule(next, EventKind::MobilityTick);
            }
            EventKind::SnapshotRefresh => {
                self.snapshot = self.current_topology();
                let next = self.now + self.setup.snapshot_period_ms;
                self.schedule(next, EventKind::SnapshotRefresh);
            }
            EventKind::NodeDown { node } => {
                self.nodes[node].alive = false;
                self.trace.push(self.now, self.nodes[node].addr, RecordKind::NodeDown);
            }
        }
        true
    }

    pub fn run_to_end(&mut self) {
        while self.step_once() {}
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }

    fn drive(&mut self, node: usize, event: Event) {
        let neighbors = self.neighbors(node);
        let addr = self.nodes[node].addr;
        let mut routes = SimRoutes {
            from: addr,
            neighbors,
            backend: self.setup.routing,
            snapshot: &self.snapshot,
            rng: &mut self.routing_rng,
            max_hops: self.setup.max_hops,
        };
        let before = self.nodes[node].proto.automaton;
        let result = step(&self.nodes[node].proto, &event, &mut routes);
        let actions = match result {
            Ok((state, actions)) => {
                self.nodes[node].proto = state;
                actions
            }
            Err(_) => {
                self.trace.push(
                    self.now,
                    addr,
                    RecordKind::Error { code: crate::protocol::ErrorCode::IllegalTransition },
                );
                return;
            }
        };
        let after = self.nodes[node].proto.automaton;
        if before != after {
            self.trace.push(self.now, addr, RecordKind::StateChange { from: before, to: after });
        }
        for action in actions {
            match action {
                Action::Broadcast { packet, route } => self.broadcast(node, packet, route),
                Action::StartTimer { timer, duration_ms } => {
                    self.active_timers.insert((node, timer));
                    self.schedule(self.now + duration_ms, EventKind::Timer { node, timer });
                }
                Action::CancelTimer(timer) => {
                    self.active_timers.remove(&(node, timer));
                }
                Action::DeliverVerdict { outcome, observations } => {
                    self.trace.push(self.now, addr, RecordKind::Verdict { outcome, observations });
                }
                Action::LogError(code) => {
                    self.trace.push(self.now, addr, RecordKind::Error { code });
                }
                Action::Done => {}
            }
        }
    }

    /// Schedules a delivery to every live node in range of `sender`.
    pub fn broadcast(
        &mut self,
        sender: usize,
        packet: MonitoringPacket,
        route: Option<RoutePacketMeta>,
    ) {
        let bytes = encode_packet(&packet);
        let from = self.nodes[sender].addr;
        self.trace.push(
            self.now,
            from,
            RecordKind::Sent {
                packet_type: packet.kind,
                bytes: bytes.len(),
                packet: String::from_utf8(bytes).expect("JSON is UTF-8"),
            },
        );
        let at = self.now + self.setup.propagation_delay_ms;
        for to in self.neighbor_indices(sender) {
            let p = self.setup.loss_probability;
            if p > 0.0 && self.loss_rng.random::<f64>() < p {
                self.trace.push(
                    self.now,
                    self.nodes[to].addr,
                    RecordKind::Dropped { from, packet_type: packet.kind },
                );
                continue;
            }
            self.schedule(
                at,
                EventKind::Delivery { to, from: sender, packet: packet.clone(), route: route.clone() },
            );
        }
    }
}

/// Runs one simulation described by `config`.
pub fn run(config: &ScenarioConfig) -> Result<(SimTrace, MetricsReport), ConfigError> {
    let setup = SimSetup::from_config(config)?;
    let trace = run_setup(setup);
    let report = reduce(&trace, config.node_count);
    Ok((trace, report))
}

pub fn run_setup(setup: SimSetup) -> SimTrace {
    let mut sim = Simulator::new(setup);
    sim.run_to_end();
    sim.into_trace()
}
