//! Deterministic discrete-event network simulator.
//!
//! Proposer, coordinator, acceptor, and learner nodes exchange UDP-like
//! datagrams through static multicast groups. Events (packet deliveries,
//! host timers, workload and fault commands) are processed in
//! `(time, sequence)` order from a single queue; all node logic runs on the
//! event loop, one event at a time, so a run is a pure function of
//! topology, workload, and seed — two runs with identical inputs produce
//! byte-identical traces.
//!
//! Per multicast copy the seeded generator is consumed in a fixed order —
//! drop draw, duplicate draw, jitter draw, reorder draw — keeping
//! determinism independent of any map iteration order. Crashes follow the
//! amnesia model: a crashed node loses all state (registers included) and
//! in-flight deliveries to it are discarded; a restarted node boots with
//! zeroed registers. A restarted coordinator comes back inactive — leader
//! activation only ever happens through an explicit failover command.
//!
//! Second-class (Cheap Paxos) acceptors run the same acceptor program but
//! stand on server nodes behind a link latency multiplier.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::acceptor::{Acceptor, AcceptorConfig};
use crate::coordinator::{Coordinator, CoordinatorConfig};
use crate::hosts::{self, Learner, Proposer};
use crate::pipeline::{DropReason, ExecStep, GroupId, PipelineOutcome};
use crate::trace::{EventId, HeaderFields, LearnerSummary, Trace, TraceRecord};
use crate::wire::{MsgType, PaxosMessage, LEARNER_PORT, MAX_PAYLOAD, PAXOS_PORT};
use crate::SimTime;

// ---------------------------------------------------------------------------
// Identities and topology
// ---------------------------------------------------------------------------

/// Identifier of a simulated node; doubles as the index into the node table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

/// Which program(s) a node runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoleSpec {
    Proposer,
    Coordinator {
        rank: u16,
        active: bool,
    },
    Acceptor {
        acceptor_id: u16,
    },
    Learner,
    /// Coordinator co-located with an acceptor on one switch: sequenced
    /// packets pass through the local acceptor before egress.
    CoordinatorAcceptor {
        rank: u16,
        active: bool,
        acceptor_id: u16,
    },
}

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    pub role: RoleSpec,
    /// Link latency multiplier; 1 for switches, higher for second-class
    /// (server) acceptors.
    pub latency_mult: u64,
}

/// Link parameters; applied per multicast copy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetParams {
    pub drop_prob: f64,
    pub duplicate_prob: f64,
    pub base_latency_us: u64,
    /// Uniform extra delay in `0..=jitter_us`.
    pub jitter_us: u64,
    /// Uniform extra reordering delay in `0..=reorder_us`.
    pub reorder_us: u64,
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams {
            drop_prob: 0.0,
            duplicate_prob: 0.0,
            base_latency_us: 50,
            jitter_us: 20,
            reorder_us: 0,
        }
    }
}

/// The four role groups every topology must define.
#[derive(Debug, Clone, Copy)]
pub struct RoleGroups {
    pub coordinator: GroupId,
    pub acceptor: GroupId,
    pub learner: GroupId,
    pub proposer: GroupId,
}

impl Default for RoleGroups {
    fn default() -> Self {
        RoleGroups {
            coordinator: GroupId(1),
            acceptor: GroupId(2),
            learner: GroupId(3),
            proposer: GroupId(4),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub groups: BTreeMap<GroupId, Vec<NodeId>>,
    pub role_groups: RoleGroups,
    pub params: NetParams,
}

impl Topology {
    fn validate(&self) -> Result<(), SimError> {
        for (index, spec) in self.nodes.iter().enumerate() {
            if spec.id.0 as usize != index {
                return Err(SimError::InvalidTopology(format!(
                    "node {} has id {} but sits at index {index}",
                    spec.name, spec.id.0
                )));
            }
        }
        let rg = self.role_groups;
        for (label, group) in [
            ("coordinator", rg.coordinator),
            ("acceptor", rg.acceptor),
            ("learner", rg.learner),
            ("proposer", rg.proposer),
        ] {
            match self.groups.get(&group) {
                Some(members) if !members.is_empty() => {}
                _ => {
                    return Err(SimError::InvalidTopology(format!(
                        "{label} group {group} is missing or empty"
                    )))
                }
            }
        }
        for members in self.groups.values() {
            for member in members {
                if member.0 as usize >= self.nodes.len() {
                    return Err(SimError::InvalidTopology(format!(
                        "group member {} does not exist",
                        member.0
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }
}

/// Protocol-wide knobs shared by the node programs.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    /// Tolerated acceptor failures; the quorum is f + 1.
    pub f: usize,
    pub instance_window: u32,
    pub phase1_chunk: u32,
    pub retransmit_timeout: SimTime,
    pub max_retries: u32,
    pub sweep_retry_timeout: SimTime,
    pub sweep_max_retries: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            f: 1,
            instance_window: crate::pipeline::DEFAULT_INSTANCE_WINDOW,
            phase1_chunk: crate::pipeline::DEFAULT_INSTANCE_WINDOW,
            retransmit_timeout: hosts::DEFAULT_RETRANSMIT_TIMEOUT,
            max_retries: hosts::DEFAULT_MAX_RETRIES,
            sweep_retry_timeout: 100_000,
            sweep_max_retries: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("submit payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
}

// ---------------------------------------------------------------------------
// Faults, commands, events
// ---------------------------------------------------------------------------

/// Harness-scheduled fault commands.
#[derive(Debug, Clone, PartialEq)]
pub enum FaultCommand {
    /// Discard the node's state (registers included); in-flight deliveries
    /// to it are dropped.
    Crash { node: NodeId },
    /// Boot the node fresh with zeroed registers.
    Restart { node: NodeId },
    /// Activate a standby coordinator: it performs a Phase-1 sweep.
    Failover { node: NodeId },
    /// Replace the link parameters from this point on.
    SetLink { params: NetParams },
}

#[derive(Debug, Clone)]
enum Command {
    Submit { proposer: NodeId, payload: Vec<u8> },
    Fault(FaultCommand),
}

#[derive(Debug, Clone)]
struct Packet {
    src: NodeId,
    dst: NodeId,
    dst_port: u16,
    payload: Vec<u8>,
    send_id: EventId,
}

#[derive(Debug)]
enum EventKind {
    Deliver(Packet),
    Timer(NodeId),
    Command(Command),
}

/// Queue entry; processed in `(time, seq)` order, `seq` assigned from
/// insertion order.
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest event.
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

// ---------------------------------------------------------------------------
// Seeded generator
// ---------------------------------------------------------------------------

/// Splitmix64. Hand-rolled so the draw stream can never shift under a
/// dependency upgrade; reproducibility matters more than quality here.
#[derive(Debug, Clone)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw; always consumes exactly one position in the stream.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform in `0..=bound`; always consumes exactly one position.
    pub fn up_to(&mut self, bound: u64) -> u64 {
        let raw = self.next_u64();
        if bound == 0 {
            0
        } else {
            raw % (bound + 1)
        }
    }
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

enum NodeBody {
    Proposer(Proposer),
    Coordinator(Box<Coordinator>),
    Acceptor(Acceptor),
    Learner(Learner),
    Colocated {
        coordinator: Box<Coordinator>,
        acceptor: Acceptor,
    },
}

struct SimNode {
    spec: NodeSpec,
    body: Option<NodeBody>,
    crashed: bool,
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

pub struct Simulator {
    topo: Topology,
    protocol: ProtocolConfig,
    params: NetParams,
    nodes: Vec<SimNode>,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    now: SimTime,
    horizon: SimTime,
    rng: SimRng,
    trace: Trace,
    /// Earliest armed wake per node; later timer events are stale.
    timers: BTreeMap<NodeId, SimTime>,
    violation: Option<String>,
}

impl Simulator {
    pub fn new(
        topo: Topology,
        protocol: ProtocolConfig,
        seed: u64,
        horizon: SimTime,
    ) -> Result<Self, SimError> {
        topo.validate()?;
        let params = topo.params.clone();
        let nodes = topo
            .nodes
            .iter()
            .map(|spec| SimNode {
                spec: spec.clone(),
                body: Some(build_body(spec, &topo, &protocol, true)),
                crashed: false,
            })
            .collect();
        Ok(Simulator {
            topo,
            protocol,
            params,
            nodes,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            horizon,
            rng: SimRng::new(seed),
            trace: Trace::new(),
            timers: BTreeMap::new(),
            violation: None,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn violation(&self) -> Option<&str> {
        self.violation.as_deref()
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.topo.node_by_name(name)
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { time, seq, kind });
    }

    /// Schedules an application submit at `time` on a proposer node.
    pub fn schedule_submit(
        &mut self,
        time: SimTime,
        proposer: NodeId,
        payload: Vec<u8>,
    ) -> Result<(), SimError> {
        let spec = self
            .nodes
            .get(proposer.0 as usize)
            .ok_or_else(|| SimError::UnknownNode(format!("node {}", proposer.0)))?;
        if spec.spec.role != RoleSpec::Proposer {
            return Err(SimError::InvalidFault(format!(
                "{} is not a proposer",
                spec.spec.name
            )));
        }
        if payload.len() > MAX_PAYLOAD {
            return Err(SimError::PayloadTooLarge(payload.len()));
        }
        self.schedule(
            time,
            EventKind::Command(Command::Submit { proposer, payload }),
        );
        Ok(())
    }

    /// Schedules a fault command at `time`.
    pub fn inject_fault(&mut self, time: SimTime, fault: FaultCommand) -> Result<(), SimError> {
        match &fault {
            FaultCommand::Crash { node } | FaultCommand::Restart { node } => {
                self.check_node(*node)?;
            }
            FaultCommand::Failover { node } => {
                let spec = self.check_node(*node)?;
                if !matches!(
                    spec.role,
                    RoleSpec::Coordinator { .. } | RoleSpec::CoordinatorAcceptor { .. }
                ) {
                    return Err(SimError::InvalidFault(format!(
                        "failover target {} is not a coordinator",
                        spec.name
                    )));
                }
            }
            FaultCommand::SetLink { .. } => {}
        }
        self.schedule(time, EventKind::Command(Command::Fault(fault)));
        Ok(())
    }

    fn check_node(&self, node: NodeId) -> Result<&NodeSpec, SimError> {
        self.nodes
            .get(node.0 as usize)
            .map(|n| &n.spec)
            .ok_or_else(|| SimError::UnknownNode(format!("node {}", node.0)))
    }

    fn name(&self, node: NodeId) -> String {
        self.nodes[node.0 as usize].spec.name.clone()
    }

    /// Runs until the queue is quiescent or the horizon is reached; returns
    /// the completed trace. End-of-run per-node stats are appended unless
    /// nothing ran at all.
    pub fn run(&mut self) -> &Trace {
        let mut processed = false;
        while let Some(event) = self.queue.pop() {
            if event.time > self.horizon || self.violation.is_some() {
                break;
            }
            processed = true;
            self.now = event.time;
            match event.kind {
                EventKind::Deliver(packet) => self.on_deliver(packet),
                EventKind::Timer(node) => self.on_timer(node),
                EventKind::Command(command) => self.on_command(command),
            }
        }
        if processed {
            self.emit_node_stats();
        }
        &self.trace
    }

    // -- network -----------------------------------------------------------

    /// Multicasts a payload to every group member except the source. Per
    /// member the fixed draw order is drop, duplicate, jitter, reorder; a
    /// duplicate copy draws its own jitter and reorder. Returns the number
    /// of scheduled deliveries.
    pub fn multicast(
        &mut self,
        src: NodeId,
        group: GroupId,
        dst_port: u16,
        payload: Vec<u8>,
        paxos: Option<&PaxosMessage>,
    ) -> Result<usize, SimError> {
        let members = self
            .topo
            .groups
            .get(&group)
            .ok_or(SimError::UnknownGroup(group))?
            .clone();
        let src_name = self.name(src);
        let header = paxos.map(HeaderFields::from);
        let now = self.now;
        let send_id = self.trace.push(|id| TraceRecord::Send {
            id,
            time: now,
            node: src_name.clone(),
            group: group.0,
            port: dst_port,
            paxos: header,
        });

        let mut scheduled = 0;
        for dst in members {
            if dst == src {
                continue;
            }
            let dropped = self.rng.chance(self.params.drop_prob);
            let duplicated = self.rng.chance(self.params.duplicate_prob);
            let jitter = self.rng.up_to(self.params.jitter_us);
            let reorder = self.rng.up_to(self.params.reorder_us);
            let mult = self.latency_mult(src).max(self.latency_mult(dst));
            let delay = (self.params.base_latency_us + jitter + reorder) * mult;

            if dropped {
                let dst_name = self.name(dst);
                self.trace.push(|id| TraceRecord::NetDrop {
                    id,
                    time: now,
                    send_id,
                    src: src_name.clone(),
                    dst: dst_name,
                });
            } else {
                self.schedule(
                    now + delay,
                    EventKind::Deliver(Packet {
                        src,
                        dst,
                        dst_port,
                        payload: payload.clone(),
                        send_id,
                    }),
                );
                scheduled += 1;
            }

            if duplicated {
                let jitter2 = self.rng.up_to(self.params.jitter_us);
                let reorder2 = self.rng.up_to(self.params.reorder_us);
                let delay2 = (self.params.base_latency_us + jitter2 + reorder2) * mult;
                self.schedule(
                    now + delay2,
                    EventKind::Deliver(Packet {
                        src,
                        dst,
                        dst_port,
                        payload: payload.clone(),
                        send_id,
                    }),
                );
                scheduled += 1;
            }
        }
        Ok(scheduled)
    }

    fn latency_mult(&self, node: NodeId) -> u64 {
        self.nodes[node.0 as usize].spec.latency_mult.max(1)
    }

    fn multicast_paxos(&mut self, src: NodeId, group: GroupId, msg: &PaxosMessage) {
        self.multicast(src, group, PAXOS_PORT, msg.encode(), Some(msg))
            .expect("configured groups exist");
    }

    // -- timers --------------------------------------------------------------

    fn arm_timer(&mut self, node: NodeId, at: SimTime) {
        match self.timers.get(&node) {
            Some(&armed) if armed <= at => {}
            _ => {
                self.timers.insert(node, at);
                self.schedule(at, EventKind::Timer(node));
            }
        }
    }

    fn on_timer(&mut self, node: NodeId) {
        if self.timers.get(&node) != Some(&self.now) {
            return; // superseded by an earlier re-arm
        }
        self.timers.remove(&node);
        if self.nodes[node.0 as usize].crashed {
            return;
        }
        let mut body = self.nodes[node.0 as usize]
            .body
            .take()
            .expect("body present");
        let node_name = self.name(node);
        match &mut body {
            NodeBody::Proposer(proposer) => {
                let out = proposer.on_timer(self.now);
                let group = proposer.coordinator_group();
                for msg in &out.retransmits {
                    self.multicast_paxos(node, group, msg);
                }
                let now = self.now;
                for request in out.failed {
                    self.trace.push(|id| TraceRecord::RequestFailed {
                        id,
                        time: now,
                        node: node_name.clone(),
                        request,
                    });
                }
                if let Some(at) = out.next_wake {
                    self.nodes[node.0 as usize].body = Some(body);
                    self.arm_timer(node, at);
                    return;
                }
            }
            NodeBody::Coordinator(coordinator) => {
                let (sweep_1as, wake) = coordinator.poll(self.now);
                let group = coordinator_egress(coordinator);
                for msg in &sweep_1as {
                    self.multicast_paxos(node, group, msg);
                }
                if let Some(at) = wake {
                    self.nodes[node.0 as usize].body = Some(body);
                    self.arm_timer(node, at);
                    return;
                }
            }
            NodeBody::Colocated { .. } => {
                let wake = self.colocated_poll(node, &mut body);
                if let Some(at) = wake {
                    self.nodes[node.0 as usize].body = Some(body);
                    self.arm_timer(node, at);
                    return;
                }
            }
            NodeBody::Acceptor(_) | NodeBody::Learner(_) => {}
        }
        self.nodes[node.0 as usize].body = Some(body);
    }

    // -- commands ------------------------------------------------------------

    fn on_command(&mut self, command: Command) {
        match command {
            Command::Submit { proposer, payload } => self.on_submit(proposer, payload),
            Command::Fault(fault) => self.on_fault(fault),
        }
    }

    fn on_submit(&mut self, node: NodeId, payload: Vec<u8>) {
        if self.nodes[node.0 as usize].crashed {
            return;
        }
        let mut body = self.nodes[node.0 as usize]
            .body
            .take()
            .expect("body present");
        if let NodeBody::Proposer(proposer) = &mut body {
            let node_name = self.name(node);
            let now = self.now;
            let (request, msg) = proposer
                .submit(&payload, now)
                .expect("payload validated at scheduling time");
            self.trace.push(|id| TraceRecord::Submit {
                id,
                time: now,
                node: node_name,
                request,
                value: msg.value.to_hex(),
            });
            let group = proposer.coordinator_group();
            self.multicast_paxos(node, group, &msg);
            self.nodes[node.0 as usize].body = Some(body);
            self.arm_timer(node, now + self.protocol.retransmit_timeout);
            return;
        }
        self.nodes[node.0 as usize].body = Some(body);
    }

    fn on_fault(&mut self, fault: FaultCommand) {
        let now = self.now;
        let detail = self.describe_fault(&fault);
        self.trace.push(|id| TraceRecord::Fault {
            id,
            time: now,
            command: detail,
        });
        match fault {
            FaultCommand::Crash { node } => {
                let idx = node.0 as usize;
                self.nodes[idx].crashed = true;
                // State is discarded at crash time (amnesia model).
                let fresh = build_body(&self.nodes[idx].spec, &self.topo, &self.protocol, false);
                self.nodes[idx].body = Some(fresh);
                self.timers.remove(&node);
            }
            FaultCommand::Restart { node } => {
                let idx = node.0 as usize;
                self.nodes[idx].crashed = false;
                let fresh = build_body(&self.nodes[idx].spec, &self.topo, &self.protocol, false);
                self.nodes[idx].body = Some(fresh);
            }
            FaultCommand::Failover { node } => {
                if self.nodes[node.0 as usize].crashed {
                    return;
                }
                let mut body = self.nodes[node.0 as usize]
                    .body
                    .take()
                    .expect("body present");
                match &mut body {
                    NodeBody::Coordinator(coordinator) => {
                        let sweep = coordinator.activate(self.now);
                        let group = coordinator_egress(coordinator);
                        for msg in &sweep {
                            self.multicast_paxos(node, group, msg);
                        }
                        let wake = self.now + self.protocol.sweep_retry_timeout;
                        self.nodes[node.0 as usize].body = Some(body);
                        self.arm_timer(node, wake);
                        return;
                    }
                    NodeBody::Colocated { coordinator, .. } => {
                        let sweep = coordinator.activate(self.now);
                        self.colocated_emit(node, &mut body, sweep);
                        let wake = self.now + self.protocol.sweep_retry_timeout;
                        self.nodes[node.0 as usize].body = Some(body);
                        self.arm_timer(node, wake);
                        return;
                    }
                    _ => {}
                }
                self.nodes[node.0 as usize].body = Some(body);
            }
            FaultCommand::SetLink { params } => {
                self.params = params;
            }
        }
    }

    fn describe_fault(&self, fault: &FaultCommand) -> String {
        match fault {
            FaultCommand::Crash { node } => format!("crash {}", self.name(*node)),
            FaultCommand::Restart { node } => format!("restart {}", self.name(*node)),
            FaultCommand::Failover { node } => format!("failover {}", self.name(*node)),
            FaultCommand::SetLink { params } => format!(
                "set_link drop={} dup={} base={}us jitter={}us reorder={}us",
                params.drop_prob,
                params.duplicate_prob,
                params.base_latency_us,
                params.jitter_us,
                params.reorder_us
            ),
        }
    }

    // -- delivery ------------------------------------------------------------

    fn on_deliver(&mut self, packet: Packet) {
        let idx = packet.dst.0 as usize;
        let src_name = self.name(packet.src);
        let dst_name = self.name(packet.dst);
        let now = self.now;

        if self.nodes[idx].crashed {
            self.trace.push(|id| TraceRecord::Deliver {
                id,
                time: now,
                send_id: packet.send_id,
                src: src_name,
                dst: dst_name,
                port: packet.dst_port,
                outcome: "node_down",
                reason: None,
                group: None,
                actions: Vec::new(),
                paxos: None,
            });
            return;
        }

        let mut body = self.nodes[idx].body.take().expect("body present");
        let mut outcome = "drop";
        let mut reason: Option<&'static str> = None;
        let mut group: Option<u16> = None;
        let mut actions: Vec<ExecStep> = Vec::new();
        let mut header: Option<HeaderFields> = None;

        match &mut body {
            NodeBody::Proposer(proposer) => {
                if packet.dst_port == LEARNER_PORT {
                    match hosts::decode_response(&packet.payload) {
                        Ok((inst, value)) => {
                            proposer.on_response(inst, &value);
                            outcome = "consume";
                        }
                        Err(_) => {
                            reason = Some(DropReason::ParseError.as_str());
                        }
                    }
                } else {
                    outcome = "bypass";
                }
            }
            NodeBody::Learner(learner) => {
                if packet.dst_port != PAXOS_PORT {
                    outcome = "bypass";
                } else {
                    match PaxosMessage::decode(&packet.payload) {
                        Err(_) => reason = Some(DropReason::ParseError.as_str()),
                        Ok(msg) => {
                            header = Some(HeaderFields::from(&msg));
                            if msg.msgtype == MsgType::Phase2B {
                                outcome = "consume";
                                self.learner_ingest(packet.dst, &dst_name, learner, &msg);
                            } else {
                                reason = Some(DropReason::NoMatch.as_str());
                            }
                        }
                    }
                }
            }
            NodeBody::Acceptor(acceptor) => {
                if packet.dst_port != PAXOS_PORT {
                    outcome = "bypass";
                } else {
                    match PaxosMessage::decode(&packet.payload) {
                        Err(_) => {
                            acceptor.note_parse_error();
                            reason = Some(DropReason::ParseError.as_str());
                        }
                        Ok(msg) => {
                            header = Some(HeaderFields::from(&msg));
                            let (out, exec) = acceptor.process(msg);
                            actions = exec;
                            match out {
                                PipelineOutcome::Forward { msg, group: egress } => {
                                    outcome = "forward";
                                    group = Some(egress.0);
                                    self.multicast_paxos(packet.dst, egress, &msg);
                                }
                                PipelineOutcome::Drop(r) => reason = Some(r.as_str()),
                            }
                        }
                    }
                }
            }
            NodeBody::Coordinator(coordinator) => {
                if packet.dst_port != PAXOS_PORT {
                    outcome = "bypass";
                } else {
                    match PaxosMessage::decode(&packet.payload) {
                        Err(_) => {
                            coordinator.note_parse_error();
                            reason = Some(DropReason::ParseError.as_str());
                        }
                        Ok(msg) => {
                            header = Some(HeaderFields::from(&msg));
                            let egress = coordinator_egress(coordinator);
                            if msg.msgtype == MsgType::Phase1B {
                                // 1Bs go to the control-plane driver, not
                                // the sequencing table.
                                outcome = "consume";
                                actions.push(ExecStep {
                                    table: "control",
                                    action: "phase1_on_1b",
                                });
                                for recovery in coordinator.phase1_on_1b(&msg) {
                                    self.multicast_paxos(packet.dst, egress, &recovery);
                                }
                            } else {
                                let (out, exec) = coordinator.sequence_2a(msg);
                                actions = exec;
                                match out {
                                    PipelineOutcome::Forward { msg, group: g } => {
                                        outcome = "forward";
                                        group = Some(g.0);
                                        self.multicast_paxos(packet.dst, g, &msg);
                                    }
                                    PipelineOutcome::Drop(r) => reason = Some(r.as_str()),
                                }
                            }
                            let (sweep_1as, wake) = coordinator.poll(self.now);
                            for m in &sweep_1as {
                                self.multicast_paxos(packet.dst, egress, m);
                            }
                            if let Some(at) = wake {
                                self.nodes[idx].body = Some(body);
                                self.push_deliver_record(
                                    &packet, src_name, dst_name, outcome, reason, group, actions,
                                    header,
                                );
                                self.arm_timer(packet.dst, at);
                                return;
                            }
                        }
                    }
                }
            }
            NodeBody::Colocated { .. } => {
                let (o, r, g, a, h) = self.colocated_deliver(packet.dst, &mut body, &packet);
                outcome = o;
                reason = r;
                group = g;
                actions = a;
                header = h;
                if packet.dst_port == PAXOS_PORT {
                    if let Some(at) = self.colocated_poll(packet.dst, &mut body) {
                        self.nodes[idx].body = Some(body);
                        self.push_deliver_record(
                            &packet, src_name, dst_name, outcome, reason, group, actions, header,
                        );
                        self.arm_timer(packet.dst, at);
                        return;
                    }
                }
            }
        }

        self.nodes[idx].body = Some(body);
        self.push_deliver_record(
            &packet, src_name, dst_name, outcome, reason, group, actions, header,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn push_deliver_record(
        &mut self,
        packet: &Packet,
        src: String,
        dst: String,
        outcome: &'static str,
        reason: Option<&'static str>,
        group: Option<u16>,
        actions: Vec<ExecStep>,
        paxos: Option<HeaderFields>,
    ) {
        let now = self.now;
        let send_id = packet.send_id;
        let port = packet.dst_port;
        self.trace.push(|id| TraceRecord::Deliver {
            id,
            time: now,
            send_id,
            src,
            dst,
            port,
            outcome,
            reason,
            group,
            actions,
            paxos,
        });
    }

    /// Learner 2B intake: vote matrix update, decision detection, in-order
    /// execution, and responses back to the proposer group.
    fn learner_ingest(
        &mut self,
        node: NodeId,
        node_name: &str,
        learner: &mut Learner,
        msg: &PaxosMessage,
    ) {
        let now = self.now;
        match learner.on_2b(msg) {
            Err(conflict) => {
                let detail = conflict.to_string();
                self.violation = Some(detail.clone());
                self.trace.push(|id| TraceRecord::Violation {
                    id,
                    time: now,
                    node: node_name.to_string(),
                    detail,
                });
            }
            Ok(decided) => {
                if let Some((inst, value)) = decided {
                    self.trace.push(|id| TraceRecord::Decision {
                        id,
                        time: now,
                        node: node_name.to_string(),
                        inst,
                        rnd: msg.rnd,
                        value: value.to_hex(),
                    });
                }
                let group = learner.proposer_group();
                for (inst, value) in learner.drain_deliverable() {
                    self.trace.push(|id| TraceRecord::Execute {
                        id,
                        time: now,
                        node: node_name.to_string(),
                        inst,
                        value: value.to_hex(),
                    });
                    let payload = hosts::encode_response(inst, &value);
                    self.multicast(node, group, LEARNER_PORT, payload, None)
                        .expect("configured groups exist");
                }
            }
        }
    }

    // -- co-located coordinator + acceptor ------------------------------------

    /// Emits coordinator-originated messages (sweep 1As, recovery 2As) from
    /// a co-located node: each is multicast to the acceptor group and also
    /// processed by the local acceptor half without a network hop; local
    /// 1Bs feed the local driver, local 2Bs go to the learner group.
    fn colocated_emit(&mut self, node: NodeId, body: &mut NodeBody, initial: Vec<PaxosMessage>) {
        let NodeBody::Colocated {
            coordinator,
            acceptor,
        } = body
        else {
            unreachable!("colocated_emit on non-colocated body");
        };
        let mut work = initial;
        while let Some(msg) = work.pop() {
            self.multicast_paxos(node, coordinator_egress(coordinator), &msg);
            let (out, _) = acceptor.process(msg);
            if let PipelineOutcome::Forward { msg: reply, group } = out {
                match reply.msgtype {
                    MsgType::Phase1B => work.extend(coordinator.phase1_on_1b(&reply)),
                    MsgType::Phase2B => self.multicast_paxos(node, group, &reply),
                    _ => {}
                }
            }
        }
    }

    fn colocated_poll(&mut self, node: NodeId, body: &mut NodeBody) -> Option<SimTime> {
        let (sweep_1as, wake) = {
            let NodeBody::Colocated { coordinator, .. } = &mut *body else {
                unreachable!()
            };
            coordinator.poll(self.now)
        };
        if !sweep_1as.is_empty() {
            self.colocated_emit(node, body, sweep_1as);
        }
        wake
    }

    /// Packet intake for a co-located node. Proposer 2As are sequenced and
    /// then pass through the local acceptor before egress; 1Bs feed the
    /// local driver; everything else runs the acceptor pipeline (with local
    /// 1B loopback when this node's coordinator is active).
    fn colocated_deliver(
        &mut self,
        node: NodeId,
        body: &mut NodeBody,
        packet: &Packet,
    ) -> (
        &'static str,
        Option<&'static str>,
        Option<u16>,
        Vec<ExecStep>,
        Option<HeaderFields>,
    ) {
        if packet.dst_port != PAXOS_PORT {
            return ("bypass", None, None, Vec::new(), None);
        }
        let msg = match PaxosMessage::decode(&packet.payload) {
            Ok(msg) => msg,
            Err(_) => {
                let NodeBody::Colocated { acceptor, .. } = body else {
                    unreachable!()
                };
                acceptor.note_parse_error();
                return (
                    "drop",
                    Some(DropReason::ParseError.as_str()),
                    None,
                    Vec::new(),
                    None,
                );
            }
        };
        let header = Some(HeaderFields::from(&msg));

        let NodeBody::Colocated {
            coordinator,
            acceptor,
        } = body
        else {
            unreachable!()
        };

        if msg.msgtype == MsgType::Phase2A && coordinator.is_active() {
            // Sequencing first, then the local acceptor sees the stamped
            // packet before it leaves the switch.
            let (out, mut exec) = coordinator.sequence_2a(msg);
            match out {
                PipelineOutcome::Forward {
                    msg: stamped,
                    group,
                } => {
                    self.multicast_paxos(node, group, &stamped);
                    let (acc_out, acc_exec) = acceptor.process(stamped);
                    exec.extend(acc_exec);
                    if let PipelineOutcome::Forward {
                        msg: two_b,
                        group: lg,
                    } = acc_out
                    {
                        self.multicast_paxos(node, lg, &two_b);
                    }
                    ("forward", None, Some(group.0), exec, header)
                }
                PipelineOutcome::Drop(r) => ("drop", Some(r.as_str()), None, exec, header),
            }
        } else if msg.msgtype == MsgType::Phase1B {
            let recoveries = coordinator.phase1_on_1b(&msg);
            let exec = vec![ExecStep {
                table: "control",
                action: "phase1_on_1b",
            }];
            if !recoveries.is_empty() {
                self.colocated_emit(node, body, recoveries);
            }
            ("consume", None, None, exec, header)
        } else {
            // 1A (or a 2A while this coordinator is standby) takes the
            // plain acceptor path.
            let (out, exec) = acceptor.process(msg);
            match out {
                PipelineOutcome::Forward { msg: reply, group } => {
                    if reply.msgtype == MsgType::Phase1B && coordinator.is_active() {
                        // Loopback: this node is its own coordinator.
                        let recoveries = coordinator.phase1_on_1b(&reply);
                        self.multicast_paxos(node, group, &reply);
                        if !recoveries.is_empty() {
                            self.colocated_emit(node, body, recoveries);
                        }
                    } else {
                        self.multicast_paxos(node, group, &reply);
                    }
                    ("forward", None, Some(group.0), exec, header)
                }
                PipelineOutcome::Drop(r) => ("drop", Some(r.as_str()), None, exec, header),
            }
        }
    }

    // -- end-of-run stats ------------------------------------------------------

    fn emit_node_stats(&mut self) {
        let now = self.now;
        for idx in 0..self.nodes.len() {
            let name = self.nodes[idx].spec.name.clone();
            let Some(body) = &self.nodes[idx].body else {
                continue;
            };
            let record = match body {
                NodeBody::Proposer(p) => TraceRecord::NodeStats {
                    id: 0,
                    time: now,
                    node: name,
                    drops: None,
                    tables: None,
                    coordinator: None,
                    proposer: Some(p.stats()),
                    learner: None,
                },
                NodeBody::Learner(l) => TraceRecord::NodeStats {
                    id: 0,
                    time: now,
                    node: name,
                    drops: None,
                    tables: None,
                    coordinator: None,
                    proposer: None,
                    learner: Some(LearnerSummary {
                        decided: l.decided().len() as u64,
                        delivered: l.delivered_log().len() as u64,
                    }),
                },
                NodeBody::Acceptor(a) => TraceRecord::NodeStats {
                    id: 0,
                    time: now,
                    node: name,
                    drops: Some(a.drop_counters()),
                    tables: Some(a.table_counters().into_iter().collect()),
                    coordinator: None,
                    proposer: None,
                    learner: None,
                },
                NodeBody::Coordinator(c) => TraceRecord::NodeStats {
                    id: 0,
                    time: now,
                    node: name,
                    drops: Some(c.drop_counters()),
                    tables: Some(c.table_counters().into_iter().collect()),
                    coordinator: Some(c.snapshot()),
                    proposer: None,
                    learner: None,
                },
                NodeBody::Colocated {
                    coordinator,
                    acceptor,
                } => {
                    let mut tables: BTreeMap<String, BTreeMap<String, u64>> =
                        coordinator.table_counters().into_iter().collect();
                    tables.extend(acceptor.table_counters());
                    TraceRecord::NodeStats {
                        id: 0,
                        time: now,
                        node: name,
                        drops: Some(acceptor.drop_counters()),
                        tables: Some(tables),
                        coordinator: Some(coordinator.snapshot()),
                        proposer: None,
                        learner: None,
                    }
                }
            };
            self.trace.push(|id| set_record_id(record, id));
        }
    }
}

fn set_record_id(mut record: TraceRecord, new_id: EventId) -> TraceRecord {
    if let TraceRecord::NodeStats { id, .. } = &mut record {
        *id = new_id;
    }
    record
}

fn coordinator_egress(c: &Coordinator) -> GroupId {
    c.acceptor_group()
}

/// Builds (or rebuilds) a node's program state. `initial` distinguishes
/// boot-time construction from crash/restart rebuilds: a rebuilt
/// coordinator is never active, activation only comes from failover.
fn build_body(
    spec: &NodeSpec,
    topo: &Topology,
    protocol: &ProtocolConfig,
    initial: bool,
) -> NodeBody {
    let rg = topo.role_groups;
    match &spec.role {
        RoleSpec::Proposer => NodeBody::Proposer(Proposer::new(
            spec.id.0,
            rg.coordinator,
            protocol.retransmit_timeout,
            protocol.max_retries,
        )),
        RoleSpec::Learner => NodeBody::Learner(Learner::new(protocol.f, rg.proposer)),
        RoleSpec::Acceptor { acceptor_id } => NodeBody::Acceptor(Acceptor::new(AcceptorConfig {
            acceptor_id: *acceptor_id,
            instance_window: protocol.instance_window,
            coordinator_group: rg.coordinator,
            learner_group: rg.learner,
        })),
        RoleSpec::Coordinator { rank, active } => {
            NodeBody::Coordinator(Box::new(Coordinator::new(
                coordinator_config(*rank, topo, protocol),
                initial && *active,
            )))
        }
        RoleSpec::CoordinatorAcceptor {
            rank,
            active,
            acceptor_id,
        } => NodeBody::Colocated {
            coordinator: Box::new(Coordinator::new(
                coordinator_config(*rank, topo, protocol),
                initial && *active,
            )),
            acceptor: Acceptor::new(AcceptorConfig {
                acceptor_id: *acceptor_id,
                instance_window: protocol.instance_window,
                coordinator_group: rg.coordinator,
                learner_group: rg.learner,
            }),
        },
    }
}

fn coordinator_config(rank: u16, topo: &Topology, protocol: &ProtocolConfig) -> CoordinatorConfig {
    CoordinatorConfig {
        rank,
        quorum: protocol.f + 1,
        instance_window: protocol.instance_window,
        phase1_chunk: protocol.phase1_chunk,
        acceptor_group: topo.role_groups.acceptor,
        sweep_retry_timeout: protocol.sweep_retry_timeout,
        sweep_max_retries: protocol.sweep_max_retries,
    }
}
