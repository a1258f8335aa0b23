//! Scenario runner: TOML scenario files in, property verdicts out.
//!
//! A scenario describes the deployment (f, acceptor split, co-location,
//! standby coordinator), the link fault model, a workload of submits, and a
//! fault schedule. Running it builds the topology, drives the simulator,
//! and evaluates the property checkers over the trace: agreement, validity,
//! stability, log monotonicity, quorum minimality, chosen-value
//! consistency, closed-world, and a determinism replay.
//!
//! Checkers treat nodes as black boxes: they read only trace records, and
//! counterexamples cite trace event ids, so a failing report reproduces
//! from the scenario file and seed alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::millis;
use crate::netsim::{
    FaultCommand, NetParams, NodeId, NodeSpec, ProtocolConfig, RoleGroups, RoleSpec, SimError,
    Simulator, Topology,
};
use crate::trace::{EventId, Trace, TraceRecord};
use crate::wire::MAX_PAYLOAD;

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

fn default_f() -> usize {
    1
}
fn default_proposers() -> usize {
    1
}
fn default_learners() -> usize {
    2
}
fn default_duration_ms() -> u64 {
    10_000
}
fn default_instance_window() -> u32 {
    crate::pipeline::DEFAULT_INSTANCE_WINDOW
}
fn default_second_class_mult() -> u64 {
    10
}
fn default_gap_us() -> u64 {
    500
}
fn default_retransmit_timeout_ms() -> u64 {
    50
}
fn default_max_retries() -> u32 {
    10
}

/// Host-library knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostParams {
    #[serde(default = "default_retransmit_timeout_ms")]
    pub retransmit_timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

impl Default for HostParams {
    fn default() -> Self {
        HostParams {
            retransmit_timeout_ms: default_retransmit_timeout_ms(),
            max_retries: default_max_retries(),
        }
    }
}

/// One explicit workload entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitSpec {
    pub time_ms: u64,
    #[serde(default)]
    pub proposer: usize,
    pub value: String,
}

/// Generated workload: `count` submits of `prefix<i>` starting at
/// `start_ms`, one every `gap_us`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkSpec {
    pub start_ms: u64,
    pub count: u32,
    #[serde(default = "default_gap_us")]
    pub gap_us: u64,
    #[serde(default)]
    pub proposer: usize,
    pub prefix: String,
}

/// One fault-schedule entry. For `set_link`, omitted link fields keep the
/// scenario's base `[net]` values.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub time_ms: u64,
    /// crash | restart | failover | set_link
    pub cmd: String,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub drop_prob: Option<f64>,
    #[serde(default)]
    pub duplicate_prob: Option<f64>,
    #[serde(default)]
    pub base_latency_us: Option<u64>,
    #[serde(default)]
    pub jitter_us: Option<u64>,
    #[serde(default)]
    pub reorder_us: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Tolerated acceptor failures.
    #[serde(default = "default_f")]
    pub f: usize,
    /// Total acceptor count; defaults to 2f + 1, which is also the only
    /// legal value under `cheap_paxos`.
    #[serde(default)]
    pub acceptors: Option<usize>,
    #[serde(default = "default_proposers")]
    pub proposers: usize,
    #[serde(default = "default_learners")]
    pub learners: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration_ms")]
    pub duration_ms: u64,
    #[serde(default = "default_instance_window")]
    pub instance_window: u32,
    /// Instances per Phase-1 sweep; 0 means the whole window.
    #[serde(default)]
    pub phase1_chunk: u32,
    /// Split acceptors into f + 1 first-class switches and f second-class
    /// servers behind a latency multiplier.
    #[serde(default)]
    pub cheap_paxos: bool,
    /// Run the coordinator and acceptor 0 on one switch.
    #[serde(default)]
    pub colocate: bool,
    /// Add a standby coordinator (`coordinator1`) for failover faults.
    #[serde(default)]
    pub standby: bool,
    #[serde(default = "default_second_class_mult")]
    pub second_class_mult: u64,
    #[serde(default)]
    pub net: NetParams,
    #[serde(default)]
    pub hosts: HostParams,
    #[serde(default)]
    pub workload: Vec<SubmitSpec>,
    #[serde(default)]
    pub bulk: Vec<BulkSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn acceptor_count(&self) -> usize {
        self.acceptors.unwrap_or(2 * self.f + 1)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.duration_ms == 0 {
            return invalid("duration_ms must be positive".into());
        }
        if self.proposers == 0 || self.learners == 0 {
            return invalid("need at least one proposer and one learner".into());
        }
        if self.instance_window == 0 {
            return invalid("instance_window must be positive".into());
        }
        let acceptors = self.acceptor_count();
        if self.cheap_paxos {
            if acceptors != 2 * self.f + 1 {
                return invalid(format!(
                    "cheap_paxos requires exactly {} acceptors (f+1 first-class + f second-class), got {acceptors}",
                    2 * self.f + 1
                ));
            }
        } else if acceptors < 2 * self.f + 1 {
            return invalid(format!(
                "need at least 2f+1 = {} acceptors, got {acceptors}",
                2 * self.f + 1
            ));
        }
        for (i, submit) in self.workload.iter().enumerate() {
            if submit.proposer >= self.proposers {
                return invalid(format!(
                    "workload[{i}]: proposer {} out of range",
                    submit.proposer
                ));
            }
            if submit.value.len() > MAX_PAYLOAD {
                return invalid(format!("workload[{i}]: value exceeds {MAX_PAYLOAD} bytes"));
            }
            if millis(submit.time_ms) > millis(self.duration_ms) {
                return invalid(format!("workload[{i}]: submit after scenario end"));
            }
        }
        for (i, bulk) in self.bulk.iter().enumerate() {
            if bulk.proposer >= self.proposers {
                return invalid(format!(
                    "bulk[{i}]: proposer {} out of range",
                    bulk.proposer
                ));
            }
            if bulk.count == 0 {
                return invalid(format!("bulk[{i}]: count must be positive"));
            }
            let widest = format!("{}{}", bulk.prefix, bulk.count - 1);
            if widest.len() > MAX_PAYLOAD {
                return invalid(format!("bulk[{i}]: values exceed {MAX_PAYLOAD} bytes"));
            }
        }
        for (i, fault) in self.faults.iter().enumerate() {
            match fault.cmd.as_str() {
                "crash" | "restart" | "failover" => {
                    let Some(target) = &fault.target else {
                        return invalid(format!("faults[{i}]: {} needs a target", fault.cmd));
                    };
                    if !self.node_names().iter().any(|n| n == target) {
                        return invalid(format!("faults[{i}]: unknown target {target}"));
                    }
                    if fault.cmd == "failover" && !target.starts_with("coordinator") {
                        return invalid(format!(
                            "faults[{i}]: failover target must be a coordinator"
                        ));
                    }
                }
                "set_link" => {}
                other => return invalid(format!("faults[{i}]: unknown command {other}")),
            }
        }
        for p in [self.net.drop_prob, self.net.duplicate_prob] {
            if !(0.0..=1.0).contains(&p) {
                return invalid("probabilities must be within [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Node names in topology order.
    pub fn node_names(&self) -> Vec<String> {
        let mut names = vec!["coordinator0".to_string()];
        if self.standby {
            names.push("coordinator1".to_string());
        }
        let first_acceptor = if self.colocate { 1 } else { 0 };
        for i in first_acceptor..self.acceptor_count() {
            names.push(format!("acceptor{i}"));
        }
        for i in 0..self.learners {
            names.push(format!("learner{i}"));
        }
        for i in 0..self.proposers {
            names.push(format!("proposer{i}"));
        }
        names
    }

    fn effective_chunk(&self) -> u32 {
        if self.phase1_chunk == 0 {
            self.instance_window
        } else {
            self.phase1_chunk
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            f: self.f,
            instance_window: self.instance_window,
            phase1_chunk: self.effective_chunk(),
            retransmit_timeout: millis(self.hosts.retransmit_timeout_ms),
            max_retries: self.hosts.max_retries,
            ..ProtocolConfig::default()
        }
    }

    /// Builds the static topology: one active coordinator (optionally
    /// co-located with acceptor 0), an optional standby, 2f+1 acceptors
    /// (first-class switches, then second-class servers under cheap Paxos),
    /// learners, proposers, and the four role groups.
    pub fn topology(&self) -> Topology {
        let rg = RoleGroups::default();
        let mut nodes = Vec::new();
        let mut coordinators = Vec::new();
        let mut acceptors = Vec::new();
        let mut learners = Vec::new();
        let mut proposers = Vec::new();
        let mut next = 0u16;
        let mut take = || {
            let id = NodeId(next);
            next += 1;
            id
        };

        let coord0 = take();
        coordinators.push(coord0);
        if self.colocate {
            acceptors.push(coord0);
            nodes.push(NodeSpec {
                id: coord0,
                name: "coordinator0".into(),
                role: RoleSpec::CoordinatorAcceptor {
                    rank: 0,
                    active: true,
                    acceptor_id: 0,
                },
                latency_mult: 1,
            });
        } else {
            nodes.push(NodeSpec {
                id: coord0,
                name: "coordinator0".into(),
                role: RoleSpec::Coordinator {
                    rank: 0,
                    active: true,
                },
                latency_mult: 1,
            });
        }
        if self.standby {
            let id = take();
            coordinators.push(id);
            nodes.push(NodeSpec {
                id,
                name: "coordinator1".into(),
                role: RoleSpec::Coordinator {
                    rank: 1,
                    active: false,
                },
                latency_mult: 1,
            });
        }

        let first_class = self.f + 1;
        let first_acceptor = if self.colocate { 1 } else { 0 };
        for i in first_acceptor..self.acceptor_count() {
            let id = take();
            acceptors.push(id);
            let second_class = self.cheap_paxos && i >= first_class;
            nodes.push(NodeSpec {
                id,
                name: format!("acceptor{i}"),
                role: RoleSpec::Acceptor {
                    acceptor_id: i as u16,
                },
                latency_mult: if second_class {
                    self.second_class_mult
                } else {
                    1
                },
            });
        }
        for i in 0..self.learners {
            let id = take();
            learners.push(id);
            nodes.push(NodeSpec {
                id,
                name: format!("learner{i}"),
                role: RoleSpec::Learner,
                latency_mult: 1,
            });
        }
        for i in 0..self.proposers {
            let id = take();
            proposers.push(id);
            nodes.push(NodeSpec {
                id,
                name: format!("proposer{i}"),
                role: RoleSpec::Proposer,
                latency_mult: 1,
            });
        }

        let mut groups = BTreeMap::new();
        groups.insert(rg.coordinator, coordinators);
        groups.insert(rg.acceptor, acceptors);
        groups.insert(rg.learner, learners);
        groups.insert(rg.proposer, proposers);
        Topology {
            nodes,
            groups,
            role_groups: rg,
            params: self.net.clone(),
        }
    }

    /// Builds a ready-to-run simulator with workload and faults scheduled.
    pub fn build(&self, seed: u64) -> Result<Simulator, ScenarioError> {
        self.validate()?;
        let mut sim = Simulator::new(
            self.topology(),
            self.protocol(),
            seed,
            millis(self.duration_ms),
        )?;

        for submit in &self.workload {
            let node = sim
                .node_by_name(&format!("proposer{}", submit.proposer))
                .expect("validated proposer");
            sim.schedule_submit(
                millis(submit.time_ms),
                node,
                submit.value.clone().into_bytes(),
            )?;
        }
        for bulk in &self.bulk {
            let node = sim
                .node_by_name(&format!("proposer{}", bulk.proposer))
                .expect("validated proposer");
            for i in 0..bulk.count {
                let at = millis(bulk.start_ms) + u64::from(i) * bulk.gap_us;
                sim.schedule_submit(at, node, format!("{}{}", bulk.prefix, i).into_bytes())?;
            }
        }
        for fault in &self.faults {
            let at = millis(fault.time_ms);
            let command = self.fault_command(&sim, fault)?;
            sim.inject_fault(at, command)?;
        }
        Ok(sim)
    }

    fn fault_command(
        &self,
        sim: &Simulator,
        fault: &FaultSpec,
    ) -> Result<FaultCommand, ScenarioError> {
        let resolve = |target: &Option<String>| -> Result<NodeId, ScenarioError> {
            let name = target.as_deref().unwrap_or_default();
            sim.node_by_name(name)
                .ok_or_else(|| ScenarioError::Invalid(format!("unknown fault target {name}")))
        };
        Ok(match fault.cmd.as_str() {
            "crash" => FaultCommand::Crash {
                node: resolve(&fault.target)?,
            },
            "restart" => FaultCommand::Restart {
                node: resolve(&fault.target)?,
            },
            "failover" => FaultCommand::Failover {
                node: resolve(&fault.target)?,
            },
            "set_link" => FaultCommand::SetLink {
                params: NetParams {
                    drop_prob: fault.drop_prob.unwrap_or(self.net.drop_prob),
                    duplicate_prob: fault.duplicate_prob.unwrap_or(self.net.duplicate_prob),
                    base_latency_us: fault.base_latency_us.unwrap_or(self.net.base_latency_us),
                    jitter_us: fault.jitter_us.unwrap_or(self.net.jitter_us),
                    reorder_us: fault.reorder_us.unwrap_or(self.net.reorder_us),
                },
            },
            other => {
                return Err(ScenarioError::Invalid(format!(
                    "unknown fault command {other}"
                )))
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Property checkers
// ---------------------------------------------------------------------------

/// A failed property with the trace event ids that witness it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub event_ids: Vec<EventId>,
    pub detail: String,
}

impl Counterexample {
    fn new(event_ids: Vec<EventId>, detail: impl Into<String>) -> Self {
        Counterexample {
            event_ids,
            detail: detail.into(),
        }
    }
}

/// No two decision records for the same instance may carry different
/// values, and a detected-violation record fails outright.
pub fn check_agreement(records: &[TraceRecord]) -> Result<(), Counterexample> {
    let mut first: BTreeMap<u32, (EventId, &str)> = BTreeMap::new();
    for record in records {
        match record {
            TraceRecord::Violation { id, detail, .. } => {
                return Err(Counterexample::new(vec![*id], detail.clone()));
            }
            TraceRecord::Decision {
                id, inst, value, ..
            } => match first.get(inst) {
                None => {
                    first.insert(*inst, (*id, value));
                }
                Some((first_id, first_value)) if first_value != value => {
                    return Err(Counterexample::new(
                        vec![*first_id, *id],
                        format!("instance {inst} decided two different values"),
                    ));
                }
                Some(_) => {}
            },
            _ => {}
        }
    }
    Ok(())
}

/// Every decided value must have been submitted by some proposer.
pub fn check_validity(records: &[TraceRecord]) -> Result<(), Counterexample> {
    let submitted: BTreeSet<&str> = records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Submit { value, .. } => Some(value.as_str()),
            _ => None,
        })
        .collect();
    for record in records {
        if let TraceRecord::Decision {
            id, inst, value, ..
        } = record
        {
            if !submitted.contains(value.as_str()) {
                return Err(Counterexample::new(
                    vec![*id],
                    format!("instance {inst} decided a value nobody submitted"),
                ));
            }
        }
    }
    Ok(())
}

/// Per learner, a decided instance never changes value, and executes match
/// the decisions they follow.
pub fn check_stability(records: &[TraceRecord]) -> Result<(), Counterexample> {
    let mut per_learner: BTreeMap<(&str, u32), (EventId, &str)> = BTreeMap::new();
    for record in records {
        let (id, node, inst, value) = match record {
            TraceRecord::Decision {
                id,
                node,
                inst,
                value,
                ..
            } => (*id, node, *inst, value),
            TraceRecord::Execute {
                id,
                node,
                inst,
                value,
                ..
            } => (*id, node, *inst, value),
            _ => continue,
        };
        match per_learner.get(&(node.as_str(), inst)) {
            None => {
                per_learner.insert((node.as_str(), inst), (id, value));
            }
            Some((first_id, first_value)) if *first_value != value.as_str() => {
                return Err(Counterexample::new(
                    vec![*first_id, id],
                    format!("{node} changed the value of instance {inst}"),
                ));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Each learner's executed log is the contiguous instance sequence
/// 0, 1, 2, ... with no gaps, duplicates, or reordering.
pub fn check_log_monotonicity(records: &[TraceRecord]) -> Result<(), Counterexample> {
    let mut next: BTreeMap<&str, u32> = BTreeMap::new();
    for record in records {
        if let TraceRecord::Execute { id, node, inst, .. } = record {
            let expected = next.entry(node.as_str()).or_insert(0);
            if *inst != *expected {
                return Err(Counterexample::new(
                    vec![*id],
                    format!("{node} executed instance {inst}, expected {expected}"),
                ));
            }
            *expected += 1;
        }
    }
    Ok(())
}

/// Every decision must be backed by f + 1 identical 2Bs from distinct
/// acceptors delivered to that learner no later than the decision.
pub fn check_quorum_minimality(records: &[TraceRecord], f: usize) -> Result<(), Counterexample> {
    for record in records {
        let TraceRecord::Decision {
            id,
            time,
            node,
            inst,
            rnd,
            value,
        } = record
        else {
            continue;
        };
        let mut voters: BTreeSet<u16> = BTreeSet::new();
        for earlier in records {
            let TraceRecord::Deliver {
                time: dtime,
                dst,
                outcome,
                paxos: Some(header),
                ..
            } = earlier
            else {
                continue;
            };
            if dtime <= time
                && dst == node
                && *outcome == "consume"
                && header.msgtype == "2b"
                && header.inst == *inst
                && header.rnd == *rnd
                && header.value == *value
            {
                voters.insert(header.acpt);
            }
        }
        if voters.len() < f + 1 {
            return Err(Counterexample::new(
                vec![*id],
                format!(
                    "decision at instance {inst} backed by only {} of {} required votes",
                    voters.len(),
                    f + 1
                ),
            ));
        }
    }
    Ok(())
}

/// Chosen-value consistency: for each instance, all quorum-accepted
/// (f + 1 identical 2B emissions) values agree, and every decision matches
/// the chosen value. This is the recovery-safety property exercised by
/// coordinator failover: a re-proposal may re-decide an instance only with
/// the value a prior quorum accepted.
pub fn check_chosen_consistency(records: &[TraceRecord], f: usize) -> Result<(), Counterexample> {
    // (inst, rnd, value) -> distinct acceptor ids seen in 2B sends.
    let mut accepted: BTreeMap<(u32, u16, &str), BTreeSet<u16>> = BTreeMap::new();
    for record in records {
        if let TraceRecord::Send {
            paxos: Some(header),
            ..
        } = record
        {
            if header.msgtype == "2b" {
                accepted
                    .entry((header.inst, header.rnd, header.value.as_str()))
                    .or_default()
                    .insert(header.acpt);
            }
        }
    }
    let mut chosen: BTreeMap<u32, &str> = BTreeMap::new();
    for ((inst, _rnd, value), voters) in &accepted {
        if voters.len() < f + 1 {
            continue;
        }
        match chosen.get(inst) {
            None => {
                chosen.insert(*inst, value);
            }
            Some(prior) if prior != value => {
                return Err(Counterexample::new(
                    Vec::new(),
                    format!("instance {inst} has two distinct quorum-accepted values"),
                ));
            }
            Some(_) => {}
        }
    }
    for record in records {
        if let TraceRecord::Decision {
            id, inst, value, ..
        } = record
        {
            if let Some(chosen_value) = chosen.get(inst) {
                if chosen_value != value {
                    return Err(Counterexample::new(
                        vec![*id],
                        format!(
                            "decision at instance {inst} differs from the quorum-accepted value"
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Every delivery and network drop must reference an earlier send record:
/// no spontaneous packets.
pub fn check_closed_world(records: &[TraceRecord]) -> Result<(), Counterexample> {
    let sends: BTreeSet<EventId> = records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Send { id, .. } => Some(*id),
            _ => None,
        })
        .collect();
    for record in records {
        let (id, send_id) = match record {
            TraceRecord::Deliver { id, send_id, .. } => (*id, *send_id),
            TraceRecord::NetDrop { id, send_id, .. } => (*id, *send_id),
            _ => continue,
        };
        if send_id >= id || !sends.contains(&send_id) {
            return Err(Counterexample::new(
                vec![id],
                "packet does not trace back to a send".to_string(),
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub submitted: u64,
    pub decided_instances: u64,
    pub executed: u64,
    pub failed_requests: u64,
    pub records: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub pass: bool,
    pub properties: Vec<PropertyResult>,
    pub stats: RunStats,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary_lines(&self) -> String {
        let mut out = String::new();
        for p in &self.properties {
            let verdict = if p.pass { "pass" } else { "FAIL" };
            let _ = writeln!(out, "  {:<22} {}", p.name, verdict);
            if let Some(ce) = &p.counterexample {
                let _ = writeln!(out, "    events {:?}: {}", ce.event_ids, ce.detail);
            }
        }
        out
    }
}

/// Everything a scenario run produces.
pub struct RunOutcome {
    pub report: ScenarioReport,
    pub trace: Trace,
}

fn run_stats(records: &[TraceRecord], violation: Option<String>) -> RunStats {
    let mut stats = RunStats {
        records: records.len() as u64,
        violation,
        ..RunStats::default()
    };
    let mut decided: BTreeSet<u32> = BTreeSet::new();
    for record in records {
        match record {
            TraceRecord::Submit { .. } => stats.submitted += 1,
            TraceRecord::Decision { inst, .. } => {
                decided.insert(*inst);
            }
            TraceRecord::Execute { .. } => stats.executed += 1,
            TraceRecord::RequestFailed { .. } => stats.failed_requests += 1,
            _ => {}
        }
    }
    stats.decided_instances = decided.len() as u64;
    stats
}

/// Runs a scenario and evaluates every property checker, including a
/// determinism replay (a second run with the same seed must produce a
/// byte-identical trace).
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<RunOutcome, ScenarioError> {
    let seed = seed.unwrap_or(scenario.seed);
    let mut sim = scenario.build(seed)?;
    sim.run();
    let violation = sim.violation().map(str::to_string);
    let trace = sim.into_trace();
    let records = trace.records();

    let mut properties = vec![
        property("agreement", check_agreement(records)),
        property("validity", check_validity(records)),
        property("stability", check_stability(records)),
        property("log_monotonicity", check_log_monotonicity(records)),
        property(
            "quorum_minimality",
            check_quorum_minimality(records, scenario.f),
        ),
        property(
            "chosen_consistency",
            check_chosen_consistency(records, scenario.f),
        ),
        property("closed_world", check_closed_world(records)),
    ];

    let replay = match replay_check(scenario, seed) {
        Ok(()) => property("determinism", Ok(())),
        Err(diff) => property(
            "determinism",
            Err(Counterexample::new(
                Vec::new(),
                format!(
                    "replay diverged at line {}: {} != {}",
                    diff.line, diff.expected, diff.actual
                ),
            )),
        ),
    };
    properties.push(replay);

    let pass = properties.iter().all(|p| p.pass);
    let report = ScenarioReport {
        scenario: scenario.name.clone(),
        seed,
        pass,
        properties,
        stats: run_stats(records, violation),
    };
    Ok(RunOutcome { report, trace })
}

fn property(name: &'static str, result: Result<(), Counterexample>) -> PropertyResult {
    match result {
        Ok(()) => PropertyResult {
            name,
            pass: true,
            counterexample: None,
        },
        Err(ce) => PropertyResult {
            name,
            pass: false,
            counterexample: Some(ce),
        },
    }
}

/// First line where two JSONL traces differ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffLocation {
    pub line: usize,
    pub expected: String,
    pub actual: String,
}

pub fn compare_traces(a: &str, b: &str) -> Option<DiffLocation> {
    let mut lines_a = a.lines();
    let mut lines_b = b.lines();
    let mut line = 0;
    loop {
        line += 1;
        match (lines_a.next(), lines_b.next()) {
            (None, None) => return None,
            (la, lb) if la == lb => {}
            (la, lb) => {
                return Some(DiffLocation {
                    line,
                    expected: la.unwrap_or("<eof>").to_string(),
                    actual: lb.unwrap_or("<eof>").to_string(),
                })
            }
        }
    }
}

/// Runs the scenario twice with the same seed and compares the traces
/// byte for byte.
pub fn replay_check(scenario: &Scenario, seed: u64) -> Result<(), DiffLocation> {
    let run = |_: ()| -> String {
        let mut sim = scenario.build(seed).expect("scenario already validated");
        sim.run();
        sim.into_trace().to_jsonl()
    };
    let first = run(());
    let second = run(());
    match compare_traces(&first, &second) {
        None => Ok(()),
        Some(diff) => Err(diff),
    }
}
