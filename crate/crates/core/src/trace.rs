//! Trace log: one JSON-lines record per simulator event.
//!
//! Records carry their own `id` (position in the trace); property checkers
//! cite these ids in counterexamples, and `Deliver`/`NetDrop` records point
//! back at the originating `Send` via `send_id`, which keeps the trace
//! closed under "every packet was emitted by some node operation".
//!
//! Serialization is deterministic: struct fields in declaration order,
//! `BTreeMap`s for anything keyed. Two runs with identical inputs and seed
//! produce byte-identical JSONL.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::coordinator::CoordinatorSnapshot;
use crate::hosts::ProposerStats;
use crate::pipeline::{DropCounters, ExecStep};
use crate::wire::PaxosMessage;

pub type EventId = u64;

/// Decoded header fields of the packet a record concerns.
#[derive(Debug, Clone, Serialize)]
pub struct HeaderFields {
    pub msgtype: &'static str,
    pub inst: u32,
    pub rnd: u16,
    pub vrnd: u16,
    pub acpt: u16,
    pub value: String,
}

impl From<&PaxosMessage> for HeaderFields {
    fn from(msg: &PaxosMessage) -> Self {
        HeaderFields {
            msgtype: msg.msgtype.as_str(),
            inst: msg.inst,
            rnd: msg.rnd,
            vrnd: msg.vrnd,
            acpt: msg.acpt,
            value: msg.value.to_hex(),
        }
    }
}

/// Per-learner summary in the end-of-run stats record.
#[derive(Debug, Clone, Serialize)]
pub struct LearnerSummary {
    pub decided: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    /// A proposer accepted an application submit.
    Submit {
        id: EventId,
        time: u64,
        node: String,
        request: u64,
        value: String,
    },
    /// A node handed a payload to the network for a multicast group.
    Send {
        id: EventId,
        time: u64,
        node: String,
        group: u16,
        port: u16,
        #[serde(skip_serializing_if = "Option::is_none")]
        paxos: Option<HeaderFields>,
    },
    /// The network dropped one copy in transit.
    NetDrop {
        id: EventId,
        time: u64,
        send_id: EventId,
        src: String,
        dst: String,
    },
    /// One copy reached a node and was processed.
    Deliver {
        id: EventId,
        time: u64,
        send_id: EventId,
        src: String,
        dst: String,
        port: u16,
        /// forward | drop | consume | bypass | node_down
        outcome: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<&'static str>,
        /// Egress group on a forward.
        #[serde(skip_serializing_if = "Option::is_none")]
        group: Option<u16>,
        /// Tables applied and actions fired, in order.
        actions: Vec<ExecStep>,
        #[serde(skip_serializing_if = "Option::is_none")]
        paxos: Option<HeaderFields>,
    },
    /// A learner decided a value for an instance.
    Decision {
        id: EventId,
        time: u64,
        node: String,
        inst: u32,
        rnd: u16,
        value: String,
    },
    /// A learner executed (delivered in order) a decided instance.
    Execute {
        id: EventId,
        time: u64,
        node: String,
        inst: u32,
        value: String,
    },
    /// A proposer request exhausted its retry budget.
    RequestFailed {
        id: EventId,
        time: u64,
        node: String,
        request: u64,
    },
    /// A scheduled fault command took effect.
    Fault {
        id: EventId,
        time: u64,
        command: String,
    },
    /// A safety violation was detected; the run aborts here.
    Violation {
        id: EventId,
        time: u64,
        node: String,
        detail: String,
    },
    /// End-of-run snapshot per node: drop counters, table hit counters,
    /// coordinator registers, host stats.
    NodeStats {
        id: EventId,
        time: u64,
        node: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        drops: Option<DropCounters>,
        #[serde(skip_serializing_if = "Option::is_none")]
        tables: Option<BTreeMap<String, BTreeMap<String, u64>>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        coordinator: Option<CoordinatorSnapshot>,
        #[serde(skip_serializing_if = "Option::is_none")]
        proposer: Option<ProposerStats>,
        #[serde(skip_serializing_if = "Option::is_none")]
        learner: Option<LearnerSummary>,
    },
}

impl TraceRecord {
    pub fn id(&self) -> EventId {
        match self {
            TraceRecord::Submit { id, .. }
            | TraceRecord::Send { id, .. }
            | TraceRecord::NetDrop { id, .. }
            | TraceRecord::Deliver { id, .. }
            | TraceRecord::Decision { id, .. }
            | TraceRecord::Execute { id, .. }
            | TraceRecord::RequestFailed { id, .. }
            | TraceRecord::Fault { id, .. }
            | TraceRecord::Violation { id, .. }
            | TraceRecord::NodeStats { id, .. } => *id,
        }
    }
}

/// Ordered, append-only record list for one run.
#[derive(Debug, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    /// Appends a record built from the id it will get.
    pub fn push(&mut self, make: impl FnOnce(EventId) -> TraceRecord) -> EventId {
        let id = self.records.len() as EventId;
        self.records.push(make(id));
        id
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_assigns_sequential_ids() {
        let mut trace = Trace::new();
        let a = trace.push(|id| TraceRecord::Fault {
            id,
            time: 0,
            command: "crash acceptor0".into(),
        });
        let b = trace.push(|id| TraceRecord::Fault {
            id,
            time: 1,
            command: "restart acceptor0".into(),
        });
        assert_eq!((a, b), (0, 1));
        assert_eq!(trace.records()[1].id(), 1);
    }

    #[test]
    fn jsonl_is_one_record_per_line() {
        let mut trace = Trace::new();
        trace.push(|id| TraceRecord::Fault {
            id,
            time: 0,
            command: "set_link".into(),
        });
        trace.push(|id| TraceRecord::Execute {
            id,
            time: 5,
            node: "learner0".into(),
            inst: 0,
            value: "00".into(),
        });
        let jsonl = trace.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"kind\":\"fault\""));
        assert!(lines[1].contains("\"kind\":\"execute\""));
    }
}
