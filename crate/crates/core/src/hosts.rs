//! Host-side proposer and learner libraries.
//!
//! The proposer exposes a single `submit` entry point: it wraps the
//! application payload into a Phase 2A message for the coordinator group
//! and retransmits on a timer until a learner response or retry
//! exhaustion.
//!
//! The learner keeps a two-dimensional vote store — instance by acceptor
//! id — of Phase 2B messages. A value is decided for an instance the first
//! time f + 1 distinct acceptors report an identical (round, value) pair.
//! Decided values are executed (appended to the delivered log) strictly in
//! instance order through a hold-back queue, and each executed instance is
//! answered to the proposer group.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::pipeline::GroupId;
use crate::wire::{MsgType, PaxosMessage, Value, WireError, VALUE_SIZE};
use crate::SimTime;

/// Default retransmission timeout (50 simulated milliseconds).
pub const DEFAULT_RETRANSMIT_TIMEOUT: SimTime = 50_000;

/// Default retry budget before a request fails locally.
pub const DEFAULT_MAX_RETRIES: u32 = 10;

/// Proposer-local request handle.
pub type RequestId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("payload of {len} bytes exceeds the value capacity")]
    ValueTooLarge { len: usize },
    #[error("learner response truncated: {len} bytes")]
    ResponseTooShort { len: usize },
}

#[derive(Debug, Clone)]
struct PendingRequest {
    value: Value,
    last_sent: SimTime,
    retries: u32,
}

/// Counters surfaced in reports.
#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct ProposerStats {
    pub submitted: u64,
    pub retransmitted: u64,
    pub decided: u64,
    pub failed: u64,
}

/// Value-submission side of a host.
pub struct Proposer {
    client_id: u16,
    coordinator_group: GroupId,
    retransmit_timeout: SimTime,
    max_retries: u32,
    next_request: RequestId,
    pending: BTreeMap<RequestId, PendingRequest>,
    stats: ProposerStats,
}

/// Result of a proposer timer fire.
#[derive(Debug, Default)]
pub struct TimerOutput {
    /// Fresh 2As to re-send to the coordinator group.
    pub retransmits: Vec<PaxosMessage>,
    /// Requests that exhausted their retry budget and failed locally.
    pub failed: Vec<RequestId>,
    /// When the proposer next needs a timer fire, if anything is pending.
    pub next_wake: Option<SimTime>,
}

impl Proposer {
    pub fn new(
        client_id: u16,
        coordinator_group: GroupId,
        retransmit_timeout: SimTime,
        max_retries: u32,
    ) -> Self {
        Proposer {
            client_id,
            coordinator_group,
            retransmit_timeout,
            max_retries,
            next_request: 0,
            pending: BTreeMap::new(),
            stats: ProposerStats::default(),
        }
    }

    pub fn client_id(&self) -> u16 {
        self.client_id
    }

    pub fn coordinator_group(&self) -> GroupId {
        self.coordinator_group
    }

    /// Wraps `payload` into a 2A for the coordinator group. Instance and
    /// round are left at 0; the coordinator stamps both.
    pub fn submit(
        &mut self,
        payload: &[u8],
        now: SimTime,
    ) -> Result<(RequestId, PaxosMessage), HostError> {
        let value = Value::from_payload(payload)
            .map_err(|_| HostError::ValueTooLarge { len: payload.len() })?;
        let id = self.next_request;
        self.next_request += 1;
        self.pending.insert(
            id,
            PendingRequest {
                value,
                last_sent: now,
                retries: 0,
            },
        );
        self.stats.submitted += 1;
        Ok((id, make_2a(value)))
    }

    /// Re-sends requests older than the retransmission timeout; requests
    /// past the retry budget fail locally and are dropped from `pending`.
    pub fn on_timer(&mut self, now: SimTime) -> TimerOutput {
        let mut out = TimerOutput::default();
        let mut expired = Vec::new();
        for (&id, req) in &mut self.pending {
            if now.saturating_sub(req.last_sent) < self.retransmit_timeout {
                continue;
            }
            if req.retries >= self.max_retries {
                expired.push(id);
            } else {
                req.retries += 1;
                req.last_sent = now;
                out.retransmits.push(make_2a(req.value));
            }
        }
        for id in expired {
            self.pending.remove(&id);
            self.stats.failed += 1;
            out.failed.push(id);
        }
        self.stats.retransmitted += out.retransmits.len() as u64;
        out.next_wake = self.next_wake(now);
        out
    }

    fn next_wake(&self, _now: SimTime) -> Option<SimTime> {
        self.pending
            .values()
            .map(|req| req.last_sent + self.retransmit_timeout)
            .min()
    }

    /// Handles a learner response; requests are matched by value bytes.
    /// Returns the completed request id, if any was still pending.
    pub fn on_response(&mut self, _inst: u32, value: &Value) -> Option<RequestId> {
        let id = self
            .pending
            .iter()
            .find(|(_, req)| req.value == *value)
            .map(|(&id, _)| id)?;
        self.pending.remove(&id);
        self.stats.decided += 1;
        Some(id)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn stats(&self) -> ProposerStats {
        self.stats
    }
}

fn make_2a(value: Value) -> PaxosMessage {
    PaxosMessage {
        msgtype: MsgType::Phase2A,
        inst: 0,
        rnd: 0,
        vrnd: 0,
        acpt: 0,
        value,
    }
}

/// Raised when a quorum would decide a value contradicting an existing
/// decision: a safety-violation bug, the scenario must abort.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("conflicting decision at instance {inst}: had {have}, got {got}")]
pub struct ConflictDetected {
    pub inst: u32,
    pub have: String,
    pub got: String,
}

/// Learner: per-instance, per-acceptor store of 2B messages plus the
/// decided values and the in-order delivered log.
pub struct Learner {
    quorum: usize,
    proposer_group: GroupId,
    /// (instance, acceptor id) -> latest (rnd, value), higher rounds win.
    votes: BTreeMap<u32, BTreeMap<u16, (u16, Value)>>,
    decided: BTreeMap<u32, Value>,
    next_to_deliver: u32,
    delivered: Vec<(u32, Value)>,
}

impl Learner {
    /// `f` is the number of tolerated acceptor failures; a majority (the
    /// decision quorum) is f + 1.
    pub fn new(f: usize, proposer_group: GroupId) -> Self {
        Learner {
            quorum: f + 1,
            proposer_group,
            votes: BTreeMap::new(),
            decided: BTreeMap::new(),
            next_to_deliver: 0,
            delivered: Vec::new(),
        }
    }

    pub fn proposer_group(&self) -> GroupId {
        self.proposer_group
    }

    /// Stores one 2B in the vote matrix and reports a decision the first
    /// time f + 1 distinct acceptors agree on an identical (rnd, value)
    /// pair for the instance. Re-decisions of the same value (e.g. after a
    /// higher-round re-proposal) return nothing new.
    pub fn on_2b(&mut self, msg: &PaxosMessage) -> Result<Option<(u32, Value)>, ConflictDetected> {
        debug_assert_eq!(msg.msgtype, MsgType::Phase2B);
        let row = self.votes.entry(msg.inst).or_default();
        match row.get(&msg.acpt) {
            Some(&(stored_rnd, _)) if msg.rnd < stored_rnd => return Ok(None),
            _ => {
                row.insert(msg.acpt, (msg.rnd, msg.value));
            }
        }

        let identical = row
            .values()
            .filter(|(rnd, value)| *rnd == msg.rnd && *value == msg.value)
            .count();
        if identical < self.quorum {
            return Ok(None);
        }

        match self.decided.get(&msg.inst) {
            Some(prior) if *prior == msg.value => Ok(None),
            Some(prior) => Err(ConflictDetected {
                inst: msg.inst,
                have: prior.to_hex(),
                got: msg.value.to_hex(),
            }),
            None => {
                self.decided.insert(msg.inst, msg.value);
                Ok(Some((msg.inst, msg.value)))
            }
        }
    }

    /// Advances the hold-back queue: executes (appends to the delivered
    /// log) every decided instance that is next in order. Each returned
    /// entry is also answered to the proposer group by the caller.
    pub fn drain_deliverable(&mut self) -> Vec<(u32, Value)> {
        let mut out = Vec::new();
        while let Some(&value) = self.decided.get(&self.next_to_deliver) {
            out.push((self.next_to_deliver, value));
            self.delivered.push((self.next_to_deliver, value));
            self.next_to_deliver += 1;
        }
        out
    }

    pub fn decided(&self) -> &BTreeMap<u32, Value> {
        &self.decided
    }

    pub fn delivered_log(&self) -> &[(u32, Value)] {
        &self.delivered
    }
}

/// Learner response payload: `[inst: u32 BE][value: VALUE_SIZE]`, carried
/// on [`crate::wire::LEARNER_PORT`].
pub fn encode_response(inst: u32, value: &Value) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4 + VALUE_SIZE);
    buf.extend_from_slice(&inst.to_be_bytes());
    buf.extend_from_slice(value.as_bytes());
    buf
}

pub fn decode_response(buf: &[u8]) -> Result<(u32, Value), WireError> {
    if buf.len() < 4 + VALUE_SIZE {
        return Err(WireError::BufferTooShort { len: buf.len() });
    }
    let inst = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let mut value = [0u8; VALUE_SIZE];
    value.copy_from_slice(&buf[4..4 + VALUE_SIZE]);
    Ok((inst, Value::from_bytes(value)))
}
