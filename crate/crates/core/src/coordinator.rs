//! Coordinator: the sequencing switch program plus the Phase-1
//! pre-execution and failover driver that runs on the same node's control
//! plane.
//!
//! The pipeline side is a single table, `tbl_sequence`, matching Phase 2A.
//! Its `handle_2a` action copies the next-in-use instance number from
//! `reg_inst` into the header, increments it, and stores it back. The
//! sequencing window bounds are held in a second one-cell register,
//! `reg_window_hi`, written by the control plane; sequencing past it drops
//! the packet `OutOfRange` (window exhausted).
//!
//! Phase 1 is value-independent and is run in advance for a bounded range
//! of instances. The initial coordinator's round-0 promises are implicit:
//! acceptor round registers boot at zero and the acceptor round test is
//! `>=`, so the whole register window is promised without any 1A traffic.
//! A coordinator activated by failover earns its window explicitly: it
//! sweeps 1A messages over an instance range at a fresh round, tallies the
//! 1B responses, and per instance either leaves it open (no reported vote)
//! or immediately re-proposes the reported value with the highest vote
//! round. Incomplete instances are re-swept on a retry timer.
//!
//! Round numbers are made unique per coordinator by partitioning them:
//! round = k * [`MAX_COORDINATORS`] + rank.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::pipeline::{
    DropCounters, DropReason, ExecStep, GroupId, Metadata, PipelineOutcome, Register, Table,
};
use crate::wire::{MsgType, PaxosMessage, Value};
use crate::SimTime;

/// Size of the round-number partition; coordinator `rank` owns rounds
/// congruent to `rank` modulo this.
pub const MAX_COORDINATORS: u16 = 16;

/// Fraction (numerator/denominator) of the window at which the driver
/// pre-executes Phase 1 for the next chunk.
const REFRESH_NUM: u64 = 7;
const REFRESH_DEN: u64 = 8;

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    /// Rank in the round partition; the initial coordinator is rank 0.
    pub rank: u16,
    /// Phase-1 quorum size, f + 1.
    pub quorum: usize,
    pub instance_window: u32,
    /// Instances per Phase-1 sweep. Sweeps cover the whole window when this
    /// equals `instance_window`.
    pub phase1_chunk: u32,
    /// Egress group for 1A and 2A messages.
    pub acceptor_group: GroupId,
    /// Re-send 1As for incomplete sweep instances after this long.
    pub sweep_retry_timeout: SimTime,
    pub sweep_max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordinatorError {
    #[error("bad sweep range [{lo}, {hi}) with window {window}")]
    BadRange { lo: u32, hi: u32, window: u32 },
    #[error("sweep round {new_rnd} not greater than current round {crnd}")]
    RoundNotGreater { new_rnd: u16, crnd: u16 },
}

/// Pipeline-visible coordinator state.
struct CoordinatorCore {
    /// One logical cell: the next-in-use instance number.
    reg_inst: Register,
    /// One logical cell: first instance past the promised window, written
    /// by the control plane.
    reg_window_hi: Register,
    /// Current round stamped on sequenced 2As.
    crnd: u16,
}

fn handle_2a(
    core: &mut CoordinatorCore,
    msg: &mut PaxosMessage,
    _meta: &mut Metadata,
) -> Result<(), DropReason> {
    let inst = core.reg_inst.read(0)?;
    if inst >= core.reg_window_hi.read(0)? {
        // Window exhausted; the control plane reacts with a Phase-1 sweep.
        return Err(DropReason::OutOfRange);
    }
    msg.inst = inst as u32;
    msg.rnd = core.crnd;
    core.reg_inst.write(0, inst + 1)?;
    Ok(())
}

/// What one acceptor reported for one instance in Phase 1.
#[derive(Debug, Clone, Copy)]
struct Promise {
    voted: bool,
    vrnd: u16,
    value: Value,
}

#[derive(Debug, Default)]
struct Tally {
    promises: BTreeMap<u16, Promise>,
    complete: bool,
}

#[derive(Debug)]
struct Sweep {
    rnd: u16,
    /// Instances still lacking a quorum of 1Bs.
    pending: BTreeSet<u32>,
    retries: u32,
    next_retry: SimTime,
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct DriverStats {
    pub stale_1b: u64,
    pub duplicate_1b: u64,
    pub recoveries: u64,
    pub sweeps: u64,
}

/// Control-plane side: Phase-1 tallies and window accounting.
struct Phase1Driver {
    window_lo: u32,
    /// Instances in `[window_lo, contiguous_hi)` have completed Phase 1.
    contiguous_hi: u32,
    /// Completions beyond the contiguous prefix.
    completed: BTreeSet<u32>,
    tally: BTreeMap<u32, Tally>,
    sweep: Option<Sweep>,
    /// Round of the most recent sweep. 1Bs are tallied only against a round
    /// this coordinator actually swept; the implicit round-0 tenure never
    /// sweeps, so nothing tallies there.
    swept_rnd: Option<u16>,
    /// Highest round observed in any 1B, for failover round selection.
    max_rnd_seen: u16,
    stats: DriverStats,
}

/// Snapshot of the sequencing registers and driver state for traces.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoordinatorSnapshot {
    pub active: bool,
    pub crnd: u16,
    pub reg_inst: u32,
    pub window_lo: u32,
    pub window_hi: u32,
    pub stats: DriverStats,
}

/// One coordinator node: sequencing pipeline plus Phase-1 driver. The two
/// interleave on the simulator's event loop, never concurrently.
pub struct Coordinator {
    config: CoordinatorConfig,
    core: CoordinatorCore,
    tbl_sequence: Table<CoordinatorCore>,
    drops: DropCounters,
    driver: Phase1Driver,
    active: bool,
}

impl Coordinator {
    /// `active` selects the initial coordinator; standbys sequence nothing
    /// (their window is empty) until [`activate`](Self::activate).
    pub fn new(config: CoordinatorConfig, active: bool) -> Self {
        assert!(config.phase1_chunk >= 1, "phase1_chunk must be at least 1");
        let mut core = CoordinatorCore {
            reg_inst: Register::new("reg_inst", 33, 1),
            reg_window_hi: Register::new("reg_window_hi", 33, 1),
            // A standby has no tenure yet; activation picks its round.
            crnd: if active { config.rank } else { 0 },
        };
        let window_hi = if active { config.instance_window } else { 0 };
        core.reg_window_hi.write(0, u64::from(window_hi)).unwrap();
        Coordinator {
            core,
            tbl_sequence: Table::new("tbl_sequence").entry(
                MsgType::Phase2A,
                "handle_2a",
                handle_2a,
            ),
            drops: DropCounters::default(),
            driver: Phase1Driver {
                window_lo: 0,
                contiguous_hi: window_hi,
                completed: BTreeSet::new(),
                tally: BTreeMap::new(),
                sweep: None,
                swept_rnd: None,
                max_rnd_seen: 0,
                stats: DriverStats::default(),
            },
            active,
            config,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn acceptor_group(&self) -> GroupId {
        self.config.acceptor_group
    }

    /// Counts a parser rejection against this switch's drop counters.
    pub fn note_parse_error(&mut self) {
        self.drops.bump(DropReason::ParseError);
    }

    pub fn crnd(&self) -> u16 {
        self.core.crnd
    }

    pub fn next_inst(&self) -> u32 {
        self.core.reg_inst.read(0).unwrap() as u32
    }

    /// Pipeline entry point: `tbl_sequence` over one Paxos packet. Phase 2A
    /// packets are stamped with the next instance and forwarded to the
    /// acceptor group; anything else hits the default drop.
    pub fn sequence_2a(&mut self, msg: PaxosMessage) -> (PipelineOutcome, Vec<ExecStep>) {
        let mut msg = msg;
        let mut meta = Metadata::default();
        match self.tbl_sequence.apply(&mut self.core, &mut msg, &mut meta) {
            Ok(step) => (
                PipelineOutcome::Forward {
                    msg,
                    group: self.config.acceptor_group,
                },
                vec![step],
            ),
            Err(reason) => {
                self.drops.bump(reason);
                (PipelineOutcome::Drop(reason), Vec::new())
            }
        }
    }

    /// Pre-executes Phase 1 over `[lo, hi)` at `new_rnd`: emits one 1A per
    /// instance for multicast to the acceptor group, resets the tallies for
    /// the range, and adopts the new round.
    pub fn phase1_sweep(
        &mut self,
        lo: u32,
        hi: u32,
        new_rnd: u16,
        now: SimTime,
    ) -> Result<Vec<PaxosMessage>, CoordinatorError> {
        if lo >= hi || hi > self.config.instance_window {
            return Err(CoordinatorError::BadRange {
                lo,
                hi,
                window: self.config.instance_window,
            });
        }
        if new_rnd <= self.core.crnd {
            return Err(CoordinatorError::RoundNotGreater {
                new_rnd,
                crnd: self.core.crnd,
            });
        }
        self.core.crnd = new_rnd;
        self.driver.swept_rnd = Some(new_rnd);
        self.driver.stats.sweeps += 1;
        let range = lo..hi;
        self.driver.tally.retain(|inst, _| !range.contains(inst));
        self.driver.sweep = Some(Sweep {
            rnd: new_rnd,
            pending: range.clone().collect(),
            retries: 0,
            next_retry: now + self.config.sweep_retry_timeout,
        });
        // A sweep that jumps to a fresh region moves the window there;
        // sequencing may not run ahead of completed promises and may not
        // hand out instances below the new region.
        if self.driver.contiguous_hi < lo {
            self.driver.window_lo = lo;
            self.driver.contiguous_hi = lo;
            if self.next_inst() < lo {
                self.core.reg_inst.write(0, u64::from(lo)).unwrap();
            }
        }
        self.write_window_hi();
        Ok(range.map(|inst| make_1a(inst, new_rnd)).collect())
    }

    /// Failover entry point: picks the lowest owned round above everything
    /// observed and sweeps the first `phase1_chunk` instances. Idempotent
    /// for an already-active coordinator.
    pub fn activate(&mut self, now: SimTime) -> Vec<PaxosMessage> {
        if self.active {
            return Vec::new();
        }
        self.active = true;
        let Some(new_rnd) = self.next_owned_round(self.driver.max_rnd_seen) else {
            return Vec::new(); // round space exhausted; tenure cannot start
        };
        let hi = self.config.phase1_chunk.min(self.config.instance_window);
        self.phase1_sweep(0, hi, new_rnd, now)
            .expect("activation sweep is well-formed")
    }

    /// Lowest round owned by this rank strictly above `floor`, or `None`
    /// when the 16-bit round space is exhausted.
    fn next_owned_round(&self, floor: u16) -> Option<u16> {
        let rank = self.config.rank % MAX_COORDINATORS;
        let mut k = floor / MAX_COORDINATORS;
        loop {
            let candidate = k
                .checked_mul(MAX_COORDINATORS)
                .and_then(|b| b.checked_add(rank))?;
            if candidate > floor {
                return Some(candidate);
            }
            k = k.checked_add(1)?;
        }
    }

    /// Tallies one Phase 1B. Once f+1 distinct acceptors report for an
    /// instance the promise completes: a reported vote binds the instance
    /// to the highest-vote-round value and yields an immediate 2A re-
    /// proposal; otherwise the instance is open for new values.
    pub fn phase1_on_1b(&mut self, msg: &PaxosMessage) -> Vec<PaxosMessage> {
        debug_assert_eq!(msg.msgtype, MsgType::Phase1B);
        self.driver.max_rnd_seen = self.driver.max_rnd_seen.max(msg.rnd).max(msg.vrnd);
        if self.driver.swept_rnd != Some(msg.rnd) || msg.inst >= self.config.instance_window {
            self.driver.stats.stale_1b += 1;
            return Vec::new();
        }

        // Never-voted reports carry vrnd = 0 with an all-zero value; any
        // other combination is a vote.
        let voted = !(msg.vrnd == 0 && msg.value.is_zero());
        if voted {
            // The instance was in use; never hand it out for new values.
            let next = u64::from(msg.inst) + 1;
            if self.core.reg_inst.read(0).unwrap() < next {
                self.core.reg_inst.write(0, next).unwrap();
            }
        }

        let tally = self.driver.tally.entry(msg.inst).or_default();
        if tally.promises.contains_key(&msg.acpt) {
            self.driver.stats.duplicate_1b += 1;
            return Vec::new();
        }
        tally.promises.insert(
            msg.acpt,
            Promise {
                voted,
                vrnd: msg.vrnd,
                value: msg.value,
            },
        );
        if tally.complete || tally.promises.len() < self.config.quorum {
            return Vec::new();
        }
        tally.complete = true;

        let recovered = tally
            .promises
            .values()
            .filter(|p| p.voted)
            .max_by_key(|p| p.vrnd)
            .map(|p| p.value);

        self.mark_completed(msg.inst);

        match recovered {
            Some(value) => {
                self.driver.stats.recoveries += 1;
                vec![PaxosMessage {
                    msgtype: MsgType::Phase2A,
                    inst: msg.inst,
                    rnd: self.core.crnd,
                    vrnd: 0,
                    acpt: 0,
                    value,
                }]
            }
            None => Vec::new(),
        }
    }

    fn mark_completed(&mut self, inst: u32) {
        if let Some(sweep) = &mut self.driver.sweep {
            sweep.pending.remove(&inst);
        }
        if inst < self.driver.contiguous_hi {
            return;
        }
        self.driver.completed.insert(inst);
        while self.driver.completed.remove(&self.driver.contiguous_hi) {
            self.driver.contiguous_hi += 1;
        }
        self.write_window_hi();
    }

    fn write_window_hi(&mut self) {
        self.core
            .reg_window_hi
            .write(0, u64::from(self.driver.contiguous_hi))
            .unwrap();
    }

    /// Driver poll: window pre-refresh plus sweep retries. Called by the
    /// node wrapper after packet processing and on timer fires; returns 1As
    /// to multicast and when to wake next.
    pub fn poll(&mut self, now: SimTime) -> (Vec<PaxosMessage>, Option<SimTime>) {
        let mut out = Vec::new();
        if !self.active {
            return (out, None);
        }

        // Retry 1As for instances still missing a quorum.
        let mut sweep_gave_up = false;
        let mut clear_sweep = false;
        if let Some(sweep) = &mut self.driver.sweep {
            if sweep.pending.is_empty() {
                clear_sweep = true;
            } else if now >= sweep.next_retry {
                if sweep.retries < self.config.sweep_max_retries {
                    sweep.retries += 1;
                    sweep.next_retry = now + self.config.sweep_retry_timeout;
                    let rnd = sweep.rnd;
                    out.extend(sweep.pending.iter().map(|&inst| make_1a(inst, rnd)));
                } else {
                    // Give up; liveness for these instances needs a later
                    // explicit sweep, not an automatic refresh loop.
                    clear_sweep = true;
                    sweep_gave_up = true;
                }
            }
        }
        if clear_sweep {
            self.driver.sweep = None;
        }

        // Pre-execute the next chunk when sequencing approaches the window
        // end (7/8 by default).
        if !sweep_gave_up
            && self.driver.sweep.is_none()
            && self.driver.contiguous_hi < self.config.instance_window
        {
            let hi = u64::from(self.driver.contiguous_hi);
            let used = self.core.reg_inst.read(0).unwrap();
            if used * REFRESH_DEN >= hi * REFRESH_NUM {
                let lo = self.driver.contiguous_hi;
                let next_hi = lo
                    .saturating_add(self.config.phase1_chunk)
                    .min(self.config.instance_window);
                let floor = self.core.crnd.max(self.driver.max_rnd_seen);
                if let Some(new_rnd) = self.next_owned_round(floor) {
                    if let Ok(msgs) = self.phase1_sweep(lo, next_hi, new_rnd, now) {
                        out.extend(msgs);
                    }
                }
            }
        }

        let next_wake = self.driver.sweep.as_ref().map(|s| s.next_retry);
        (out, next_wake)
    }

    pub fn drop_counters(&self) -> DropCounters {
        self.drops
    }

    pub fn table_counters(&self) -> Vec<(String, BTreeMap<String, u64>)> {
        vec![("tbl_sequence".to_string(), self.tbl_sequence.counters())]
    }

    pub fn snapshot(&self) -> CoordinatorSnapshot {
        CoordinatorSnapshot {
            active: self.active,
            crnd: self.core.crnd,
            reg_inst: self.next_inst(),
            window_lo: self.driver.window_lo,
            window_hi: self.driver.contiguous_hi,
            stats: self.driver.stats,
        }
    }
}

fn make_1a(inst: u32, rnd: u16) -> PaxosMessage {
    PaxosMessage {
        msgtype: MsgType::Phase1A,
        inst,
        rnd,
        vrnd: 0,
        acpt: 0,
        value: Value::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACCEPTORS: GroupId = GroupId(2);

    fn config(rank: u16) -> CoordinatorConfig {
        CoordinatorConfig {
            rank,
            quorum: 2,
            instance_window: 64,
            phase1_chunk: 64,
            acceptor_group: ACCEPTORS,
            sweep_retry_timeout: 100_000,
            sweep_max_retries: 3,
        }
    }

    fn submit_2a(value: &[u8]) -> PaxosMessage {
        PaxosMessage {
            msgtype: MsgType::Phase2A,
            inst: 0,
            rnd: 0,
            vrnd: 0,
            acpt: 0,
            value: Value::from_payload(value).unwrap(),
        }
    }

    fn one_b(inst: u32, rnd: u16, vrnd: u16, acpt: u16, value: Value) -> PaxosMessage {
        PaxosMessage {
            msgtype: MsgType::Phase1B,
            inst,
            rnd,
            vrnd,
            acpt,
            value,
        }
    }

    #[test]
    fn first_submit_gets_instance_zero() {
        let mut c = Coordinator::new(config(0), true);
        let (out, exec) = c.sequence_2a(submit_2a(b"v"));
        match out {
            PipelineOutcome::Forward { msg, group } => {
                assert_eq!(msg.inst, 0);
                assert_eq!(msg.rnd, 0);
                assert_eq!(msg.msgtype, MsgType::Phase2A);
                assert_eq!(group, ACCEPTORS);
            }
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(c.next_inst(), 1);
        assert_eq!(
            exec,
            vec![ExecStep {
                table: "tbl_sequence",
                action: "handle_2a"
            }]
        );
    }

    #[test]
    fn consecutive_submits_sequence_contiguously() {
        // Oracle: a plain scalar counter.
        let mut c = Coordinator::new(config(0), true);
        let mut counter = 0u32;
        for _ in 0..3 {
            let (out, _) = c.sequence_2a(submit_2a(b"v"));
            match out {
                PipelineOutcome::Forward { msg, .. } => {
                    assert_eq!(msg.inst, counter);
                    counter += 1;
                }
                other => panic!("expected forward, got {other:?}"),
            }
        }
        assert_eq!(c.next_inst(), 3);
    }

    #[test]
    fn exhausted_window_drops_out_of_range() {
        let mut cfg = config(0);
        cfg.instance_window = 2;
        cfg.phase1_chunk = 2;
        let mut c = Coordinator::new(cfg, true);
        assert!(c.sequence_2a(submit_2a(b"a")).0.is_forward());
        assert!(c.sequence_2a(submit_2a(b"b")).0.is_forward());
        let (out, _) = c.sequence_2a(submit_2a(b"c"));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::OutOfRange));
        assert_eq!(c.drop_counters().out_of_range, 1);
        assert_eq!(c.next_inst(), 2);
    }

    #[test]
    fn non_2a_messages_default_drop_at_sequencing_table() {
        let mut c = Coordinator::new(config(0), true);
        let (out, _) = c.sequence_2a(one_b(0, 0, 0, 0, Value::ZERO));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::NoMatch));
    }

    #[test]
    fn sweep_emits_one_1a_per_instance() {
        let mut c = Coordinator::new(config(1), false);
        let msgs = c.phase1_sweep(0, 4, 1, 0).unwrap();
        assert_eq!(msgs.len(), 4);
        for (i, m) in msgs.iter().enumerate() {
            assert_eq!(m.msgtype, MsgType::Phase1A);
            assert_eq!(m.inst, i as u32);
            assert_eq!(m.rnd, 1);
        }
        assert_eq!(c.crnd(), 1);
    }

    #[test]
    fn sweep_rejects_non_increasing_round_and_bad_range() {
        let mut c = Coordinator::new(config(1), false);
        c.phase1_sweep(0, 4, 1, 0).unwrap();
        assert_eq!(
            c.phase1_sweep(0, 4, 1, 0),
            Err(CoordinatorError::RoundNotGreater {
                new_rnd: 1,
                crnd: 1
            })
        );
        assert_eq!(
            c.phase1_sweep(4, 4, 9, 0),
            Err(CoordinatorError::BadRange {
                lo: 4,
                hi: 4,
                window: 64
            })
        );
        assert_eq!(
            c.phase1_sweep(0, 65, 9, 0),
            Err(CoordinatorError::BadRange {
                lo: 0,
                hi: 65,
                window: 64
            })
        );
    }

    #[test]
    fn quorum_of_clean_promises_opens_instance() {
        let mut c = Coordinator::new(config(1), false);
        c.phase1_sweep(0, 4, 1, 0).unwrap();
        assert!(c.phase1_on_1b(&one_b(0, 1, 0, 0, Value::ZERO)).is_empty());
        assert!(c.phase1_on_1b(&one_b(0, 1, 0, 1, Value::ZERO)).is_empty());
        // Instance 0 complete and open: window covers it.
        assert_eq!(c.snapshot().window_hi, 1);
        assert_eq!(c.snapshot().stats.recoveries, 0);
    }

    #[test]
    fn recovery_binds_highest_vrnd_value() {
        let mut c = Coordinator::new(config(1), false);
        c.phase1_sweep(0, 4, 5, 0).unwrap();
        let va = Value::from_payload(b"vA").unwrap();
        let vb = Value::from_payload(b"vB").unwrap();
        assert!(c.phase1_on_1b(&one_b(2, 5, 1, 0, va)).is_empty());
        let out = c.phase1_on_1b(&one_b(2, 5, 2, 1, vb));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].msgtype, MsgType::Phase2A);
        assert_eq!(out[0].inst, 2);
        assert_eq!(out[0].rnd, 5);
        assert_eq!(out[0].value, vb);
        // Observed votes at instance 2 push sequencing past it.
        assert_eq!(c.next_inst(), 3);
    }

    #[test]
    fn round_zero_vote_is_recovered() {
        // A vote cast in round 0 arrives as vrnd = 0 with a non-zero value
        // and must not be mistaken for "never voted".
        let mut c = Coordinator::new(config(1), false);
        c.phase1_sweep(0, 4, 1, 0).unwrap();
        let v = Value::from_payload(b"zero-round").unwrap();
        assert!(c.phase1_on_1b(&one_b(0, 1, 0, 0, v)).is_empty());
        let out = c.phase1_on_1b(&one_b(0, 1, 0, 1, Value::ZERO));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, v);
    }

    #[test]
    fn duplicate_1b_does_not_complete_quorum() {
        let mut c = Coordinator::new(config(1), false);
        c.phase1_sweep(0, 4, 1, 0).unwrap();
        assert!(c.phase1_on_1b(&one_b(0, 1, 0, 0, Value::ZERO)).is_empty());
        assert!(c.phase1_on_1b(&one_b(0, 1, 0, 0, Value::ZERO)).is_empty());
        assert_eq!(c.snapshot().window_hi, 0);
        assert_eq!(c.snapshot().stats.duplicate_1b, 1);
    }

    #[test]
    fn stale_round_1b_is_ignored() {
        let mut c = Coordinator::new(config(1), false);
        c.phase1_sweep(0, 4, 5, 0).unwrap();
        assert!(c.phase1_on_1b(&one_b(0, 4, 0, 0, Value::ZERO)).is_empty());
        assert_eq!(c.snapshot().stats.stale_1b, 1);
    }

    #[test]
    fn standby_sequences_nothing_until_activated() {
        let mut c = Coordinator::new(config(1), false);
        let (out, _) = c.sequence_2a(submit_2a(b"v"));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::OutOfRange));

        let msgs = c.activate(0);
        assert_eq!(msgs.len(), 64);
        assert!(c.is_active());
        assert_eq!(c.crnd(), 1); // rank 1, nothing observed

        // Already active: no-op.
        assert!(c.activate(0).is_empty());
    }

    #[test]
    fn activation_round_clears_observed_rounds() {
        let mut c = Coordinator::new(config(1), false);
        c.phase1_on_1b(&one_b(0, 33, 0, 0, Value::ZERO)); // observed high round
        c.activate(0);
        assert_eq!(c.crnd(), 49); // 3 * 16 + 1
    }

    #[test]
    fn rank_zero_standby_skips_to_next_partition() {
        let mut c = Coordinator::new(config(0), false);
        c.activate(0);
        assert_eq!(c.crnd(), 16); // 1 * 16 + 0, strictly above round 0
    }

    #[test]
    fn sweep_retry_reemits_pending_instances() {
        let mut c = Coordinator::new(config(1), false);
        c.activate(0);
        // Complete instance 0 only.
        c.phase1_on_1b(&one_b(0, 1, 0, 0, Value::ZERO));
        c.phase1_on_1b(&one_b(0, 1, 0, 1, Value::ZERO));
        let (msgs, next) = c.poll(100_000);
        assert_eq!(msgs.len(), 63); // everything but instance 0
        assert!(msgs.iter().all(|m| m.inst != 0));
        assert_eq!(next, Some(200_000));
    }

    #[test]
    fn window_refresh_sweeps_next_chunk() {
        let mut cfg = config(1);
        cfg.instance_window = 16;
        cfg.phase1_chunk = 8;
        let mut c = Coordinator::new(cfg, false);
        c.activate(0);
        assert_eq!(c.crnd(), 1);
        for inst in 0..8 {
            c.phase1_on_1b(&one_b(inst, 1, 0, 0, Value::ZERO));
            c.phase1_on_1b(&one_b(inst, 1, 0, 1, Value::ZERO));
        }
        assert_eq!(c.snapshot().window_hi, 8);
        // Use 7 of 8 instances: hits the 7/8 refresh threshold.
        for _ in 0..7 {
            assert!(c.sequence_2a(submit_2a(b"v")).0.is_forward());
        }
        let (msgs, _) = c.poll(0);
        assert_eq!(msgs.len(), 8);
        assert!(msgs.iter().all(|m| m.inst >= 8 && m.rnd == 17)); // next owned round
        assert_eq!(c.crnd(), 17);
    }
}
