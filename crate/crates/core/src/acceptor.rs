//! Acceptor switch program: promise bookkeeping, stale-round filtering, and
//! vote casting over instance-indexed registers.
//!
//! Three registers, indexed by consensus instance, hold the history of
//! promised rounds (`rnds`), vote rounds (`vrnds`), and voted values
//! (`values`). A packet first passes `tbl_rnd`, whose `read_rnd` action
//! copies the promised round for the packet's instance into metadata; the
//! control logic then compares it to the packet's round and either passes
//! the packet to `tbl_acceptor` (which runs `handle_1a` or `handle_2a`) or
//! drops it as stale.
//!
//! The round test is `msg.rnd >= promised`: a coordinator's 2A in round r
//! must be acceptable after its own 1A promise in round r, or Phase 2 could
//! never succeed.
//!
//! Round 0 is a valid first round, so "never voted" cannot be encoded as
//! `vrnd == 0` alone; a voted flag is packed into the top bit of each
//! 17-bit `vrnds` cell. On the wire a never-voted 1B still carries
//! `vrnd = 0` with an all-zero value.

use crate::pipeline::{
    DropCounters, DropReason, ExecStep, GroupId, Metadata, PipelineOutcome, Register, Table,
    ValueRegister,
};
use crate::wire::{MsgType, PaxosMessage, Value};

/// Voted flag packed above the 16 round bits of a `vrnds` cell.
const VOTED_FLAG: u64 = 1 << 16;

fn pack_vote(rnd: u16) -> u64 {
    VOTED_FLAG | u64::from(rnd)
}

fn unpack_vote(cell: u64) -> (bool, u16) {
    (cell & VOTED_FLAG != 0, (cell & 0xffff) as u16)
}

#[derive(Debug, Clone)]
pub struct AcceptorConfig {
    pub acceptor_id: u16,
    /// Register length; instances at or beyond it drop `OutOfRange`.
    pub instance_window: u32,
    /// Egress group for 1B messages.
    pub coordinator_group: GroupId,
    /// Egress group for 2B messages.
    pub learner_group: GroupId,
}

/// Register state visible to the acceptor's actions.
struct AcceptorCore {
    acceptor_id: u16,
    rnds: Register,
    vrnds: Register,
    values: ValueRegister,
}

fn read_rnd(
    core: &mut AcceptorCore,
    msg: &mut PaxosMessage,
    meta: &mut Metadata,
) -> Result<(), DropReason> {
    meta.promised_rnd = core.rnds.read(u64::from(msg.inst))? as u16;
    Ok(())
}

fn handle_1a(
    core: &mut AcceptorCore,
    msg: &mut PaxosMessage,
    _meta: &mut Metadata,
) -> Result<(), DropReason> {
    let inst = u64::from(msg.inst);
    core.rnds.write(inst, u64::from(msg.rnd))?;
    let (_voted, vrnd) = unpack_vote(core.vrnds.read(inst)?);
    msg.msgtype = MsgType::Phase1B;
    msg.vrnd = vrnd;
    msg.value = core.values.read(inst)?;
    msg.acpt = core.acceptor_id;
    Ok(())
}

fn handle_2a(
    core: &mut AcceptorCore,
    msg: &mut PaxosMessage,
    _meta: &mut Metadata,
) -> Result<(), DropReason> {
    let inst = u64::from(msg.inst);
    core.rnds.write(inst, u64::from(msg.rnd))?;
    core.vrnds.write(inst, pack_vote(msg.rnd))?;
    core.values.write(inst, msg.value)?;
    msg.msgtype = MsgType::Phase2B;
    msg.vrnd = msg.rnd;
    msg.acpt = core.acceptor_id;
    Ok(())
}

/// One acceptor switch instance. Single-threaded: packets are processed to
/// completion one at a time.
pub struct Acceptor {
    config: AcceptorConfig,
    core: AcceptorCore,
    tbl_rnd: Table<AcceptorCore>,
    tbl_acceptor: Table<AcceptorCore>,
    drops: DropCounters,
}

impl Acceptor {
    pub fn new(config: AcceptorConfig) -> Self {
        let window = config.instance_window as usize;
        let core = AcceptorCore {
            acceptor_id: config.acceptor_id,
            rnds: Register::new("rnds", 16, window),
            vrnds: Register::new("vrnds", 17, window),
            values: ValueRegister::new("values", window),
        };
        let tbl_rnd = Table::new("tbl_rnd")
            .entry(MsgType::Phase1A, "read_rnd", read_rnd)
            .entry(MsgType::Phase2A, "read_rnd", read_rnd);
        let tbl_acceptor = Table::new("tbl_acceptor")
            .entry(MsgType::Phase1A, "handle_1a", handle_1a)
            .entry(MsgType::Phase2A, "handle_2a", handle_2a);
        Acceptor {
            config,
            core,
            tbl_rnd,
            tbl_acceptor,
            drops: DropCounters::default(),
        }
    }

    pub fn acceptor_id(&self) -> u16 {
        self.config.acceptor_id
    }

    /// Runs one packet through the pipeline with fresh metadata.
    pub fn process(&mut self, msg: PaxosMessage) -> (PipelineOutcome, Vec<ExecStep>) {
        let mut meta = Metadata::default();
        self.process_with_meta(msg, &mut meta)
    }

    /// Same as [`process`](Self::process) but over caller-owned metadata,
    /// which is reset first. Processing N packets through one reset
    /// metadata object equals processing them with fresh objects.
    pub fn process_with_meta(
        &mut self,
        msg: PaxosMessage,
        meta: &mut Metadata,
    ) -> (PipelineOutcome, Vec<ExecStep>) {
        meta.reset();
        let mut msg = msg;
        let mut exec = Vec::with_capacity(2);

        match self.tbl_rnd.apply(&mut self.core, &mut msg, meta) {
            Ok(step) => exec.push(step),
            Err(reason) => {
                self.drops.bump(reason);
                return (PipelineOutcome::Drop(reason), exec);
            }
        }

        if msg.rnd < meta.promised_rnd {
            self.drops.bump(DropReason::StaleRound);
            return (PipelineOutcome::Drop(DropReason::StaleRound), exec);
        }

        match self.tbl_acceptor.apply(&mut self.core, &mut msg, meta) {
            Ok(step) => exec.push(step),
            Err(reason) => {
                self.drops.bump(reason);
                return (PipelineOutcome::Drop(reason), exec);
            }
        }

        let group = match msg.msgtype {
            MsgType::Phase1B => self.config.coordinator_group,
            MsgType::Phase2B => self.config.learner_group,
            // tbl_acceptor only rewrites to 1B/2B.
            _ => unreachable!("acceptor emitted {:?}", msg.msgtype),
        };
        (PipelineOutcome::Forward { msg, group }, exec)
    }

    /// Promised round for an instance, `None` if out of window.
    pub fn promised_rnd(&self, inst: u32) -> Option<u16> {
        self.core.rnds.read(u64::from(inst)).ok().map(|v| v as u16)
    }

    /// `(voted, vrnd, value)` for an instance, `None` if out of window.
    pub fn vote(&self, inst: u32) -> Option<(bool, u16, Value)> {
        let (voted, vrnd) = unpack_vote(self.core.vrnds.read(u64::from(inst)).ok()?);
        let value = self.core.values.read(u64::from(inst)).ok()?;
        Some((voted, vrnd, value))
    }

    /// Counts a parser rejection against this switch's drop counters.
    pub fn note_parse_error(&mut self) {
        self.drops.bump(DropReason::ParseError);
    }

    pub fn drop_counters(&self) -> DropCounters {
        self.drops
    }

    /// Per-table hit counters for the trace log.
    pub fn table_counters(&self) -> Vec<(String, std::collections::BTreeMap<String, u64>)> {
        vec![
            ("tbl_rnd".to_string(), self.tbl_rnd.counters()),
            ("tbl_acceptor".to_string(), self.tbl_acceptor.counters()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_acceptor(id: u16) -> Acceptor {
        Acceptor::new(AcceptorConfig {
            acceptor_id: id,
            instance_window: 8,
            coordinator_group: GroupId(1),
            learner_group: GroupId(3),
        })
    }

    fn m(msgtype: MsgType, inst: u32, rnd: u16, value: Value) -> PaxosMessage {
        PaxosMessage {
            msgtype,
            inst,
            rnd,
            vrnd: 0,
            acpt: 0,
            value,
        }
    }

    #[test]
    fn fresh_instance_1a_promises_and_echoes() {
        let mut acc = test_acceptor(2);
        let (out, exec) = acc.process(m(MsgType::Phase1A, 3, 7, Value::ZERO));
        match out {
            PipelineOutcome::Forward { msg, group } => {
                assert_eq!(msg.msgtype, MsgType::Phase1B);
                assert_eq!(msg.inst, 3);
                assert_eq!(msg.rnd, 7);
                assert_eq!(msg.vrnd, 0);
                assert_eq!(msg.acpt, 2);
                assert!(msg.value.is_zero());
                assert_eq!(group, GroupId(1));
            }
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(acc.promised_rnd(3), Some(7));
        assert_eq!(
            exec,
            vec![
                ExecStep {
                    table: "tbl_rnd",
                    action: "read_rnd"
                },
                ExecStep {
                    table: "tbl_acceptor",
                    action: "handle_1a"
                },
            ]
        );
    }

    #[test]
    fn stale_round_is_dropped() {
        let mut acc = test_acceptor(0);
        acc.process(m(MsgType::Phase1A, 0, 5, Value::ZERO));
        let (out, _) = acc.process(m(
            MsgType::Phase2A,
            0,
            3,
            Value::from_payload(b"v").unwrap(),
        ));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::StaleRound));
        assert_eq!(acc.drop_counters().stale_round, 1);
        // Nothing was voted.
        assert!(!acc.vote(0).unwrap().0);
    }

    #[test]
    fn equal_round_2a_is_accepted_after_own_promise() {
        let mut acc = test_acceptor(1);
        acc.process(m(MsgType::Phase1A, 0, 5, Value::ZERO));
        let v = Value::from_payload(b"v").unwrap();
        let (out, _) = acc.process(m(MsgType::Phase2A, 0, 5, v));
        match out {
            PipelineOutcome::Forward { msg, group } => {
                assert_eq!(msg.msgtype, MsgType::Phase2B);
                assert_eq!(msg.rnd, 5);
                assert_eq!(msg.vrnd, 5);
                assert_eq!(msg.value, v);
                assert_eq!(msg.acpt, 1);
                assert_eq!(group, GroupId(3));
            }
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(acc.vote(0), Some((true, 5, v)));
    }

    #[test]
    fn round_zero_accept_on_fresh_instance() {
        let mut acc = test_acceptor(0);
        let v = Value::from_payload(b"first").unwrap();
        let (out, _) = acc.process(m(MsgType::Phase2A, 0, 0, v));
        match out {
            PipelineOutcome::Forward { msg, .. } => {
                assert_eq!(msg.msgtype, MsgType::Phase2B);
                assert_eq!(msg.rnd, 0);
                assert_eq!(msg.vrnd, 0);
                assert_eq!(msg.value, v);
            }
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(acc.vote(0), Some((true, 0, v)));
    }

    #[test]
    fn promise_after_vote_reports_vote() {
        let mut acc = test_acceptor(4);
        let v = Value::from_payload(b"x").unwrap();
        acc.process(m(MsgType::Phase2A, 1, 3, v));
        let (out, _) = acc.process(m(MsgType::Phase1A, 1, 7, Value::ZERO));
        match out {
            PipelineOutcome::Forward { msg, .. } => {
                assert_eq!(msg.msgtype, MsgType::Phase1B);
                assert_eq!(msg.rnd, 7);
                assert_eq!(msg.vrnd, 3);
                assert_eq!(msg.value, v);
            }
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(acc.promised_rnd(1), Some(7));
    }

    #[test]
    fn duplicate_1a_is_idempotent() {
        let mut acc = test_acceptor(0);
        let (out1, _) = acc.process(m(MsgType::Phase1A, 2, 4, Value::ZERO));
        let promised = acc.promised_rnd(2);
        let vote = acc.vote(2);
        let (out2, _) = acc.process(m(MsgType::Phase1A, 2, 4, Value::ZERO));
        assert_eq!(out1, out2);
        assert_eq!(acc.promised_rnd(2), promised);
        assert_eq!(acc.vote(2), vote);
    }

    #[test]
    fn duplicate_2a_is_a_state_fixed_point() {
        let mut acc = test_acceptor(0);
        let v = Value::from_payload(b"dup").unwrap();
        let (out1, _) = acc.process(m(MsgType::Phase2A, 0, 1, v));
        let (out2, _) = acc.process(m(MsgType::Phase2A, 0, 1, v));
        assert_eq!(out1, out2);
        assert_eq!(acc.vote(0), Some((true, 1, v)));
    }

    #[test]
    fn higher_round_2a_overwrites_vote() {
        let mut acc = test_acceptor(0);
        let v1 = Value::from_payload(b"old").unwrap();
        let v2 = Value::from_payload(b"new").unwrap();
        acc.process(m(MsgType::Phase2A, 0, 1, v1));
        let (out, _) = acc.process(m(MsgType::Phase2A, 0, 2, v2));
        match out {
            PipelineOutcome::Forward { msg, .. } => {
                assert_eq!(msg.value, v2);
                assert_eq!(msg.vrnd, 2);
            }
            other => panic!("expected forward, got {other:?}"),
        }
        assert_eq!(acc.vote(0), Some((true, 2, v2)));
    }

    #[test]
    fn out_of_window_instance_drops_without_mutation() {
        let mut acc = test_acceptor(0);
        let (out, exec) = acc.process(m(MsgType::Phase1A, 8, 1, Value::ZERO));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::OutOfRange));
        assert!(exec.is_empty());
        assert_eq!(acc.drop_counters().out_of_range, 1);
        for inst in 0..8 {
            assert_eq!(acc.promised_rnd(inst), Some(0));
            assert!(!acc.vote(inst).unwrap().0);
        }
    }

    #[test]
    fn non_phase_messages_miss_the_tables() {
        let mut acc = test_acceptor(0);
        let (out, _) = acc.process(m(MsgType::Phase1B, 0, 0, Value::ZERO));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::NoMatch));
        let (out, _) = acc.process(m(MsgType::Phase2B, 0, 0, Value::ZERO));
        assert_eq!(out, PipelineOutcome::Drop(DropReason::NoMatch));
        assert_eq!(acc.drop_counters().no_match, 2);
    }

    fn arb_packet() -> impl Strategy<Value = PaxosMessage> {
        (
            prop_oneof![Just(MsgType::Phase1A), Just(MsgType::Phase2A)],
            0u32..10, // includes out-of-window (window = 8)
            0u16..6,
            proptest::collection::vec(any::<u8>(), 0..8),
        )
            .prop_map(|(msgtype, inst, rnd, payload)| PaxosMessage {
                msgtype,
                inst,
                rnd,
                vrnd: 0,
                acpt: 0,
                value: Value::from_payload(&payload).unwrap(),
            })
    }

    proptest! {
        // Reused-but-reset metadata must behave exactly like fresh metadata.
        #[test]
        fn metadata_isolation(msgs in proptest::collection::vec(arb_packet(), 0..20)) {
            let mut fresh = test_acceptor(0);
            let mut reused = test_acceptor(0);
            let mut meta = Metadata { promised_rnd: 0xbeef };
            for msg in &msgs {
                let (out_fresh, _) = fresh.process(*msg);
                let (out_reused, _) = reused.process_with_meta(*msg, &mut meta);
                prop_assert_eq!(out_fresh, out_reused);
            }
            for inst in 0..8 {
                prop_assert_eq!(fresh.promised_rnd(inst), reused.promised_rnd(inst));
                prop_assert_eq!(fresh.vote(inst), reused.vote(inst));
            }
        }

        // rnds[i] never decreases, and vrnds[i] <= rnds[i] throughout.
        #[test]
        fn promise_monotonicity(msgs in proptest::collection::vec(arb_packet(), 0..30)) {
            let mut acc = test_acceptor(0);
            let mut high_water = [0u16; 8];
            for msg in &msgs {
                acc.process(*msg);
                for inst in 0..8u32 {
                    let promised = acc.promised_rnd(inst).unwrap();
                    prop_assert!(promised >= high_water[inst as usize]);
                    high_water[inst as usize] = promised;
                    let (voted, vrnd, _) = acc.vote(inst).unwrap();
                    if voted {
                        prop_assert!(vrnd <= promised);
                    }
                }
            }
        }
    }
}
