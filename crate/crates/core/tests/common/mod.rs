//! Independent oracles shared by the integration and acceptance suites.
//!
//! Everything here is written against the protocol description, not
//! against the library internals, so it can serve as a cross-check.

// Each test target compiles this module separately and uses a subset.
#![allow(dead_code)]

use switch_paxos::netsim::SimRng;
use switch_paxos::wire::{MsgType, PaxosMessage, Value, VALUE_SIZE};

/// Bit-packing oracle for the wire header: packs fields one byte at a time
/// with shifts, straight from the layout table (msgtype u8, inst u32 BE,
/// rnd u16 BE, vrnd u16 BE, acpt u16 BE, value). Deliberately avoids the
/// `to_be_bytes` path the implementation uses.
pub fn pack_reference(msg: &PaxosMessage) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(match msg.msgtype {
        MsgType::Phase1A => 0x01,
        MsgType::Phase1B => 0x02,
        MsgType::Phase2A => 0x03,
        MsgType::Phase2B => 0x04,
    });
    for shift in [24u32, 16, 8, 0] {
        out.push(((msg.inst >> shift) & 0xff) as u8);
    }
    for field in [msg.rnd, msg.vrnd, msg.acpt] {
        out.push((field >> 8) as u8);
        out.push((field & 0xff) as u8);
    }
    out.extend_from_slice(msg.value.as_bytes());
    out
}

/// Uniform random message from a seeded stream.
pub fn random_message(rng: &mut SimRng) -> PaxosMessage {
    let msgtype = match rng.up_to(3) {
        0 => MsgType::Phase1A,
        1 => MsgType::Phase1B,
        2 => MsgType::Phase2A,
        _ => MsgType::Phase2B,
    };
    let mut value = [0u8; VALUE_SIZE];
    for byte in &mut value {
        *byte = rng.up_to(255) as u8;
    }
    PaxosMessage {
        msgtype,
        inst: rng.next_u64() as u32,
        rnd: rng.next_u64() as u16,
        vrnd: rng.next_u64() as u16,
        acpt: rng.next_u64() as u16,
        value: Value::from_bytes(value),
    }
}

/// Direct transcription of the single-instance acceptor rules: acknowledge
/// a request unless a higher round was already acknowledged; a 1A reply
/// echoes the stored vote, a 2A updates round, vote round, and value.
pub struct RefAcceptor {
    pub acceptor_id: u16,
    pub rnd: u16,
    pub vrnd: u16,
    pub voted: bool,
    pub value: Value,
}

impl RefAcceptor {
    pub fn new(acceptor_id: u16) -> Self {
        RefAcceptor {
            acceptor_id,
            rnd: 0,
            vrnd: 0,
            voted: false,
            value: Value::ZERO,
        }
    }

    /// Processes one message for the single instance; returns the emitted
    /// reply, or `None` when the message is rejected.
    pub fn step(&mut self, msg: &PaxosMessage) -> Option<PaxosMessage> {
        match msg.msgtype {
            MsgType::Phase1A if msg.rnd >= self.rnd => {
                self.rnd = msg.rnd;
                Some(PaxosMessage {
                    msgtype: MsgType::Phase1B,
                    inst: msg.inst,
                    rnd: msg.rnd,
                    vrnd: self.vrnd,
                    acpt: self.acceptor_id,
                    value: self.value,
                })
            }
            MsgType::Phase2A if msg.rnd >= self.rnd => {
                self.rnd = msg.rnd;
                self.vrnd = msg.rnd;
                self.voted = true;
                self.value = msg.value;
                Some(PaxosMessage {
                    msgtype: MsgType::Phase2B,
                    inst: msg.inst,
                    rnd: msg.rnd,
                    vrnd: msg.rnd,
                    acpt: self.acceptor_id,
                    value: msg.value,
                })
            }
            _ => None,
        }
    }
}

/// Brute-force learner decision oracle: folds a 2B list into per-acceptor
/// cells (higher round wins) and reports whether any (rnd, value) pair has
/// reached the quorum after the final message.
pub fn brute_force_decided(
    msgs: &[(u16 /* acpt */, u16 /* rnd */, Value)],
    quorum: usize,
) -> Option<Value> {
    let mut cells: Vec<(u16, u16, Value)> = Vec::new();
    for &(acpt, rnd, value) in msgs {
        match cells.iter_mut().find(|(a, _, _)| *a == acpt) {
            Some(cell) => {
                if rnd >= cell.1 {
                    cell.1 = rnd;
                    cell.2 = value;
                }
            }
            None => cells.push((acpt, rnd, value)),
        }
    }
    for &(_, rnd, value) in &cells {
        let identical = cells
            .iter()
            .filter(|(_, r, v)| *r == rnd && *v == value)
            .count();
        if identical >= quorum {
            return Some(value);
        }
    }
    None
}
