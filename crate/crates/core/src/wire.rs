//! Paxos-over-UDP wire header: bit-exact encoding and decoding.
//!
//! Every Paxos message travels as a UDP payload with this fixed layout
//! (offsets in bytes, all multi-byte fields big-endian):
//!
//! ```text
//! [0]      msgtype   u8   0x01=1A 0x02=1B 0x03=2A 0x04=2B
//! [1..5)   inst      u32  consensus instance number
//! [5..7)   rnd       u16  round number
//! [7..9)   vrnd      u16  round in which the sender last cast a vote
//! [9..11)  acpt      u16  acceptor id (sender id on 1B/2B, 0 otherwise)
//! [11..11+VALUE_SIZE) value, fixed length, zero-padded
//! ```
//!
//! This layout is the compatibility contract for the golden test vectors;
//! do not reorder or resize fields without regenerating them.
//!
//! Application payloads shorter than [`VALUE_SIZE`] are carried
//! length-prefixed inside the value bytes: the first 2 bytes hold the
//! payload length (big-endian), the payload follows, the rest is zeros.

use std::fmt;

use thiserror::Error;

/// Fixed width of the value field in bytes.
pub const VALUE_SIZE: usize = 64;

/// Total header length: 11 fixed bytes plus the value field.
pub const HEADER_SIZE: usize = 11 + VALUE_SIZE;

/// Largest application payload that fits behind the 2-byte length prefix.
pub const MAX_PAYLOAD: usize = VALUE_SIZE - 2;

/// UDP destination port identifying Paxos traffic. Non-Paxos UDP packets
/// bypass the Paxos tables entirely.
pub const PAXOS_PORT: u16 = 0x8888;

/// UDP destination port for learner-to-proposer responses.
pub const LEARNER_PORT: u16 = 0x8889;

/// Paxos message type, carried as a one-byte code on the wire.
#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgType {
    Phase1A = 0x01,
    Phase1B = 0x02,
    Phase2A = 0x03,
    Phase2B = 0x04,
}

impl MsgType {
    pub const fn code(self) -> u8 {
        self as u8
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            MsgType::Phase1A => "1a",
            MsgType::Phase1B => "1b",
            MsgType::Phase2A => "2a",
            MsgType::Phase2B => "2b",
        }
    }
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(code: u8) -> Result<Self, WireError> {
        match code {
            0x01 => Ok(MsgType::Phase1A),
            0x02 => Ok(MsgType::Phase1B),
            0x03 => Ok(MsgType::Phase2A),
            0x04 => Ok(MsgType::Phase2B),
            _ => Err(WireError::UnknownMsgType { code }),
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wire-level parse and build failures. A decode error means the packet
/// must be dropped (parser rejection), never that the process aborts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("buffer too short: got {len} bytes, header needs {HEADER_SIZE}")]
    BufferTooShort { len: usize },
    #[error("unknown message type code {code:#04x}")]
    UnknownMsgType { code: u8 },
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD}-byte value capacity")]
    ValueTooLarge { len: usize },
}

/// Fixed-size value field. Shorter application payloads are stored with a
/// 2-byte big-endian length prefix and zero padding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value([u8; VALUE_SIZE]);

impl Value {
    pub const ZERO: Value = Value([0; VALUE_SIZE]);

    pub const fn from_bytes(bytes: [u8; VALUE_SIZE]) -> Self {
        Value(bytes)
    }

    /// Wraps an application payload with the length prefix.
    ///
    /// An empty payload encodes to the all-zero value, which is
    /// indistinguishable from "no value" during Phase-1 recovery; callers
    /// that care should submit at least one byte.
    pub fn from_payload(payload: &[u8]) -> Result<Self, WireError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::ValueTooLarge { len: payload.len() });
        }
        let mut bytes = [0u8; VALUE_SIZE];
        bytes[..2].copy_from_slice(&(payload.len() as u16).to_be_bytes());
        bytes[2..2 + payload.len()].copy_from_slice(payload);
        Ok(Value(bytes))
    }

    /// Recovers the application payload behind the length prefix, or `None`
    /// if the prefix is inconsistent with the value capacity.
    pub fn payload(&self) -> Option<&[u8]> {
        let len = u16::from_be_bytes([self.0[0], self.0[1]]) as usize;
        if len > MAX_PAYLOAD {
            return None;
        }
        Some(&self.0[2..2 + len])
    }

    pub const fn as_bytes(&self) -> &[u8; VALUE_SIZE] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// Lowercase hex of the full value field, as written to traces.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(VALUE_SIZE * 2);
        for b in self.0 {
            use fmt::Write;
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.payload() {
            Some(p) => write!(f, "Value({})", String::from_utf8_lossy(p)),
            None => write!(f, "Value(raw {})", &self.to_hex()[..16]),
        }
    }
}

/// A decoded Paxos protocol message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaxosMessage {
    pub msgtype: MsgType,
    /// Consensus instance the message belongs to.
    pub inst: u32,
    /// Round number; on a 1B this echoes the 1A's round.
    pub rnd: u16,
    /// Round in which the sending acceptor last cast a vote (1B/2B).
    pub vrnd: u16,
    /// Acceptor id of the sender on 1B/2B, 0 otherwise.
    pub acpt: u16,
    pub value: Value,
}

impl PaxosMessage {
    /// Serializes to exactly [`HEADER_SIZE`] bytes, big-endian fields, in
    /// layout order msgtype, inst, rnd, vrnd, acpt, value.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_SIZE);
        buf.push(self.msgtype.code());
        buf.extend_from_slice(&self.inst.to_be_bytes());
        buf.extend_from_slice(&self.rnd.to_be_bytes());
        buf.extend_from_slice(&self.vrnd.to_be_bytes());
        buf.extend_from_slice(&self.acpt.to_be_bytes());
        buf.extend_from_slice(self.value.as_bytes());
        debug_assert_eq!(buf.len(), HEADER_SIZE);
        buf
    }

    /// Inverse of [`encode`](Self::encode) on well-formed input. Trailing
    /// bytes beyond the header are ignored.
    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < HEADER_SIZE {
            return Err(WireError::BufferTooShort { len: buf.len() });
        }
        let msgtype = MsgType::try_from(buf[0])?;
        let inst = u32::from_be_bytes([buf[1], buf[2], buf[3], buf[4]]);
        let rnd = u16::from_be_bytes([buf[5], buf[6]]);
        let vrnd = u16::from_be_bytes([buf[7], buf[8]]);
        let acpt = u16::from_be_bytes([buf[9], buf[10]]);
        let mut value = [0u8; VALUE_SIZE];
        value.copy_from_slice(&buf[11..11 + VALUE_SIZE]);
        Ok(PaxosMessage {
            msgtype,
            inst,
            rnd,
            vrnd,
            acpt,
            value: Value::from_bytes(value),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(
        msgtype: MsgType,
        inst: u32,
        rnd: u16,
        vrnd: u16,
        acpt: u16,
        value: Value,
    ) -> PaxosMessage {
        PaxosMessage {
            msgtype,
            inst,
            rnd,
            vrnd,
            acpt,
            value,
        }
    }

    #[test]
    fn encode_all_zero_2a() {
        let m = msg(MsgType::Phase2A, 0, 0, 0, 0, Value::ZERO);
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_SIZE);
        assert_eq!(bytes[0], 0x03);
        assert!(bytes[1..].iter().all(|&b| b == 0));
    }

    #[test]
    fn encode_1b_known_vector() {
        // Frozen from the field-packing table in the module docs.
        let value = Value::from_payload(b"abc").unwrap();
        let m = msg(MsgType::Phase1B, 7, 5, 5, 2, value);
        let bytes = m.encode();
        let mut expected = vec![
            0x02, // 1B
            0x00, 0x00, 0x00, 0x07, // inst
            0x00, 0x05, // rnd
            0x00, 0x05, // vrnd
            0x00, 0x02, // acpt
            0x00, 0x03, b'a', b'b', b'c', // length-prefixed payload
        ];
        expected.resize(HEADER_SIZE, 0);
        assert_eq!(bytes, expected);
        assert_eq!(PaxosMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn decode_rejects_short_buffers() {
        assert_eq!(
            PaxosMessage::decode(&[]),
            Err(WireError::BufferTooShort { len: 0 })
        );
        let short = vec![0x01; HEADER_SIZE - 1];
        assert_eq!(
            PaxosMessage::decode(&short),
            Err(WireError::BufferTooShort {
                len: HEADER_SIZE - 1
            })
        );
    }

    #[test]
    fn decode_rejects_unknown_msgtype() {
        let mut buf = vec![0u8; HEADER_SIZE];
        buf[0] = 0x09;
        assert_eq!(
            PaxosMessage::decode(&buf),
            Err(WireError::UnknownMsgType { code: 0x09 })
        );
        buf[0] = 0x00;
        assert_eq!(
            PaxosMessage::decode(&buf),
            Err(WireError::UnknownMsgType { code: 0x00 })
        );
    }

    #[test]
    fn decode_ignores_trailing_bytes() {
        let m = msg(
            MsgType::Phase2B,
            9,
            1,
            1,
            3,
            Value::from_payload(b"x").unwrap(),
        );
        let mut bytes = m.encode();
        bytes.extend_from_slice(&[0xaa, 0xbb]);
        assert_eq!(PaxosMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn payload_prefix_round_trip() {
        let v = Value::from_payload(b"a").unwrap();
        assert_eq!(&v.as_bytes()[..3], &[0x00, 0x01, b'a']);
        assert_eq!(v.payload().unwrap(), b"a");

        let max = vec![0x7f; MAX_PAYLOAD];
        assert_eq!(
            Value::from_payload(&max).unwrap().payload().unwrap(),
            &max[..]
        );

        assert_eq!(
            Value::from_payload(&[0; MAX_PAYLOAD + 1]),
            Err(WireError::ValueTooLarge {
                len: MAX_PAYLOAD + 1
            })
        );

        // Corrupt prefix claims more bytes than the field holds.
        let mut raw = [0u8; VALUE_SIZE];
        raw[0] = 0xff;
        raw[1] = 0xff;
        assert_eq!(Value::from_bytes(raw).payload(), None);
    }

    #[test]
    fn empty_payload_is_all_zero() {
        assert!(Value::from_payload(b"").unwrap().is_zero());
    }

    fn arb_msgtype() -> impl Strategy<Value = MsgType> {
        prop_oneof![
            Just(MsgType::Phase1A),
            Just(MsgType::Phase1B),
            Just(MsgType::Phase2A),
            Just(MsgType::Phase2B),
        ]
    }

    prop_compose! {
        fn arb_msg()(
            msgtype in arb_msgtype(),
            inst in any::<u32>(),
            rnd in any::<u16>(),
            vrnd in any::<u16>(),
            acpt in any::<u16>(),
            value in any::<[u8; VALUE_SIZE]>(),
        ) -> PaxosMessage {
            PaxosMessage { msgtype, inst, rnd, vrnd, acpt, value: Value::from_bytes(value) }
        }
    }

    proptest! {
        #[test]
        fn round_trip_identity(m in arb_msg()) {
            let bytes = m.encode();
            prop_assert_eq!(bytes.len(), HEADER_SIZE);
            prop_assert_eq!(PaxosMessage::decode(&bytes).unwrap(), m);
        }

        #[test]
        fn decode_total_on_arbitrary_bytes(buf in proptest::collection::vec(any::<u8>(), 0..200)) {
            // Must reject gracefully, never panic.
            let _ = PaxosMessage::decode(&buf);
        }
    }
}
