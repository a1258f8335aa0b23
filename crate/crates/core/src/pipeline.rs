//! Minimal match-action execution model for the switch programs.
//!
//! Mirrors the dataplane abstractions the coordinator and acceptor programs
//! need: persistent registers (fixed arrays of fixed-width cells), volatile
//! per-packet metadata, exact-match tables that invoke exactly one action,
//! and drop bookkeeping.
//!
//! All register access is bounds-checked ("safe mode"): an index outside
//! the array never mutates state and surfaces as an [`OutOfRange`] error,
//! which callers translate to `Drop(OutOfRange)` for the offending packet.
//! Control flow between tables is ordinary host-language code in each
//! switch program's `process` function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::wire::{MsgType, PaxosMessage, Value};

/// Default number of register cells per instance-indexed register, i.e. the
/// bounded window of instances Phase 1 can cover. Instance numbers index
/// registers directly (no modulo), so instances at or beyond the window are
/// dropped `OutOfRange`.
pub const DEFAULT_INSTANCE_WINDOW: u32 = 16384;

/// Multicast group identifier from the static switch configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub u16);

impl std::fmt::Display for GroupId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "group{}", self.0)
    }
}

/// Closed set of reasons a switch drops a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Parser rejection: short buffer or unknown message type.
    ParseError,
    /// Round in the packet is older than the promised round.
    StaleRound,
    /// Register index (or sequencing window) out of bounds.
    OutOfRange,
    /// No table entry matched and the default action is drop.
    NoMatch,
}

impl DropReason {
    pub const fn as_str(self) -> &'static str {
        match self {
            DropReason::ParseError => "parse_error",
            DropReason::StaleRound => "stale_round",
            DropReason::OutOfRange => "out_of_range",
            DropReason::NoMatch => "no_match",
        }
    }
}

/// Bounds violation on a register access.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("register {register}: index {index} out of range (size {size})")]
pub struct OutOfRange {
    pub register: &'static str,
    pub index: u64,
    pub size: usize,
}

impl From<OutOfRange> for DropReason {
    fn from(_: OutOfRange) -> Self {
        DropReason::OutOfRange
    }
}

/// Persistent switch state: a fixed array of fixed-width unsigned cells,
/// zero-initialized.
#[derive(Debug, Clone)]
pub struct Register {
    name: &'static str,
    cell_width: u32,
    cells: Vec<u64>,
}

impl Register {
    /// `cell_width` in bits, 1..=64.
    pub fn new(name: &'static str, cell_width: u32, num_cells: usize) -> Self {
        assert!(
            (1..=64).contains(&cell_width),
            "cell width {cell_width} out of range"
        );
        Register {
            name,
            cell_width,
            cells: vec![0; num_cells],
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn read(&self, index: u64) -> Result<u64, OutOfRange> {
        self.cells
            .get(usize::try_from(index).unwrap_or(usize::MAX))
            .copied()
            .ok_or(OutOfRange {
                register: self.name,
                index,
                size: self.cells.len(),
            })
    }

    /// Writes one cell; all other cells are untouched. The value must fit in
    /// the declared cell width (callers pass field-typed values, so this is
    /// a programming error, not a packet-triggered one).
    pub fn write(&mut self, index: u64, value: u64) -> Result<(), OutOfRange> {
        assert!(
            self.cell_width == 64 || value < (1u64 << self.cell_width),
            "register {}: value {value} exceeds {}-bit cell",
            self.name,
            self.cell_width
        );
        let size = self.cells.len();
        match self
            .cells
            .get_mut(usize::try_from(index).unwrap_or(usize::MAX))
        {
            Some(cell) => {
                *cell = value;
                Ok(())
            }
            None => Err(OutOfRange {
                register: self.name,
                index,
                size,
            }),
        }
    }
}

/// Register variant whose cells are fixed-length byte strings (the values
/// register of the acceptor program).
#[derive(Debug, Clone)]
pub struct ValueRegister {
    name: &'static str,
    cells: Vec<Value>,
}

impl ValueRegister {
    pub fn new(name: &'static str, num_cells: usize) -> Self {
        ValueRegister {
            name,
            cells: vec![Value::ZERO; num_cells],
        }
    }

    pub fn read(&self, index: u64) -> Result<Value, OutOfRange> {
        self.cells
            .get(usize::try_from(index).unwrap_or(usize::MAX))
            .copied()
            .ok_or(OutOfRange {
                register: self.name,
                index,
                size: self.cells.len(),
            })
    }

    pub fn write(&mut self, index: u64, value: Value) -> Result<(), OutOfRange> {
        let size = self.cells.len();
        match self
            .cells
            .get_mut(usize::try_from(index).unwrap_or(usize::MAX))
        {
            Some(cell) => {
                *cell = value;
                Ok(())
            }
            None => Err(OutOfRange {
                register: self.name,
                index,
                size,
            }),
        }
    }
}

/// Volatile per-packet scratch state carried between tables. Reset before
/// each packet; one packet's metadata is never observable while processing
/// another.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metadata {
    /// The acceptor's promised round for the packet's instance, filled in
    /// by the `read_rnd` action.
    pub promised_rnd: u16,
}

impl Metadata {
    pub fn reset(&mut self) {
        *self = Metadata::default();
    }
}

/// One `(table, action)` step of a packet's trip through a pipeline,
/// recorded for trace attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExecStep {
    pub table: &'static str,
    pub action: &'static str,
}

/// Action bound to a table entry. Actions are the only code that mutates
/// registers; they may rewrite the packet header and metadata.
pub type Action<S> = fn(&mut S, &mut PaxosMessage, &mut Metadata) -> Result<(), DropReason>;

/// Exact-match table keyed on `msgtype`. Applying the table runs exactly
/// one action: the bound one on a hit, the default (drop, `NoMatch`) on a
/// miss.
pub struct Table<S> {
    name: &'static str,
    entries: Vec<(MsgType, &'static str, Action<S>)>,
    hits: BTreeMap<&'static str, u64>,
    misses: u64,
}

impl<S> Table<S> {
    pub fn new(name: &'static str) -> Self {
        Table {
            name,
            entries: Vec::new(),
            hits: BTreeMap::new(),
            misses: 0,
        }
    }

    /// Binds an action to a msgtype key. At most one entry per key.
    pub fn entry(mut self, key: MsgType, action_name: &'static str, action: Action<S>) -> Self {
        assert!(
            self.entries.iter().all(|(k, _, _)| *k != key),
            "table {}: duplicate key {key}",
            self.name
        );
        self.entries.push((key, action_name, action));
        self
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Matches the packet and fires the bound action once, with access to
    /// header, metadata, and the register state `S`.
    pub fn apply(
        &mut self,
        state: &mut S,
        msg: &mut PaxosMessage,
        meta: &mut Metadata,
    ) -> Result<ExecStep, DropReason> {
        match self.entries.iter().find(|(k, _, _)| *k == msg.msgtype) {
            Some((_, action_name, action)) => {
                *self.hits.entry(action_name).or_insert(0) += 1;
                action(state, msg, meta)?;
                Ok(ExecStep {
                    table: self.name,
                    action: action_name,
                })
            }
            None => {
                self.misses += 1;
                Err(DropReason::NoMatch)
            }
        }
    }

    /// Hit counters per action plus the default-drop count, for the trace
    /// log's per-table statistics.
    pub fn counters(&self) -> BTreeMap<String, u64> {
        let mut out: BTreeMap<String, u64> = self
            .hits
            .iter()
            .map(|(k, v)| ((*k).to_string(), *v))
            .collect();
        out.insert("miss".to_string(), self.misses);
        out
    }
}

/// Per-switch drop counters, exported in trace snapshots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounters {
    pub parse_error: u64,
    pub stale_round: u64,
    pub out_of_range: u64,
    pub no_match: u64,
}

impl DropCounters {
    pub fn bump(&mut self, reason: DropReason) {
        match reason {
            DropReason::ParseError => self.parse_error += 1,
            DropReason::StaleRound => self.stale_round += 1,
            DropReason::OutOfRange => self.out_of_range += 1,
            DropReason::NoMatch => self.no_match += 1,
        }
    }
}

/// Result of a switch processing one packet.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineOutcome {
    /// Forward the (possibly rewritten) message to an egress multicast group.
    Forward {
        msg: PaxosMessage,
        group: GroupId,
    },
    Drop(DropReason),
}

impl PipelineOutcome {
    pub fn is_forward(&self) -> bool {
        matches!(self, PipelineOutcome::Forward { .. })
    }

    pub fn drop_reason(&self) -> Option<DropReason> {
        match self {
            PipelineOutcome::Drop(r) => Some(*r),
            PipelineOutcome::Forward { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::MsgType;

    #[test]
    fn fresh_register_reads_zero() {
        let reg = Register::new("rnds", 16, 4);
        assert_eq!(reg.read(0), Ok(0));
        assert_eq!(reg.read(3), Ok(0));
    }

    #[test]
    fn read_at_num_cells_is_out_of_range() {
        let reg = Register::new("rnds", 16, 4);
        assert_eq!(
            reg.read(4),
            Err(OutOfRange {
                register: "rnds",
                index: 4,
                size: 4
            })
        );
        assert!(reg.read(u64::MAX).is_err());
    }

    #[test]
    fn read_after_write() {
        let mut reg = Register::new("rnds", 16, 8);
        reg.write(3, 9).unwrap();
        assert_eq!(reg.read(3), Ok(9));
    }

    #[test]
    fn write_out_of_range_leaves_register_unchanged() {
        let mut reg = Register::new("rnds", 16, 4);
        reg.write(1, 7).unwrap();
        assert!(reg.write(4, 9).is_err());
        assert_eq!(reg.read(0), Ok(0));
        assert_eq!(reg.read(1), Ok(7));
    }

    #[test]
    fn interleaved_writes_do_not_alias() {
        let mut reg = Register::new("vrnds", 17, 4);
        reg.write(1, 5).unwrap();
        reg.write(2, 6).unwrap();
        reg.write(1, 7).unwrap();
        assert_eq!(reg.read(1), Ok(7));
        assert_eq!(reg.read(2), Ok(6));
    }

    #[test]
    #[should_panic(expected = "exceeds 16-bit cell")]
    fn oversized_value_panics() {
        let mut reg = Register::new("rnds", 16, 1);
        let _ = reg.write(0, 1 << 16);
    }

    #[test]
    fn value_register_bounds() {
        let mut reg = ValueRegister::new("values", 2);
        let v = Value::from_payload(b"hi").unwrap();
        reg.write(1, v).unwrap();
        assert_eq!(reg.read(1), Ok(v));
        assert_eq!(reg.read(0), Ok(Value::ZERO));
        assert!(reg.read(2).is_err());
        assert!(reg.write(2, v).is_err());
    }

    fn bump_action(
        count: &mut u32,
        msg: &mut PaxosMessage,
        _meta: &mut Metadata,
    ) -> Result<(), DropReason> {
        *count += 1;
        msg.rnd = 42;
        Ok(())
    }

    #[test]
    fn table_fires_bound_action_once() {
        let mut tbl: Table<u32> =
            Table::new("tbl_test").entry(MsgType::Phase2A, "bump", bump_action);
        let mut count = 0u32;
        let mut msg = PaxosMessage {
            msgtype: MsgType::Phase2A,
            inst: 0,
            rnd: 0,
            vrnd: 0,
            acpt: 0,
            value: Value::ZERO,
        };
        let mut meta = Metadata::default();
        let step = tbl.apply(&mut count, &mut msg, &mut meta).unwrap();
        assert_eq!(
            step,
            ExecStep {
                table: "tbl_test",
                action: "bump"
            }
        );
        assert_eq!(count, 1);
        assert_eq!(msg.rnd, 42);
        assert_eq!(tbl.counters().get("bump"), Some(&1));
    }

    #[test]
    fn table_miss_runs_default_drop() {
        let mut tbl: Table<u32> =
            Table::new("tbl_test").entry(MsgType::Phase2A, "bump", bump_action);
        let mut count = 0u32;
        let mut msg = PaxosMessage {
            msgtype: MsgType::Phase1B,
            inst: 0,
            rnd: 0,
            vrnd: 0,
            acpt: 0,
            value: Value::ZERO,
        };
        let mut meta = Metadata::default();
        assert_eq!(
            tbl.apply(&mut count, &mut msg, &mut meta),
            Err(DropReason::NoMatch)
        );
        assert_eq!(count, 0);
        assert_eq!(tbl.counters().get("miss"), Some(&1));
    }

    #[test]
    #[should_panic(expected = "duplicate key")]
    fn duplicate_table_key_panics() {
        let _ = Table::<u32>::new("tbl_test")
            .entry(MsgType::Phase2A, "a", bump_action)
            .entry(MsgType::Phase2A, "b", bump_action);
    }

    #[test]
    fn metadata_reset_clears_fields() {
        let mut meta = Metadata { promised_rnd: 7 };
        meta.reset();
        assert_eq!(meta, Metadata::default());
    }
}
