//! Multi-Paxos on simulated programmable switches.
//!
//! The coordinator and acceptor roles run as match-action pipeline programs
//! over persistent per-switch registers; proposers and learners are host
//! libraries; everything is wired together by a deterministic discrete-event
//! network simulator with seeded fault injection.
//!
//! Module map:
//!
//! - [`wire`] — the Paxos-over-UDP header: bit-exact encode/decode.
//! - [`pipeline`] — the execution model: registers, metadata, match tables,
//!   drop bookkeeping (safe-mode bounds checks).
//! - [`coordinator`] — the sequencing switch program plus the Phase-1
//!   pre-execution/failover driver.
//! - [`acceptor`] — the acceptor switch program: promise bookkeeping,
//!   stale-round filtering, vote casting.
//! - [`hosts`] — proposer (submit + retransmission) and learner (2B quorum
//!   matrix, in-order delivery) libraries.
//! - [`netsim`] — deterministic event-queue network with multicast groups,
//!   loss, duplication, reordering, and crash/restart/failover commands.
//! - [`harness`] — scenario configuration, property checkers, and the
//!   pass/fail report the CLI emits.

pub mod acceptor;
pub mod coordinator;
pub mod harness;
pub mod hosts;
pub mod netsim;
pub mod pipeline;
pub mod trace;
pub mod wire;

/// Simulated time in microseconds since the start of a run.
pub type SimTime = u64;

/// Milliseconds-to-SimTime helper; scenario files speak milliseconds.
pub const fn millis(ms: u64) -> SimTime {
    ms * 1_000
}
