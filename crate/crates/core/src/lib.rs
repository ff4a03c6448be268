//! Distributed-ledger constructions over repeated consensus, the
//! sub-proposal fusion layer that makes them fair, a deterministic
//! discrete-event simulator to run them under Byzantine adversaries, and an
//! offline checker for the resulting traces.

pub mod adversary;
pub mod checker;
pub mod constructions;
pub mod frc;
pub mod harness;
pub mod netsim;
pub mod rc;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod types;
pub mod validity;
