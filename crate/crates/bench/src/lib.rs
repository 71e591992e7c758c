//! Benchmarks and verification for the OVQ attention engine.
//!
//! Mixers (full attention, fixed-dictionary VQ, OVQ, linear attention) share
//! the [`mixer::Mixer`] interface and are compared on embedding-space recall,
//! state size and untrained token-task probes. [`verify`] runs the oracle
//! equivalence suite.

pub mod mixer;
pub mod recall;
pub mod report;
pub mod sweep;
pub mod token_eval;
pub mod verify;
