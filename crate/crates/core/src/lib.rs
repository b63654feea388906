//! Deterministic simulator for atomic swaps, swaptions, margin contracts,
//! futures and channel routing over toy UTXO chains.
//!
//! * [`chainsim`]: chains, predicates, transactions and the shared clock.
//! * [`contracts`]: predicate templates for every contract output.
//! * [`engine`]: protocol state machines, strategies and the adversary
//!   enumerator.
//! * [`econ`]: payoff formulas, strategic default and margin sizing.
//! * [`lightning`]: payment channels, routed positions, decoupling and
//!   unwinding.

pub mod chainsim;
pub mod contracts;
pub mod econ;
pub mod engine;
pub mod lightning;
