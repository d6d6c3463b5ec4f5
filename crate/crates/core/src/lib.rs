//! Proportional-fair downlink scheduling when learning a user's channel
//! costs a fraction of the slot.
//!
//! - [`channel`]: unit-mean rate shapes and per-slot rate generation.
//! - [`stopping`]: the one-stage look-ahead stop rule and its static
//!   threshold form.
//! - [`policies`]: per-slot schedulers, including the learning variant and
//!   the round-robin, genie-aided and probe-all baselines.
//! - [`analysis`]: steady-state theory (probe-count law, scheduling gain).
//! - [`sim`]: the slot loop, replications, paired runs and sweeps.

pub mod analysis;
pub mod channel;
pub mod policies;
pub mod rng;
pub mod sim;
pub mod stopping;

pub use channel::{RateModel, UserPopulation};
pub use policies::{PolicyKind, PolicyState, SlotDecision};
pub use stopping::ThresholdTable;
