//! Simulator of a Lightning-style payment channel network with hidden
//! balances, together with an attacker engine that recovers those balances
//! through failing-payment probes, the countermeasures proposed against the
//! attack, and the metrics that quantify how much the attack reveals.
//!
//! The crate is split along the trust boundary of the system it models:
//!
//! * [`model`] defines the network types and the strict separation between
//!   the ground truth (balances, liveness) and the gossip-derived
//!   [`model::PublicView`] that is all an attacker may read.
//! * [`forwarding`] executes multi-hop payment attempts against the ground
//!   truth and produces the error/timing observations a real sender sees.
//! * [`routing`] and [`prober`] implement the attacker: route construction
//!   over the public view, the liveness heuristics, and the binary-search
//!   probing driver.
//! * [`metrics`], [`experiments`] and [`report`] post-process probe logs
//!   into the coefficient distributions and countermeasure comparisons.
//!
//! Multi-seed sweeps (soundness checks, paired countermeasure experiments)
//! are data-parallel; [`sweep`] runs them on rayon when the `parallel`
//! feature (default) is enabled and falls back to a sequential loop
//! otherwise.

pub mod experiments;
pub mod forwarding;
pub mod metrics;
pub mod model;
pub mod prober;
pub mod report;
pub mod routing;
pub mod snapshot;
pub mod sweep;
pub mod topology;

pub use model::{
    BalanceEstimate, Channel, ChannelId, Direction, DirectionPolicy, GroundTruthNetwork, Node,
    NodeId, PublicView,
};

/// Millisatoshis per satoshi; all internal amounts are integer msat.
pub const MSAT_PER_SAT: u64 = 1_000;
