//! System-level simulator and optimization library for device-to-device
//! clustering in FDD cellular networks.
//!
//! The crate models a heterogeneous deployment (macro ring plus random small
//! cells), computes per-link resource costs from a truncated Shannon bound,
//! and searches for user-to-cell / user-to-cluster-head associations that
//! minimize the number of physical resource blocks needed to carry the
//! offered traffic. Three heuristics are provided on top of an exact
//! branch-and-bound solver:
//!
//! * `ecore` — greedy creation of spectral-efficient clusters, with a
//!   conflict-resolution second phase. A same-cell restriction flag turns it
//!   into the `core` baseline.
//! * `calb` — a post-pass that trades uplink capacity for downlink capacity
//!   in saturated cells by forming extra (non spectral-efficient) clusters.
//! * `ceea` — an energy ledger that bans users from the cluster-head role
//!   when their measured overconsumption exceeds a decaying threshold.
//!
//! [`engine::run`] ties everything together into a seeded, replicated
//! discrete-time simulation emitting CSV metrics.

pub mod association;
pub mod calb;
pub mod config;
pub mod ecore;
pub mod energy;
pub mod engine;
pub mod error;
pub mod optimal;
pub mod radio;
pub mod resources;
pub mod scenario;
pub mod snapshot;

pub use association::AssociationState;
pub use config::SimConfig;
pub use error::Error;
pub use radio::LinkCostTable;
pub use scenario::{BaseStation, Bounds, Point, TrafficProfile, UserEquipment};
