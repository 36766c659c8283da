//! Multiple routing configurations with timeslot-based recovery.
//!
//! The crate covers the whole pipeline: a topology ([`topology`]), a set of
//! backup configurations in which every node and link is isolated once
//! ([`configgen`]), per-configuration forwarding tables ([`routing`]), the
//! per-router recovery state machine ([`forwarding`]), and a deterministic
//! discrete-event simulator that compares the timeslot/probe/revert scheme
//! against plain backup switching ([`sim`], [`metrics`]).

pub mod configgen;
pub mod forwarding;
pub mod metrics;
pub mod routing;
pub mod sim;
pub mod topology;

pub use topology::{parse_topology, Component, Graph, Link, LinkKey, NodeId};
