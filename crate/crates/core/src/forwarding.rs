//! Per-router recovery state machine.
//!
//! For every failed component it knows about, a router is in one of three
//! modes (absence of an entry is the normal mode):
//!
//! ```text
//!   normal --detect--> timeslot-wait --expired, still down--> backup-active
//!     ^                     |                                    |    |
//!     +----- recovered -----+                                    |    |
//!     +------------------- probe reply --------------------------+    |
//!                                             re-convergence deadline v
//!                                                             reconverged
//! ```
//!
//! In MRC mode detection goes straight to backup-active and there is no
//! probing, so backup forwarding lasts until re-convergence.
//!
//! Transitions that need a timer push a [`TimerRequest`]; the caller drains
//! them with [`RouterState::take_timers`] and schedules them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configgen::{generate, ConfigCount, ConfigurationSet};
use crate::routing::{build_table_partial, build_tables, ForwardingTable};
use crate::topology::{Component, Graph, LinkKey, NodeId};

/// Simulated time in microsecond ticks.
pub type SimTime = u64;

pub type FailedComponent = Component;

/// Recovery scheme run by every router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Timeslot hold, backup forwarding with probing, revert on recovery.
    Emrc,
    /// Immediate switch to backup, kept until re-convergence.
    Mrc,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Emrc => "emrc",
            Protocol::Mrc => "mrc",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "emrc" => Ok(Protocol::Emrc),
            "mrc" => Ok(Protocol::Mrc),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timers {
    pub t_slot: SimTime,
    pub t_probe: SimTime,
    pub t_reconv: SimTime,
}

impl Default for Timers {
    fn default() -> Self {
        Timers {
            t_slot: 30_000,
            t_probe: 20_000,
            t_reconv: 1_000_000,
        }
    }
}

impl Timers {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_slot == 0 || self.t_probe == 0 || self.t_reconv == 0 {
            return Err("timers must be positive".into());
        }
        if self.t_slot >= self.t_reconv {
            return Err(format!(
                "timeslot ({}) must be shorter than the re-convergence threshold ({})",
                self.t_slot, self.t_reconv
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForwardingError {
    #[error("no backup configuration isolates {0}")]
    NoBackupConfig(FailedComponent),
}

/// Why a packet was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LoopDetected,
    SecondFailureSameConfig,
    NoBackupConfig,
    DestinationDown,
    NoRoute,
    HoldOverflow,
    SourceDown,
    /// The router holding or receiving the packet failed.
    NodeDown,
}

impl DropReason {
    pub const ALL: [DropReason; 8] = [
        DropReason::LoopDetected,
        DropReason::SecondFailureSameConfig,
        DropReason::NoBackupConfig,
        DropReason::DestinationDown,
        DropReason::NoRoute,
        DropReason::HoldOverflow,
        DropReason::SourceDown,
        DropReason::NodeDown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::LoopDetected => "loop_detected",
            DropReason::SecondFailureSameConfig => "second_failure_same_config",
            DropReason::NoBackupConfig => "no_backup_config",
            DropReason::DestinationDown => "destination_down",
            DropReason::NoRoute => "no_route",
            DropReason::HoldOverflow => "hold_overflow",
            DropReason::SourceDown => "source_down",
            DropReason::NodeDown => "node_down",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A data packet. `config_mark` stands in for the DSCP value that tells
/// transit routers which configuration's table to use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub config_mark: usize,
    /// `(node, mark)` for every link the packet has crossed.
    pub hops: Vec<(NodeId, usize)>,
    /// Backup configurations this packet has already been marked with.
    pub tried_configs: BTreeSet<usize>,
}

impl Packet {
    pub fn new(seq: u64, src: NodeId, dst: NodeId) -> Self {
        Packet {
            seq,
            src,
            dst,
            config_mark: 0,
            hops: Vec::new(),
            tried_configs: BTreeSet::new(),
        }
    }

    fn has_visited(&self, node: NodeId, mark: usize) -> bool {
        self.hops.contains(&(node, mark))
    }

    /// Clears marking state after the tables were rebuilt. The hop trace
    /// is kept, so a rebuilt route that revisits a `(node, 0)` pair still
    /// counts as a loop.
    pub fn reset_marking(&mut self) {
        self.config_mark = 0;
        self.tried_configs.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TimeslotWait {
        deadline: SimTime,
        detected_at: SimTime,
    },
    BackupActive {
        /// `None` when no backup configuration protects the component.
        config: Option<usize>,
        next_probe_at: Option<SimTime>,
        detected_at: SimTime,
    },
    Reconverged,
}

/// Mode name for logs; `Normal` is the absence of an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Normal,
    TimeslotWait,
    BackupActive,
    Reconverged,
}

impl From<Option<&Mode>> for ModeKind {
    fn from(m: Option<&Mode>) -> Self {
        match m {
            None => ModeKind::Normal,
            Some(Mode::TimeslotWait { .. }) => ModeKind::TimeslotWait,
            Some(Mode::BackupActive { .. }) => ModeKind::BackupActive,
            Some(Mode::Reconverged) => ModeKind::Reconverged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerRequest {
    TimeslotExpire {
        component: FailedComponent,
        at: SimTime,
    },
    ProbeSend {
        component: FailedComponent,
        at: SimTime,
    },
    ReconvergenceDeadline {
        component: FailedComponent,
        at: SimTime,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardAction {
    Forward {
        next: NodeId,
        mark: usize,
    },
    Hold {
        until: SimTime,
        component: FailedComponent,
    },
    Drop(DropReason),
    DeliverLocal,
}

/// What a router currently believes about one neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Up,
    Down(FailedComponent),
}

/// Local view of neighbor reachability; neighbors not listed are up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborStatus(BTreeMap<NodeId, FailedComponent>);

impl NeighborStatus {
    pub fn set_down(&mut self, neighbor: NodeId, cause: FailedComponent) {
        // A node failure explains more than a link failure.
        match self.0.get(&neighbor) {
            Some(Component::Node(_)) => {}
            _ => {
                self.0.insert(neighbor, cause);
            }
        }
    }

    pub fn get(&self, neighbor: NodeId) -> LinkState {
        self.0
            .get(&neighbor)
            .map_or(LinkState::Up, |&c| LinkState::Down(c))
    }
}

/// Emitted when a failure outlives the re-convergence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconvergenceRequest {
    pub node: NodeId,
    pub component: FailedComponent,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterState {
    node: NodeId,
    protocol: Protocol,
    timers: Timers,
    modes: BTreeMap<FailedComponent, Mode>,
    pending: Vec<TimerRequest>,
}

impl RouterState {
    pub fn new(node: NodeId, protocol: Protocol, timers: Timers) -> Self {
        RouterState {
            node,
            protocol,
            timers,
            modes: BTreeMap::new(),
            pending: Vec::new(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn timers(&self) -> Timers {
        self.timers
    }

    pub fn mode(&self, fc: FailedComponent) -> Option<&Mode> {
        self.modes.get(&fc)
    }

    pub fn mode_kind(&self, fc: FailedComponent) -> ModeKind {
        ModeKind::from(self.modes.get(&fc))
    }

    pub fn modes(&self) -> impl Iterator<Item = (FailedComponent, &Mode)> {
        self.modes.iter().map(|(&c, m)| (c, m))
    }

    pub fn take_timers(&mut self) -> Vec<TimerRequest> {
        std::mem::take(&mut self.pending)
    }

    /// Forget everything, as after a router restart.
    pub fn reset(&mut self) {
        self.modes.clear();
        self.pending.clear();
    }

    /// Neighbors this router considers unreachable, derived from its modes.
    pub fn neighbor_status(&self) -> NeighborStatus {
        let mut status = NeighborStatus::default();
        for &fc in self.modes.keys() {
            match fc {
                Component::Node(v) => status.set_down(v, fc),
                Component::Link(k) if k.touches(self.node) => {
                    status.set_down(k.other(self.node), fc)
                }
                Component::Link(_) => {}
            }
        }
        status
    }

    /// The router learns that `fc` is down. No-op if it already has an entry.
    pub fn detect(&mut self, fc: FailedComponent, now: SimTime, cs: &ConfigurationSet) {
        if self.modes.contains_key(&fc) {
            return;
        }
        let mode = match self.protocol {
            Protocol::Emrc => {
                let deadline = now + self.timers.t_slot;
                self.pending.push(TimerRequest::TimeslotExpire {
                    component: fc,
                    at: deadline,
                });
                Mode::TimeslotWait {
                    deadline,
                    detected_at: now,
                }
            }
            Protocol::Mrc => Mode::BackupActive {
                config: select_backup_config(cs, fc).ok(),
                next_probe_at: None,
                detected_at: now,
            },
        };
        self.pending.push(TimerRequest::ReconvergenceDeadline {
            component: fc,
            at: now + self.timers.t_reconv,
        });
        self.modes.insert(fc, mode);
    }

    /// End of the timeslot for `fc`. A live component returns to normal;
    /// otherwise the router starts backup forwarding and probing.
    pub fn on_timeslot_expired(
        &mut self,
        fc: FailedComponent,
        live: bool,
        now: SimTime,
        cs: &ConfigurationSet,
    ) {
        let Some(&Mode::TimeslotWait { detected_at, .. }) = self.modes.get(&fc) else {
            return;
        };
        if live {
            self.modes.remove(&fc);
            return;
        }
        let next_probe_at = match self.protocol {
            Protocol::Emrc => {
                let at = now + self.timers.t_probe;
                self.pending
                    .push(TimerRequest::ProbeSend { component: fc, at });
                Some(at)
            }
            Protocol::Mrc => None,
        };
        self.modes.insert(
            fc,
            Mode::BackupActive {
                config: select_backup_config(cs, fc).ok(),
                next_probe_at,
                detected_at,
            },
        );
    }

    /// Whether a probe for `fc` should go out now; schedules the next one.
    pub fn on_probe_send(&mut self, fc: FailedComponent, now: SimTime) -> bool {
        if self.protocol != Protocol::Emrc {
            return false;
        }
        match self.modes.get_mut(&fc) {
            Some(Mode::BackupActive { next_probe_at, .. }) => {
                let at = now + self.timers.t_probe;
                *next_probe_at = Some(at);
                self.pending
                    .push(TimerRequest::ProbeSend { component: fc, at });
                true
            }
            _ => false,
        }
    }

    /// A probe for `fc` was answered: revert to the original route.
    pub fn on_probe_reply(&mut self, fc: FailedComponent) {
        if let Some(Mode::BackupActive { .. }) = self.modes.get(&fc) {
            self.modes.remove(&fc);
        }
    }

    /// Fires the re-convergence trigger if `fc` has been handled by backup
    /// forwarding for at least `t_reconv` since detection.
    pub fn on_reconvergence_deadline(
        &mut self,
        fc: FailedComponent,
        now: SimTime,
    ) -> Option<ReconvergenceRequest> {
        match self.modes.get(&fc) {
            Some(&Mode::BackupActive { detected_at, .. })
                if now.saturating_sub(detected_at) >= self.timers.t_reconv =>
            {
                self.modes.insert(fc, Mode::Reconverged);
                Some(ReconvergenceRequest {
                    node: self.node,
                    component: fc,
                    at: now,
                })
            }
            _ => None,
        }
    }

    /// After global re-convergence: entries for components that are still
    /// down become `Reconverged`, everything else returns to normal.
    pub fn apply_reconvergence(&mut self, still_down: &BTreeSet<FailedComponent>) {
        self.modes.retain(|fc, _| still_down.contains(fc));
        for m in self.modes.values_mut() {
            *m = Mode::Reconverged;
        }
    }
}

/// The backup configuration in which `fc` is isolated.
pub fn select_backup_config(
    cs: &ConfigurationSet,
    fc: FailedComponent,
) -> Result<usize, ForwardingError> {
    cs.isolating(fc).ok_or(ForwardingError::NoBackupConfig(fc))
}

/// Decides what router `state.node()` does with `pkt` at time `now`.
///
/// May re-mark the packet, and detects a component that `status` reports
/// down but `state` has no entry for.
pub fn on_packet(
    state: &mut RouterState,
    pkt: &mut Packet,
    tables: &[ForwardingTable],
    cs: &ConfigurationSet,
    status: &NeighborStatus,
    now: SimTime,
) -> ForwardAction {
    let here = state.node;
    if pkt.dst == here {
        return ForwardAction::DeliverLocal;
    }
    // Every pass either returns or re-marks the packet with a fresh
    // configuration, so this terminates.
    for _ in 0..=tables.len() + 1 {
        let mark = pkt.config_mark;
        if pkt.has_visited(here, mark) {
            return ForwardAction::Drop(DropReason::LoopDetected);
        }
        let Some(next) = tables.get(mark).and_then(|t| t.get(here, pkt.dst)) else {
            return ForwardAction::Drop(DropReason::NoRoute);
        };
        let fc = match status.get(next) {
            LinkState::Up => return ForwardAction::Forward { next, mark },
            LinkState::Down(fc) => fc,
        };
        if !state.modes.contains_key(&fc) {
            state.detect(fc, now, cs);
        }
        // Only `on_timeslot_expired` ends a timeslot, since only the caller
        // knows whether the component came back.
        if let Some(&Mode::TimeslotWait { deadline, .. }) = state.modes.get(&fc) {
            return ForwardAction::Hold {
                until: deadline,
                component: fc,
            };
        }
        match state.modes.get(&fc) {
            Some(&Mode::BackupActive { config, .. }) => {
                if fc == Component::Node(pkt.dst) {
                    return ForwardAction::Drop(DropReason::DestinationDown);
                }
                let Some(i) = config else {
                    return ForwardAction::Drop(DropReason::NoBackupConfig);
                };
                if i == mark || pkt.tried_configs.contains(&i) {
                    return ForwardAction::Drop(DropReason::SecondFailureSameConfig);
                }
                pkt.config_mark = i;
                pkt.tried_configs.insert(i);
            }
            _ => return ForwardAction::Drop(DropReason::NoRoute),
        }
    }
    ForwardAction::Drop(DropReason::LoopDetected)
}

/// Routing state rebuilt after a failure was deemed permanent.
#[derive(Debug, Clone)]
pub struct Reconvergence {
    pub graph: Graph,
    pub configs: ConfigurationSet,
    pub tables: Vec<ForwardingTable>,
    /// The altered topology could not be protected: only the normal
    /// configuration was rebuilt.
    pub degraded: bool,
}

/// Rebuilds configurations and tables on `base` minus the failed
/// components. Falls back to an unprotected normal configuration when the
/// remaining topology is not bi-connected or cannot be covered. Returns
/// `None` if nothing of the topology survives.
pub fn reconverge(
    base: &Graph,
    down: &BTreeSet<FailedComponent>,
    count: ConfigCount,
) -> Option<Reconvergence> {
    let nodes: BTreeSet<NodeId> = down
        .iter()
        .filter_map(|c| match c {
            Component::Node(n) => Some(*n),
            Component::Link(_) => None,
        })
        .collect();
    let links: BTreeSet<LinkKey> = down
        .iter()
        .filter_map(|c| match c {
            Component::Link(k) => Some(*k),
            Component::Node(_) => None,
        })
        .collect();
    let graph = base.without(&nodes, &links)?;
    let protected = generate(&graph, count)
        .ok()
        .and_then(|cs| build_tables(&graph, &cs).ok().map(|t| (cs, t)));
    Some(match protected {
        Some((configs, tables)) => Reconvergence {
            graph,
            configs,
            tables,
            degraded: false,
        },
        None => {
            let configs = ConfigurationSet::unprotected(&graph);
            let tables = vec![build_table_partial(&graph, &configs.configs()[0])];
            Reconvergence {
                graph,
                configs,
                tables,
                degraded: true,
            }
        }
    })
}
