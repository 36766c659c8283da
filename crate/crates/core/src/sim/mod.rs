//! Deterministic discrete-event simulator.
//!
//! Time is an integer tick count and events are processed in
//! `(time, insertion order)` order, so a scenario and its seed fully
//! determine the result. Routers process packets instantly; only links
//! (`link_delay`) and failure detection (`detection_delay`) take time.
//!
//! Failure model:
//! * When a component dies, packets on an affected link are returned to
//!   the sending router. A router that forwards toward a dead neighbor
//!   before it has learned of the failure keeps the packet queued on that
//!   interface until detection (or recovery).
//! * Neighbors of the component learn of the failure `detection_delay`
//!   after it happens, and learn the failed component exactly.
//! * Probes for a failed link are one-hop hellos. Probes for a failed node
//!   are routed in the backup configuration that isolates it and are
//!   answered only if the node and the route are up when they arrive.
//! * When a router's re-convergence deadline fires, every router switches
//!   to tables built on the topology minus all components down at that
//!   moment. When an excluded component recovers, the tables are rebuilt
//!   again `detection_delay` later.

mod scenario;

pub use scenario::{Failure, Flow, Scenario, ScenarioError};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configgen::{generate, ConfigError, ConfigurationSet};
use crate::forwarding::{
    self, on_packet, DropReason, ForwardAction, Mode, ModeKind, Packet, Protocol, RouterState,
    SimTime, TimerRequest,
};
use crate::metrics::{summarize, Summary};
use crate::routing::{build_tables, shortest_path, ForwardingTable, RoutingError};
use crate::topology::{Component, Graph, LinkKey, NodeId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

/// Network condition when a packet was injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// No failure has happened yet.
    PreFailure,
    /// At least one component is down.
    DuringFailure,
    /// Every failed component has come back.
    PostRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Delivered {
        at: SimTime,
    },
    Dropped {
        reason: DropReason,
        at: SimTime,
    },
    /// Still queued or on a link when the run ended.
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub seq: u64,
    pub flow: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub injected_at: SimTime,
    pub outcome: Outcome,
    /// Nodes reached, starting with the source.
    pub path: Vec<NodeId>,
    /// Configuration mark used on each link crossed.
    pub marks: Vec<usize>,
    /// Time the packet reached each node of `path`.
    pub hop_times: Vec<SimTime>,
    pub phase: Phase,
}

impl PacketRecord {
    pub fn delivered_at(&self) -> Option<SimTime> {
        match self.outcome {
            Outcome::Delivered { at } => Some(at),
            _ => None,
        }
    }

    pub fn drop_reason(&self) -> Option<DropReason> {
        match self.outcome {
            Outcome::Dropped { reason, .. } => Some(reason),
            _ => None,
        }
    }

    pub fn latency(&self) -> Option<SimTime> {
        self.delivered_at().map(|t| t - self.injected_at)
    }

    pub fn hop_count(&self) -> usize {
        self.marks.len()
    }
}

/// A router changed mode for a component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub at: SimTime,
    pub node: NodeId,
    pub component: Component,
    pub from: ModeKind,
    pub to: ModeKind,
}

/// Tables were rebuilt without `excluded`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconvergenceRecord {
    pub at: SimTime,
    pub excluded: Vec<Component>,
    /// The remaining topology could not be protected.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub records: Vec<PacketRecord>,
    pub transitions: Vec<Transition>,
    pub reconvergences: Vec<ReconvergenceRecord>,
    pub summary: Summary,
}

/// Runs the scenario with its own protocol setting.
pub fn run(sc: &Scenario) -> Result<SimResult, SimError> {
    run_mode(sc, sc.mode)
}

/// Runs the scenario with `mode` in place of `sc.mode`.
pub fn run_mode(sc: &Scenario, mode: Protocol) -> Result<SimResult, SimError> {
    sc.validate()?;
    let cs = generate(&sc.graph, sc.n)?;
    let tables = build_tables(&sc.graph, &cs)?;
    Ok(Engine::new(sc, mode, cs, tables).run())
}

/// Runs the scenario once per protocol, in parallel. Returns `(mrc, emrc)`.
pub fn run_comparison(sc: &Scenario) -> Result<(SimResult, SimResult), SimError> {
    let (mrc, emrc) = std::thread::scope(|s| {
        let mrc = s.spawn(|| run_mode(sc, Protocol::Mrc));
        let emrc = run_mode(sc, Protocol::Emrc);
        (mrc.join().expect("simulation thread panicked"), emrc)
    });
    Ok((mrc?, emrc?))
}

#[derive(Debug, Clone)]
enum Event {
    Inject(usize),
    Arrive {
        pkt: usize,
        token: u64,
    },
    Down(Component),
    Up(Component),
    Detect {
        router: NodeId,
        component: Component,
        generation: u64,
    },
    TimeslotExpire {
        router: NodeId,
        component: Component,
    },
    ProbeSend {
        router: NodeId,
        component: Component,
    },
    ProbeArrive {
        router: NodeId,
        component: Component,
        route: Vec<NodeId>,
    },
    ProbeReply {
        router: NodeId,
        component: Component,
    },
    ReconvergenceDeadline {
        router: NodeId,
        component: Component,
    },
    Reconverge,
}

struct Slot {
    pkt: Packet,
    record: PacketRecord,
    /// Invalidates the pending arrival when a packet is pulled off a link.
    token: u64,
    epoch: u64,
    done: bool,
}

struct Engine<'a> {
    sc: &'a Scenario,
    now: SimTime,
    queue: BTreeMap<(SimTime, u64), Event>,
    next_seq: u64,
    /// Topology the current tables were built on.
    graph: Graph,
    cs: ConfigurationSet,
    tables: Vec<ForwardingTable>,
    /// Incremented whenever the tables are rebuilt.
    epoch: u64,
    /// Components left out of the current tables.
    excluded: BTreeSet<Component>,
    /// Ground truth: components currently down, with a failure generation.
    down: BTreeMap<Component, u64>,
    generation: u64,
    failures_seen: usize,
    routers: BTreeMap<NodeId, RouterState>,
    slots: Vec<Slot>,
    /// Packets on a link: `pkt -> (from, to)`.
    in_flight: BTreeMap<usize, (NodeId, NodeId)>,
    /// Packets waiting at a router because of a component.
    parked: BTreeMap<(NodeId, Component), VecDeque<usize>>,
    transitions: Vec<Transition>,
    reconvergences: Vec<ReconvergenceRecord>,
}

type ModeSnapshot = BTreeMap<Component, ModeKind>;

impl<'a> Engine<'a> {
    fn new(
        sc: &'a Scenario,
        mode: Protocol,
        cs: ConfigurationSet,
        tables: Vec<ForwardingTable>,
    ) -> Self {
        let routers = sc
            .graph
            .nodes()
            .map(|n| (n, RouterState::new(n, mode, sc.timers)))
            .collect();
        let mut engine = Engine {
            sc,
            now: 0,
            queue: BTreeMap::new(),
            next_seq: 0,
            graph: sc.graph.clone(),
            cs,
            tables,
            epoch: 0,
            excluded: BTreeSet::new(),
            down: BTreeMap::new(),
            generation: 0,
            failures_seen: 0,
            routers,
            slots: Vec::new(),
            in_flight: BTreeMap::new(),
            parked: BTreeMap::new(),
            transitions: Vec::new(),
            reconvergences: Vec::new(),
        };
        for f in &sc.failures {
            engine.schedule(f.down_at, Event::Down(f.component));
            if let Some(up) = f.up_at {
                engine.schedule(up, Event::Up(f.component));
            }
        }
        for (seq, (at, flow)) in injection_times(sc).into_iter().enumerate() {
            let f = &sc.flows[flow];
            engine.slots.push(Slot {
                pkt: Packet::new(seq as u64, f.src, f.dst),
                record: PacketRecord {
                    seq: seq as u64,
                    flow,
                    src: f.src,
                    dst: f.dst,
                    injected_at: at,
                    outcome: Outcome::InFlight,
                    path: vec![f.src],
                    marks: Vec::new(),
                    hop_times: vec![at],
                    phase: Phase::PreFailure,
                },
                token: 0,
                epoch: 0,
                done: false,
            });
            engine.schedule(at, Event::Inject(seq));
        }
        engine
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.queue.insert((at, self.next_seq), ev);
        self.next_seq += 1;
    }

    fn run(mut self) -> SimResult {
        while let Some(((at, _), ev)) = self.queue.pop_first() {
            if self.sc.horizon.is_some_and(|h| at > h) {
                break;
            }
            assert!(at >= self.now, "event at {at} processed after {}", self.now);
            self.now = at;
            self.handle(ev);
        }
        let records: Vec<PacketRecord> = self.slots.into_iter().map(|s| s.record).collect();
        let summary = summarize(&records);
        SimResult {
            records,
            transitions: self.transitions,
            reconvergences: self.reconvergences,
            summary,
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Inject(i) => self.inject(i),
            Event::Arrive { pkt, token } => self.arrive(pkt, token),
            Event::Down(c) => self.component_down(c),
            Event::Up(c) => self.component_up(c),
            Event::Detect {
                router,
                component,
                generation,
            } => {
                if self.down.get(&component) == Some(&generation) && self.alive(router) {
                    let now = self.now;
                    self.with_router(router, |st, cs| st.detect(component, now, cs));
                    self.release(router, component);
                }
            }
            Event::TimeslotExpire { router, component } => {
                let due = matches!(
                    self.routers[&router].mode(component),
                    Some(&Mode::TimeslotWait { deadline, .. }) if deadline == self.now
                );
                if due && self.alive(router) {
                    let live = self.is_live(component);
                    let now = self.now;
                    self.with_router(router, |st, cs| {
                        st.on_timeslot_expired(component, live, now, cs)
                    });
                    self.release(router, component);
                }
            }
            Event::ProbeSend { router, component } => self.probe_send(router, component),
            Event::ProbeArrive {
                router,
                component,
                route,
            } => {
                let reachable = route.windows(2).all(|w| self.usable(w[0], w[1]));
                if reachable {
                    let back = self.now + self.sc.link_delay * (route.len() as u64 - 1);
                    self.schedule(back, Event::ProbeReply { router, component });
                }
            }
            Event::ProbeReply { router, component } => {
                if self.alive(router) {
                    self.with_router(router, |st, _| st.on_probe_reply(component));
                }
            }
            Event::ReconvergenceDeadline { router, component } => {
                if self.alive(router) {
                    let now = self.now;
                    let fired = self
                        .with_router(router, |st, _| st.on_reconvergence_deadline(component, now));
                    if fired.is_some() {
                        self.reconverge();
                    }
                }
            }
            Event::Reconverge => {
                let down: BTreeSet<Component> = self.down.keys().copied().collect();
                if down != self.excluded {
                    self.reconverge();
                }
            }
        }
    }

    fn alive(&self, n: NodeId) -> bool {
        !self.down.contains_key(&Component::Node(n))
    }

    fn usable(&self, u: NodeId, v: NodeId) -> bool {
        self.sc.graph.has_link(u, v)
            && self.alive(u)
            && self.alive(v)
            && !self.down.contains_key(&Component::Link(LinkKey::new(u, v)))
    }

    fn is_live(&self, c: Component) -> bool {
        match c {
            Component::Node(n) => self.alive(n),
            Component::Link(k) => self.usable(k.lo, k.hi),
        }
    }

    /// The component that actually makes `u -> v` unusable.
    fn fault(&self, u: NodeId, v: NodeId) -> Component {
        if self.alive(v) {
            Component::Link(LinkKey::new(u, v))
        } else {
            Component::Node(v)
        }
    }

    fn snapshot(&self, r: NodeId) -> ModeSnapshot {
        self.routers[&r]
            .modes()
            .map(|(c, m)| (c, ModeKind::from(Some(m))))
            .collect()
    }

    /// Applies `f` to router `r`, then logs mode changes and schedules the
    /// timers it asked for.
    fn with_router<R>(
        &mut self,
        r: NodeId,
        f: impl FnOnce(&mut RouterState, &ConfigurationSet) -> R,
    ) -> R {
        let before = self.snapshot(r);
        let st = self.routers.get_mut(&r).expect("router exists");
        let out = f(st, &self.cs);
        self.after_router_change(r, before);
        out
    }

    fn after_router_change(&mut self, r: NodeId, before: ModeSnapshot) {
        let after = self.snapshot(r);
        let keys: BTreeSet<Component> = before.keys().chain(after.keys()).copied().collect();
        for c in keys {
            let from = before.get(&c).copied().unwrap_or(ModeKind::Normal);
            let to = after.get(&c).copied().unwrap_or(ModeKind::Normal);
            if from != to {
                self.transitions.push(Transition {
                    at: self.now,
                    node: r,
                    component: c,
                    from,
                    to,
                });
            }
        }
        let timers = self
            .routers
            .get_mut(&r)
            .expect("router exists")
            .take_timers();
        for t in timers {
            match t {
                TimerRequest::TimeslotExpire { component, at } => self.schedule(
                    at,
                    Event::TimeslotExpire {
                        router: r,
                        component,
                    },
                ),
                TimerRequest::ProbeSend { component, at } => self.schedule(
                    at,
                    Event::ProbeSend {
                        router: r,
                        component,
                    },
                ),
                TimerRequest::ReconvergenceDeadline { component, at } => self.schedule(
                    at,
                    Event::ReconvergenceDeadline {
                        router: r,
                        component,
                    },
                ),
            }
        }
    }

    fn finish(&mut self, i: usize, outcome: Outcome) {
        let slot = &mut self.slots[i];
        slot.record.outcome = outcome;
        slot.done = true;
    }

    fn inject(&mut self, i: usize) {
        self.slots[i].record.phase = if !self.down.is_empty() {
            Phase::DuringFailure
        } else if self.failures_seen > 0 {
            Phase::PostRecovery
        } else {
            Phase::PreFailure
        };
        let src = self.slots[i].pkt.src;
        if self.alive(src) {
            self.process(i, src);
        } else {
            let at = self.now;
            self.finish(
                i,
                Outcome::Dropped {
                    reason: DropReason::SourceDown,
                    at,
                },
            );
        }
    }

    fn arrive(&mut self, i: usize, token: u64) {
        if self.slots[i].token != token || self.slots[i].done {
            return;
        }
        let (_, to) = self.in_flight.remove(&i).expect("packet on a link");
        let now = self.now;
        let rec = &mut self.slots[i].record;
        rec.path.push(to);
        rec.hop_times.push(now);
        self.process(i, to);
    }

    /// Router `r` handles packet `i`.
    fn process(&mut self, i: usize, r: NodeId) {
        let now = self.now;
        if self.slots[i].epoch != self.epoch {
            self.slots[i].epoch = self.epoch;
            self.slots[i].pkt.reset_marking();
        }
        let before = self.snapshot(r);
        let st = self.routers.get_mut(&r).expect("router exists");
        let status = st.neighbor_status();
        let action = on_packet(
            st,
            &mut self.slots[i].pkt,
            &self.tables,
            &self.cs,
            &status,
            now,
        );
        self.after_router_change(r, before);
        match action {
            ForwardAction::DeliverLocal => self.finish(i, Outcome::Delivered { at: now }),
            ForwardAction::Drop(reason) => self.finish(i, Outcome::Dropped { reason, at: now }),
            ForwardAction::Hold { component, .. } => self.park(r, component, i),
            ForwardAction::Forward { next, mark } => {
                if self.usable(r, next) {
                    self.send(i, r, next, mark);
                } else {
                    // Not yet detected by this router: wait on the interface.
                    let fault = self.fault(r, next);
                    self.park(r, fault, i);
                }
            }
        }
    }

    fn send(&mut self, i: usize, from: NodeId, to: NodeId, mark: usize) {
        let slot = &mut self.slots[i];
        slot.pkt.hops.push((from, mark));
        slot.record.marks.push(mark);
        slot.token += 1;
        let token = slot.token;
        self.in_flight.insert(i, (from, to));
        self.schedule(
            self.now + self.sc.link_delay,
            Event::Arrive { pkt: i, token },
        );
    }

    fn park(&mut self, r: NodeId, c: Component, i: usize) {
        let q = self.parked.entry((r, c)).or_default();
        let evicted = if q.len() >= self.sc.hold_capacity {
            q.pop_front()
        } else {
            None
        };
        q.push_back(i);
        if let Some(old) = evicted {
            let at = self.now;
            self.finish(
                old,
                Outcome::Dropped {
                    reason: DropReason::HoldOverflow,
                    at,
                },
            );
        }
    }

    /// Re-processes every packet parked at `r` for `c`, in arrival order.
    fn release(&mut self, r: NodeId, c: Component) {
        if let Some(q) = self.parked.remove(&(r, c)) {
            for i in q {
                self.process(i, r);
            }
        }
    }

    fn component_down(&mut self, c: Component) {
        self.failures_seen += 1;
        self.generation += 1;
        let generation = self.generation;
        self.down.insert(c, generation);

        if let Component::Node(v) = c {
            self.with_router(v, |st, _| st.reset());
            let lost: Vec<(NodeId, Component)> = self
                .parked
                .keys()
                .filter(|(r, _)| *r == v)
                .copied()
                .collect();
            for key in lost {
                for i in self.parked.remove(&key).unwrap_or_default() {
                    let at = self.now;
                    self.finish(
                        i,
                        Outcome::Dropped {
                            reason: DropReason::NodeDown,
                            at,
                        },
                    );
                }
            }
        }

        let pulled: Vec<(usize, NodeId)> = self
            .in_flight
            .iter()
            .filter(|(_, &(from, to))| self.alive(from) && !self.usable(from, to))
            .map(|(&i, &(from, _))| (i, from))
            .collect();
        for &(i, _) in &pulled {
            self.in_flight.remove(&i);
            let slot = &mut self.slots[i];
            slot.token += 1;
            slot.pkt.hops.pop();
            slot.record.marks.pop();
        }

        let when = self.now + self.sc.detection_delay;
        for router in self.observers(c) {
            if self.alive(router) {
                self.schedule(
                    when,
                    Event::Detect {
                        router,
                        component: c,
                        generation,
                    },
                );
            }
        }

        for (i, from) in pulled {
            self.process(i, from);
        }
    }

    /// Routers adjacent to `c`.
    fn observers(&self, c: Component) -> Vec<NodeId> {
        match c {
            Component::Node(v) => self.sc.graph.neighbors(v).iter().map(|&(u, _)| u).collect(),
            Component::Link(k) => vec![k.lo, k.hi],
        }
    }

    fn component_up(&mut self, c: Component) {
        self.down.remove(&c);
        let when = self.now + self.sc.detection_delay;

        if let Component::Node(v) = c {
            // A restarted router learns the state of its own links.
            let mut seen = Vec::new();
            for &(u, _) in self.sc.graph.neighbors(v) {
                let fault = if self.alive(u) {
                    Component::Link(LinkKey::new(u, v))
                } else {
                    Component::Node(u)
                };
                if let Some(&generation) = self.down.get(&fault) {
                    seen.push((fault, generation));
                }
            }
            for (component, generation) in seen {
                self.schedule(
                    when,
                    Event::Detect {
                        router: v,
                        component,
                        generation,
                    },
                );
            }
        }

        // Interfaces that were waiting for detection can send again.
        let waiting: Vec<(NodeId, Component)> = self
            .parked
            .keys()
            .filter(|&&(r, pc)| self.routers[&r].mode(pc).is_none())
            .copied()
            .collect();
        for (r, pc) in waiting {
            self.release(r, pc);
        }

        if self.excluded.contains(&c) {
            self.schedule(when, Event::Reconverge);
        }
    }

    fn probe_send(&mut self, router: NodeId, component: Component) {
        let config = match self.routers[&router].mode(component) {
            Some(&Mode::BackupActive {
                config,
                next_probe_at: Some(at),
                ..
            }) if at == self.now => config,
            _ => return,
        };
        if !self.alive(router) {
            return;
        }
        let now = self.now;
        if !self.with_router(router, |st, _| st.on_probe_send(component, now)) {
            return;
        }
        let route = match component {
            Component::Link(k) => vec![router, k.other(router)],
            Component::Node(v) => config
                .and_then(|i| self.cs.get(i))
                .filter(|c| c.nodes().contains(&router) && c.nodes().contains(&v))
                .and_then(|c| shortest_path(&self.graph, c, router, v).ok())
                .map(|p| p.nodes)
                .unwrap_or_else(|| vec![router, v]),
        };
        let arrive = self.now + self.sc.link_delay * (route.len() as u64 - 1);
        self.schedule(
            arrive,
            Event::ProbeArrive {
                router,
                component,
                route,
            },
        );
    }

    /// Rebuilds the tables without every component currently down and moves
    /// all routers onto them.
    fn reconverge(&mut self) {
        let down: BTreeSet<Component> = self.down.keys().copied().collect();
        if down != self.excluded {
            if let Some(r) = forwarding::reconverge(&self.sc.graph, &down, self.sc.n) {
                self.graph = r.graph;
                self.cs = r.configs;
                self.tables = r.tables;
                self.excluded = down.clone();
                self.epoch += 1;
                self.reconvergences.push(ReconvergenceRecord {
                    at: self.now,
                    excluded: down.iter().copied().collect(),
                    degraded: r.degraded,
                });
            }
        }
        let routers: Vec<NodeId> = self.routers.keys().copied().collect();
        for r in routers {
            if self.alive(r) {
                self.with_router(r, |st, _| st.apply_reconvergence(&down));
            }
        }
        let keys: Vec<(NodeId, Component)> = self.parked.keys().copied().collect();
        for (r, c) in keys {
            self.release(r, c);
        }
    }
}

/// Injection times of every packet, ordered by `(time, flow, index)`.
fn injection_times(sc: &Scenario) -> Vec<(SimTime, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut out = Vec::new();
    for (fi, f) in sc.flows.iter().enumerate() {
        for k in 0..f.count {
            let jitter = if f.jitter > 0 {
                rng.gen_range(0..=f.jitter)
            } else {
                0
            };
            out.push((f.start + k * f.interval + jitter, fi, k));
        }
    }
    out.sort_unstable();
    out.into_iter().map(|(t, fi, _)| (t, fi)).collect()
}
