//! Scenario description: topology, protocol, timers, traffic and failures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configgen::ConfigCount;
use crate::forwarding::{Protocol, SimTime, Timers};
use crate::topology::{parse_topology, Component, Graph, LinkKey, NodeId, TopologyError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("flow {flow}: unknown node {node}")]
    UnknownNode { flow: usize, node: NodeId },
    #[error("failure {index}: unknown component {component}")]
    UnknownComponent { index: usize, component: Component },
    #[error("flow {0}: source and destination are the same node")]
    SelfFlow(usize),
    #[error("flow {0}: interval must be positive when count > 1")]
    ZeroInterval(usize),
    #[error("failure {0}: recovery must come after the failure")]
    RecoveryBeforeFailure(usize),
    #[error("failure {index}: overlaps an earlier failure of {component}")]
    OverlappingFailure { index: usize, component: Component },
    #[error("timers: {0}")]
    Timers(String),
    #[error("link_delay must be positive")]
    ZeroLinkDelay,
    #[error("hold_capacity must be positive")]
    ZeroHoldCapacity,
}

/// Constant-rate packet stream. Packet `k` is injected at
/// `start + k * interval` plus a uniform jitter in `[0, jitter]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flow {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(default)]
    pub start: SimTime,
    pub interval: SimTime,
    pub count: u64,
    #[serde(default)]
    pub jitter: SimTime,
}

/// One outage. `up_at = None` means the component never comes back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    #[serde(with = "component_spec")]
    pub component: Component,
    pub down_at: SimTime,
    #[serde(default)]
    pub up_at: Option<SimTime>,
}

/// Components are written `{"node": 5}` or `{"link": [4, 5]}` in scenario
/// files.
mod component_spec {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "lowercase", deny_unknown_fields)]
    enum Spec {
        Node(u32),
        Link([u32; 2]),
    }

    pub fn serialize<S: Serializer>(c: &Component, s: S) -> Result<S::Ok, S::Error> {
        match *c {
            Component::Node(n) => Spec::Node(n.0),
            Component::Link(LinkKey { lo, hi }) => Spec::Link([lo.0, hi.0]),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Component, D::Error> {
        Ok(match Spec::deserialize(d)? {
            Spec::Node(n) => Component::node(n),
            Spec::Link([a, b]) => Component::link(a, b),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum TopologySource {
    Path(PathBuf),
    Inline(serde_json::Value),
}

fn default_link_delay() -> SimTime {
    1_000
}

fn default_detection_delay() -> SimTime {
    10_000
}

fn default_hold_capacity() -> usize {
    64
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    topology: TopologySource,
    #[serde(default)]
    directed: bool,
    #[serde(default = "default_mode")]
    mode: Protocol,
    #[serde(default)]
    n: ConfigCount,
    #[serde(default)]
    timers: Timers,
    #[serde(default = "default_link_delay")]
    link_delay: SimTime,
    #[serde(default = "default_detection_delay")]
    detection_delay: SimTime,
    #[serde(default = "default_hold_capacity")]
    hold_capacity: usize,
    #[serde(default)]
    flows: Vec<Flow>,
    #[serde(default)]
    failures: Vec<Failure>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    horizon: Option<SimTime>,
}

fn default_mode() -> Protocol {
    Protocol::Emrc
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub graph: Graph,
    /// Topology file the graph was read from, if any.
    pub topology_path: Option<PathBuf>,
    pub mode: Protocol,
    pub n: ConfigCount,
    pub timers: Timers,
    /// Propagation delay of every link.
    pub link_delay: SimTime,
    /// Time from a component failing to its neighbors learning about it.
    pub detection_delay: SimTime,
    /// Packets buffered per router and failed component.
    pub hold_capacity: usize,
    pub flows: Vec<Flow>,
    pub failures: Vec<Failure>,
    /// Drives injection jitter.
    pub seed: u64,
    /// Events after this time are not processed.
    pub horizon: Option<SimTime>,
}

impl Scenario {
    /// A scenario on `graph` with default settings and no traffic.
    pub fn new(graph: Graph) -> Self {
        Scenario {
            graph,
            topology_path: None,
            mode: Protocol::Emrc,
            n: ConfigCount::Auto,
            timers: Timers::default(),
            link_delay: default_link_delay(),
            detection_delay: default_detection_delay(),
            hold_capacity: default_hold_capacity(),
            flows: Vec::new(),
            failures: Vec::new(),
            seed: 0,
            horizon: None,
        }
    }

    pub fn with_flow(
        mut self,
        src: u32,
        dst: u32,
        start: SimTime,
        interval: SimTime,
        count: u64,
    ) -> Self {
        self.flows.push(Flow {
            src: NodeId(src),
            dst: NodeId(dst),
            start,
            interval,
            count,
            jitter: 0,
        });
        self
    }

    pub fn with_failure(
        mut self,
        component: Component,
        down_at: SimTime,
        up_at: Option<SimTime>,
    ) -> Self {
        self.failures.push(Failure {
            component,
            down_at,
            up_at,
        });
        self
    }

    /// Parses a scenario document. Relative topology paths are resolved
    /// against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let mirror = !file.directed;
        let (graph, topology_path) = match file.topology {
            TopologySource::Path(p) => {
                let path = base_dir.join(p);
                let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                (parse_topology(&text, mirror)?, Some(path))
            }
            TopologySource::Inline(v) => (parse_topology(&v.to_string(), mirror)?, None),
        };
        let sc = Scenario {
            graph,
            topology_path,
            mode: file.mode,
            n: file.n,
            timers: file.timers,
            link_delay: file.link_delay,
            detection_delay: file.detection_delay,
            hold_capacity: file.hold_capacity,
            flows: file.flows,
            failures: file.failures,
            seed: file.seed,
            horizon: file.horizon,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.timers.validate().map_err(ScenarioError::Timers)?;
        if self.link_delay == 0 {
            return Err(ScenarioError::ZeroLinkDelay);
        }
        if self.hold_capacity == 0 {
            return Err(ScenarioError::ZeroHoldCapacity);
        }
        for (i, f) in self.flows.iter().enumerate() {
            for node in [f.src, f.dst] {
                if !self.graph.contains_node(node) {
                    return Err(ScenarioError::UnknownNode { flow: i, node });
                }
            }
            if f.src == f.dst {
                return Err(ScenarioError::SelfFlow(i));
            }
            if f.count > 1 && f.interval == 0 {
                return Err(ScenarioError::ZeroInterval(i));
            }
        }
        for (i, f) in self.failures.iter().enumerate() {
            if !f.component.exists_in(&self.graph) {
                return Err(ScenarioError::UnknownComponent {
                    index: i,
                    component: f.component,
                });
            }
            if matches!(f.up_at, Some(up) if up <= f.down_at) {
                return Err(ScenarioError::RecoveryBeforeFailure(i));
            }
            let overlaps = self.failures[..i].iter().any(|g| {
                g.component == f.component
                    && g.down_at <= f.up_at.unwrap_or(SimTime::MAX)
                    && f.down_at <= g.up_at.unwrap_or(SimTime::MAX)
            });
            if overlaps {
                return Err(ScenarioError::OverlappingFailure {
                    index: i,
                    component: f.component,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = r#"{"nodes": [0, 1, 2], "links": [
        {"from": 0, "to": 1, "weight": 1},
        {"from": 1, "to": 2, "weight": 1},
        {"from": 0, "to": 2, "weight": 1}]}"#;

    fn doc(extra: &str) -> String {
        format!(r#"{{"topology": {TRIANGLE}{extra}}}"#)
    }

    #[test]
    fn defaults_apply() {
        let sc = Scenario::from_json(&doc(""), Path::new(".")).unwrap();
        assert_eq!(sc.mode, Protocol::Emrc);
        assert_eq!(sc.n, ConfigCount::Auto);
        assert_eq!(sc.timers, Timers::default());
        assert_eq!(
            (sc.link_delay, sc.detection_delay, sc.hold_capacity),
            (1_000, 10_000, 64)
        );
        assert_eq!(sc.graph.node_count(), 3);
        assert_eq!(sc.graph.link_count(), 6);
    }

    #[test]
    fn full_document() {
        let sc = Scenario::from_json(
            &doc(r#", "mode": "mrc", "n": 2, "seed": 7,
                "timers": {"t_slot": 5, "t_probe": 6, "t_reconv": 100},
                "flows": [{"src": 0, "dst": 2, "interval": 10, "count": 3, "jitter": 2}],
                "failures": [{"component": {"link": [2, 1]}, "down_at": 4, "up_at": 9},
                             {"component": {"node": 0}, "down_at": 20}]"#),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(sc.mode, Protocol::Mrc);
        assert_eq!(sc.n, ConfigCount::Fixed(2));
        assert_eq!(sc.flows[0].jitter, 2);
        assert_eq!(sc.failures[0].component, Component::link(1, 2));
        assert_eq!(sc.failures[1].up_at, None);
    }

    #[test]
    fn rejects_bad_references() {
        let e = Scenario::from_json(
            &doc(r#", "flows": [{"src": 0, "dst": 9, "interval": 1, "count": 1}]"#),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(
            e,
            ScenarioError::UnknownNode {
                node: NodeId(9),
                ..
            }
        ));

        let e = Scenario::from_json(
            &doc(r#", "failures": [{"component": {"link": [0, 7]}, "down_at": 1}]"#),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(e, ScenarioError::UnknownComponent { .. }));

        let e = Scenario::from_json(
            &doc(r#", "failures": [{"component": {"node": 1}, "down_at": 5, "up_at": 5}]"#),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(e, ScenarioError::RecoveryBeforeFailure(0)));

        let e = Scenario::from_json(
            &doc(r#", "failures": [{"component": {"node": 1}, "down_at": 5},
                                  {"component": {"node": 1}, "down_at": 50, "up_at": 60}]"#),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(
            e,
            ScenarioError::OverlappingFailure { index: 1, .. }
        ));

        let e = Scenario::from_json(&doc(r#", "bogus": 1"#), Path::new(".")).unwrap_err();
        assert!(matches!(e, ScenarioError::Json(_)));

        let e = Scenario::from_json(
            &doc(r#", "timers": {"t_slot": 10, "t_probe": 1, "t_reconv": 10}"#),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(e, ScenarioError::Timers(_)));
    }

    #[test]
    fn topology_path_is_relative_to_scenario() {
        let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
        let sc = Scenario::from_json(r#"{"topology": "figure3.topo"}"#, &base).unwrap();
        assert_eq!(sc.graph.node_count(), 8);
        assert!(sc.topology_path.unwrap().ends_with("figure3.topo"));

        let e = Scenario::from_json(r#"{"topology": "missing.topo"}"#, &base).unwrap_err();
        assert!(matches!(e, ScenarioError::Io { .. }));
    }
}
