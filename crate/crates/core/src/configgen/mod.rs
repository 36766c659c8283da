//! Backup configuration generation.
//!
//! A configuration is the topology with an alternative weight function. In
//! backup configuration `C_i` a set of nodes `S_i` is isolated: all their
//! attached links get at least the restricted weight, so they never carry
//! transit traffic. Some links are isolated outright (infinite weight). Every
//! node and every link is isolated in exactly one backup configuration, so a
//! router that sees a component fail can always find a configuration in
//! which that component is unused.

mod oracle;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Component, Graph, LinkKey, NodeId};

pub use oracle::oracle_validate;

/// Weight class of one directed link in one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightClass {
    Normal(u32),
    /// Finite but larger than any all-normal path.
    Restricted,
    /// Infinite: never used for forwarding.
    Isolated,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("topology is not bi-connected")]
    NotBiconnected,
    #[error("at least one backup configuration is required")]
    ZeroConfigurations,
    #[error("{component} cannot be isolated in any of {n} configurations")]
    InsufficientConfigurations { n: usize, component: Component },
    #[error("backbone of configuration {index} is disconnected")]
    DisconnectedBackbone { index: usize },
    #[error("malformed configuration document: {0}")]
    Format(String),
}

/// How many backup configurations to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfigCount {
    /// Smallest count in `1..=|N|` for which generation succeeds.
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for ConfigCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigCount::Auto => f.write_str("auto"),
            ConfigCount::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for ConfigCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ConfigCount::Auto);
        }
        s.parse::<usize>()
            .map(ConfigCount::Fixed)
            .map_err(|_| format!("expected a count or 'auto', got '{s}'"))
    }
}

impl Serialize for ConfigCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ConfigCount::Auto => s.serialize_str("auto"),
            ConfigCount::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ConfigCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(ConfigCount::Fixed(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One weight assignment over the topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    index: usize,
    w_r: u64,
    weights: BTreeMap<(NodeId, NodeId), WeightClass>,
    isolated_nodes: BTreeSet<NodeId>,
    isolated_links: BTreeSet<LinkKey>,
}

impl Configuration {
    /// The normal configuration: every link keeps its normal weight.
    pub fn normal(g: &Graph, w_r: u64) -> Self {
        Self::with_isolation(g, 0, w_r, BTreeSet::new(), BTreeSet::new())
    }

    /// Derives the weight function from the isolated node and link sets.
    /// Links in `isolated_links` become [`WeightClass::Isolated`]; remaining
    /// links touching an isolated node become [`WeightClass::Restricted`].
    pub fn with_isolation(
        g: &Graph,
        index: usize,
        w_r: u64,
        isolated_nodes: BTreeSet<NodeId>,
        isolated_links: BTreeSet<LinkKey>,
    ) -> Self {
        let weights = g
            .links()
            .map(|l| {
                let class = if isolated_links.contains(&LinkKey::new(l.from, l.to)) {
                    WeightClass::Isolated
                } else if isolated_nodes.contains(&l.from) || isolated_nodes.contains(&l.to) {
                    WeightClass::Restricted
                } else {
                    WeightClass::Normal(l.weight)
                };
                ((l.from, l.to), class)
            })
            .collect();
        Configuration {
            index,
            w_r,
            weights,
            isolated_nodes,
            isolated_links,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn restricted_weight(&self) -> u64 {
        self.w_r
    }

    pub fn isolated_nodes(&self) -> &BTreeSet<NodeId> {
        &self.isolated_nodes
    }

    pub fn isolated_links(&self) -> &BTreeSet<LinkKey> {
        &self.isolated_links
    }

    pub fn is_isolated(&self, n: NodeId) -> bool {
        self.isolated_nodes.contains(&n)
    }

    /// Whether the component carries no transit traffic in this configuration.
    pub fn isolates(&self, c: Component) -> bool {
        match c {
            Component::Node(n) => self.is_isolated(n),
            Component::Link(k) => self.isolated_links.contains(&k),
        }
    }

    pub fn class(&self, u: NodeId, v: NodeId) -> Option<WeightClass> {
        self.weights.get(&(u, v)).copied()
    }

    /// Finite link cost, or `None` for isolated and absent links.
    pub fn cost(&self, u: NodeId, v: NodeId) -> Option<u64> {
        match self.class(u, v)? {
            WeightClass::Normal(w) => Some(u64::from(w)),
            WeightClass::Restricted => Some(self.w_r),
            WeightClass::Isolated => None,
        }
    }

    /// Directed links and their classes, sorted.
    pub fn weights(&self) -> impl Iterator<Item = ((NodeId, NodeId), WeightClass)> + '_ {
        self.weights.iter().map(|(&k, &c)| (k, c))
    }

    /// Every node the weight function mentions.
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.weights.keys().flat_map(|&(u, v)| [u, v]).collect()
    }

    /// Structural rules every configuration must satisfy: links of isolated
    /// nodes are never normal, every isolated node keeps at least one
    /// restricted link, and restricted/isolated classes are symmetric.
    pub fn structural_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (&(u, v), &c) in &self.weights {
            let rev = self.weights.get(&(v, u)).copied();
            let symmetric = match c {
                WeightClass::Normal(_) => matches!(rev, Some(WeightClass::Normal(_))),
                other => rev == Some(other),
            };
            if !symmetric {
                out.push(format!("link ({u},{v}) class differs from its reverse"));
            }
            if (self.is_isolated(u) || self.is_isolated(v)) && matches!(c, WeightClass::Normal(_)) {
                out.push(format!(
                    "link ({u},{v}) touches an isolated node but is normal"
                ));
            }
        }
        for &s in &self.isolated_nodes {
            let has_restricted = self
                .weights
                .iter()
                .any(|(&(u, _), &c)| u == s && c == WeightClass::Restricted);
            if !has_restricted {
                out.push(format!("isolated node {s} has no restricted link"));
            }
        }
        if self.index == 0 && (!self.isolated_nodes.is_empty() || !self.isolated_links.is_empty()) {
            out.push("normal configuration isolates components".to_string());
        }
        out
    }
}

/// The normal configuration followed by `n` backup configurations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigurationSet {
    w_r: u64,
    configs: Vec<Configuration>,
}

impl ConfigurationSet {
    /// Assembles a set from already-built configurations. `configs[0]` must
    /// be the normal configuration.
    pub fn from_parts(w_r: u64, configs: Vec<Configuration>) -> Self {
        ConfigurationSet { w_r, configs }
    }

    /// A set holding only the normal configuration (no protection).
    pub fn unprotected(g: &Graph) -> Self {
        let w_r = restricted_weight(g);
        ConfigurationSet {
            w_r,
            configs: vec![Configuration::normal(g, w_r)],
        }
    }

    pub fn restricted_weight(&self) -> u64 {
        self.w_r
    }

    /// Number of backup configurations.
    pub fn backup_count(&self) -> usize {
        self.configs.len().saturating_sub(1)
    }

    pub fn configs(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn get(&self, i: usize) -> Option<&Configuration> {
        self.configs.get(i)
    }

    pub fn backups(&self) -> &[Configuration] {
        self.configs.get(1..).unwrap_or(&[])
    }

    /// Index of the backup configuration isolating `c`, if any.
    pub fn isolating(&self, c: Component) -> Option<usize> {
        self.backups()
            .iter()
            .find(|cfg| cfg.isolates(c))
            .map(Configuration::index)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = SetDoc {
            w_r: self.w_r,
            configs: self
                .configs
                .iter()
                .map(|c| ConfigDoc {
                    index: c.index,
                    isolated_nodes: c.isolated_nodes.iter().map(|n| n.0).collect(),
                    isolated_links: c.isolated_links.iter().map(|k| [k.lo.0, k.hi.0]).collect(),
                    weights: c
                        .weights
                        .iter()
                        .map(|(&(u, v), &class)| {
                            let (name, weight) = match class {
                                WeightClass::Normal(w) => ("normal", Some(w)),
                                WeightClass::Restricted => ("restricted", None),
                                WeightClass::Isolated => ("isolated", None),
                            };
                            WeightDoc {
                                from: u.0,
                                to: v.0,
                                class: name.to_string(),
                                weight,
                            }
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("plain data")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: SetDoc =
            serde_json::from_str(text).map_err(|e| ConfigError::Format(e.to_string()))?;
        let mut configs = Vec::with_capacity(doc.configs.len());
        for (pos, c) in doc.configs.into_iter().enumerate() {
            if c.index != pos {
                return Err(ConfigError::Format(format!(
                    "configuration at position {pos} has index {}",
                    c.index
                )));
            }
            let mut weights = BTreeMap::new();
            for w in c.weights {
                let class = match (w.class.as_str(), w.weight) {
                    ("normal", Some(x)) if x > 0 => WeightClass::Normal(x),
                    ("restricted", _) => WeightClass::Restricted,
                    ("isolated", _) => WeightClass::Isolated,
                    (other, _) => {
                        return Err(ConfigError::Format(format!("bad weight class '{other}'")))
                    }
                };
                weights.insert((NodeId(w.from), NodeId(w.to)), class);
            }
            configs.push(Configuration {
                index: c.index,
                w_r: doc.w_r,
                weights,
                isolated_nodes: c.isolated_nodes.into_iter().map(NodeId).collect(),
                isolated_links: c
                    .isolated_links
                    .into_iter()
                    .map(|[a, b]| LinkKey::new(NodeId(a), NodeId(b)))
                    .collect(),
            });
        }
        if configs.is_empty() {
            return Err(ConfigError::Format("no configurations".into()));
        }
        Ok(ConfigurationSet {
            w_r: doc.w_r,
            configs,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SetDoc {
    w_r: u64,
    configs: Vec<ConfigDoc>,
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    index: usize,
    isolated_nodes: Vec<u32>,
    isolated_links: Vec<[u32; 2]>,
    weights: Vec<WeightDoc>,
}

#[derive(Serialize, Deserialize)]
struct WeightDoc {
    from: u32,
    to: u32,
    class: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    weight: Option<u32>,
}

/// `W_r = 1 + sum of all normal weights`: any all-normal path is cheaper
/// than a single restricted link.
pub fn restricted_weight(g: &Graph) -> u64 {
    1 + g.total_weight()
}

/// Generates `n` backup configurations.
///
/// Nodes are visited in descending degree order (ties by id). Node number
/// `k` in that order tries configurations starting at `k mod n` and
/// rotating. A node is accepted into a configuration when, with one of its
/// not-yet-isolated links also isolated (lowest key first, falling back to
/// none), the backbone stays connected and every isolated node keeps a
/// non-isolated link into the backbone. Links never isolated by the node
/// pass are then placed round-robin wherever the same test holds.
///
/// If the `n`-configuration pass fails but a smaller count works, the result
/// for the smaller count is returned with the extra configurations left
/// empty, so success for `n` implies success for `n + 1`.
pub fn generate_configs(g: &Graph, n: usize) -> Result<ConfigurationSet, ConfigError> {
    if n == 0 {
        return Err(ConfigError::ZeroConfigurations);
    }
    if !g.is_biconnected() {
        return Err(ConfigError::NotBiconnected);
    }
    let first_err = match greedy(g, n) {
        Ok(sets) => return Ok(assemble(g, sets, n)),
        Err(e) => e,
    };
    for m in (1..n).rev() {
        if let Ok(sets) = greedy(g, m) {
            return Ok(assemble(g, sets, n));
        }
    }
    Err(first_err)
}

/// Generates the smallest number of configurations in `1..=|N|` that works.
pub fn generate_configs_auto(g: &Graph) -> Result<ConfigurationSet, ConfigError> {
    if !g.is_biconnected() {
        return Err(ConfigError::NotBiconnected);
    }
    let max = g.node_count().max(1);
    let mut last = None;
    for m in 1..=max {
        match greedy(g, m) {
            Ok(sets) => return Ok(assemble(g, sets, m)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn generate(g: &Graph, count: ConfigCount) -> Result<ConfigurationSet, ConfigError> {
    match count {
        ConfigCount::Auto => generate_configs_auto(g),
        ConfigCount::Fixed(n) => generate_configs(g, n),
    }
}

#[derive(Default, Clone)]
struct Slot {
    nodes: BTreeSet<NodeId>,
    links: BTreeSet<LinkKey>,
}

fn greedy(g: &Graph, n: usize) -> Result<Vec<Slot>, ConfigError> {
    let mut slots = vec![Slot::default(); n];
    let mut owned: BTreeSet<LinkKey> = BTreeSet::new();

    let mut order: Vec<NodeId> = g.nodes().collect();
    order.sort_by_key(|&u| (std::cmp::Reverse(g.degree(u)), u));

    let preferred = preferred_links(g);
    let claimed: BTreeSet<LinkKey> = preferred.values().copied().collect();
    for (k, &u) in order.iter().enumerate() {
        // The node's own preferred link first, then unclaimed links, then
        // links preferred by other nodes, then no link at all.
        let own = preferred
            .get(&u)
            .copied()
            .filter(|key| !owned.contains(key));
        let mut rest: Vec<LinkKey> = g
            .neighbors(u)
            .iter()
            .map(|&(v, _)| LinkKey::new(u, v))
            .filter(|key| !owned.contains(key) && Some(*key) != own)
            .collect();
        rest.sort_by_key(|key| (claimed.contains(key), *key));
        let candidates: Vec<Option<LinkKey>> = own
            .into_iter()
            .chain(rest)
            .map(Some)
            .chain([None])
            .collect();
        let placed = (0..n).map(|j| (k + j) % n).find_map(|i| {
            let mut nodes = slots[i].nodes.clone();
            nodes.insert(u);
            candidates.iter().find_map(|&cand| {
                let mut links = slots[i].links.clone();
                links.extend(cand);
                isolable(g, &nodes, &links).then_some((i, cand))
            })
        });
        let (i, cand) = placed.ok_or(ConfigError::InsufficientConfigurations {
            n,
            component: Component::Node(u),
        })?;
        slots[i].nodes.insert(u);
        if let Some(key) = cand {
            slots[i].links.insert(key);
            owned.insert(key);
        }
    }

    let remaining: Vec<LinkKey> = g
        .undirected_links()
        .filter(|k| !owned.contains(k))
        .collect();
    for (r, key) in remaining.into_iter().enumerate() {
        let i = (0..n)
            .map(|j| (r + j) % n)
            .find(|&i| {
                let mut links = slots[i].links.clone();
                links.insert(key);
                isolable(g, &slots[i].nodes, &links)
            })
            .ok_or(ConfigError::InsufficientConfigurations {
                n,
                component: Component::Link(key),
            })?;
        slots[i].links.insert(key);
    }
    Ok(slots)
}

/// Gives every node one attached link of its own: links around one cycle are
/// handed out cyclically and every other node gets the BFS tree link that
/// reached it from the cycle. Requires minimum degree two.
fn preferred_links(g: &Graph) -> BTreeMap<NodeId, LinkKey> {
    let mut out = BTreeMap::new();
    let Some(root) = g.nodes().next() else {
        return out;
    };
    // DFS along lowest-id neighbors until a back edge closes a cycle.
    let mut stack = vec![root];
    let mut on_path = BTreeSet::from([root]);
    let cycle = loop {
        let u = *stack.last().expect("non-empty");
        let parent = stack.len().checked_sub(2).map(|i| stack[i]);
        let back = g
            .neighbors(u)
            .iter()
            .map(|&(v, _)| v)
            .find(|v| Some(*v) != parent && on_path.contains(v));
        if let Some(v) = back {
            let pos = stack.iter().position(|&x| x == v).expect("on path");
            break stack[pos..].to_vec();
        }
        match g
            .neighbors(u)
            .iter()
            .map(|&(v, _)| v)
            .find(|v| !on_path.contains(v))
        {
            Some(v) => {
                stack.push(v);
                on_path.insert(v);
            }
            None => return out,
        }
    };
    for (i, &u) in cycle.iter().enumerate() {
        let next = cycle[(i + 1) % cycle.len()];
        out.insert(u, LinkKey::new(u, next));
    }
    let mut queue: VecDeque<NodeId> = cycle.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        for &(v, _) in g.neighbors(u) {
            if let std::collections::btree_map::Entry::Vacant(e) = out.entry(v) {
                e.insert(LinkKey::new(u, v));
                queue.push_back(v);
            }
        }
    }
    out
}

/// Backbone connected and every isolated node attached to it by a
/// non-isolated link.
fn isolable(g: &Graph, nodes: &BTreeSet<NodeId>, links: &BTreeSet<LinkKey>) -> bool {
    let Some(start) = g.nodes().find(|x| !nodes.contains(x)) else {
        return false;
    };
    let backbone_size = g.node_count() - nodes.len();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        for &(y, _) in g.neighbors(x) {
            if !nodes.contains(&y) && !links.contains(&LinkKey::new(x, y)) && seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    if seen.len() != backbone_size {
        return false;
    }
    nodes.iter().all(|&s| {
        g.neighbors(s)
            .iter()
            .any(|&(b, _)| !nodes.contains(&b) && !links.contains(&LinkKey::new(s, b)))
    })
}

fn assemble(g: &Graph, slots: Vec<Slot>, n: usize) -> ConfigurationSet {
    let w_r = restricted_weight(g);
    let mut configs = vec![Configuration::normal(g, w_r)];
    let mut slots = slots.into_iter();
    for i in 1..=n {
        let slot = slots.next().unwrap_or_default();
        configs.push(Configuration::with_isolation(
            g, i, w_r, slot.nodes, slot.links,
        ));
    }
    ConfigurationSet { w_r, configs }
}

/// Result of the pairwise reachability check for one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub valid: bool,
    /// Ordered pairs `(u, v)` with no admissible path from `u` to `v`.
    pub violations: Vec<(NodeId, NodeId)>,
}

/// A configuration is valid when every ordered node pair is joined by a
/// path that uses no isolated link and whose interior nodes are all
/// non-isolated.
pub fn is_valid_config(g: &Graph, c: &Configuration) -> ValidityReport {
    let mut violations = Vec::new();
    for u in g.nodes() {
        let mut seen = BTreeSet::from([u]);
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            if x != u && c.is_isolated(x) {
                continue;
            }
            for &(y, _) in g.neighbors(x) {
                if c.cost(x, y).is_some() && seen.insert(y) {
                    queue.push_back(y);
                }
            }
        }
        violations.extend(g.nodes().filter(|v| !seen.contains(v)).map(|v| (u, v)));
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// Which backup configurations isolate each node and link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub nodes: BTreeMap<NodeId, Vec<usize>>,
    pub links: BTreeMap<LinkKey, Vec<usize>>,
}

impl CoverageReport {
    pub fn uncovered(&self) -> Vec<Component> {
        let nodes = self
            .nodes
            .iter()
            .filter(|(_, v)| v.is_empty())
            .map(|(&n, _)| Component::Node(n));
        let links = self
            .links
            .iter()
            .filter(|(_, v)| v.is_empty())
            .map(|(&k, _)| Component::Link(k));
        nodes.chain(links).collect()
    }

    pub fn duplicated(&self) -> Vec<Component> {
        let nodes = self
            .nodes
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(&n, _)| Component::Node(n));
        let links = self
            .links
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(&k, _)| Component::Link(k));
        nodes.chain(links).collect()
    }

    /// Every node and link isolated exactly once.
    pub fn is_exact(&self) -> bool {
        self.nodes
            .values()
            .chain(self.links.values())
            .all(|v| v.len() == 1)
    }
}

pub fn coverage_report(cs: &ConfigurationSet, g: &Graph) -> CoverageReport {
    let mut nodes: BTreeMap<NodeId, Vec<usize>> = g.nodes().map(|n| (n, Vec::new())).collect();
    let mut links: BTreeMap<LinkKey, Vec<usize>> =
        g.undirected_links().map(|k| (k, Vec::new())).collect();
    for c in cs.backups() {
        for n in &c.isolated_nodes {
            nodes.entry(*n).or_default().push(c.index);
        }
        for k in &c.isolated_links {
            links.entry(*k).or_default().push(c.index);
        }
    }
    CoverageReport { nodes, links }
}

/// Non-isolated nodes and the normal-class links between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backbone {
    pub nodes: BTreeSet<NodeId>,
    pub links: BTreeSet<LinkKey>,
}

pub fn backbone(c: &Configuration) -> Result<Backbone, ConfigError> {
    let nodes: BTreeSet<NodeId> = c
        .nodes()
        .into_iter()
        .filter(|n| !c.is_isolated(*n))
        .collect();
    let links: BTreeSet<LinkKey> = c
        .weights
        .iter()
        .filter(|(_, class)| matches!(class, WeightClass::Normal(_)))
        .map(|(&(u, v), _)| LinkKey::new(u, v))
        .collect();
    let disconnected = || ConfigError::DisconnectedBackbone { index: c.index };
    let start = *nodes.iter().next().ok_or_else(disconnected)?;
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        for k in links.iter().filter(|k| k.touches(x)) {
            let y = k.other(x);
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    if seen.len() != nodes.len() {
        return Err(disconnected());
    }
    Ok(Backbone { nodes, links })
}
