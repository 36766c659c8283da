//! Network topology: nodes, directed links with integer weights, parsing and
//! bi-connectivity checks.
//!
//! Links are stored as directed pairs. Every `(u, v)` must have a matching
//! `(v, u)`, but the two directions may carry different normal weights.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Router identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

/// A directed link with its normal (configuration 0) weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub weight: u32,
}

/// Undirected link key, always stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey {
    pub lo: NodeId,
    pub hi: NodeId,
}

impl LinkKey {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            LinkKey { lo: a, hi: b }
        } else {
            LinkKey { lo: b, hi: a }
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.lo == n || self.hi == n
    }

    /// The endpoint that is not `n`. Only meaningful when `touches(n)`.
    pub fn other(&self, n: NodeId) -> NodeId {
        if self.lo == n {
            self.hi
        } else {
            self.lo
        }
    }
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.lo, self.hi)
    }
}

/// A failable network element: a router or an undirected link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Node(NodeId),
    Link(LinkKey),
}

impl Component {
    pub fn link(a: u32, b: u32) -> Self {
        Component::Link(LinkKey::new(NodeId(a), NodeId(b)))
    }

    pub fn node(n: u32) -> Self {
        Component::Node(NodeId(n))
    }

    pub fn exists_in(&self, g: &Graph) -> bool {
        match *self {
            Component::Node(n) => g.contains_node(n),
            Component::Link(k) => g.has_link(k.lo, k.hi),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Node(n) => write!(f, "node {n}"),
            Component::Link(k) => write!(f, "link {k}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("link ({from},{to}) has no reverse link")]
    AsymmetricLink { from: NodeId, to: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("graph has no nodes")]
    Empty,
}

impl TopologyError {
    fn parse(line: usize, reason: impl Into<String>) -> Self {
        TopologyError::Parse {
            line,
            reason: reason.into(),
        }
    }
}

/// The topology graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: BTreeSet<NodeId>,
    // (from, to) -> weight
    links: BTreeMap<(NodeId, NodeId), u32>,
    adj: BTreeMap<NodeId, Vec<(NodeId, u32)>>,
}

impl Graph {
    /// Builds a graph from explicit node and directed link lists.
    ///
    /// Every link must have a reverse; use [`Graph::from_undirected`] to have
    /// reverses added automatically.
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        links: impl IntoIterator<Item = Link>,
    ) -> Result<Self, TopologyError> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        let mut map = BTreeMap::new();
        for (i, l) in links.into_iter().enumerate() {
            check_link(&nodes, &l, i + 1)?;
            if map.insert((l.from, l.to), l.weight).is_some() {
                return Err(TopologyError::parse(
                    i + 1,
                    format!("duplicate link ({},{})", l.from, l.to),
                ));
            }
        }
        Self::finish(nodes, map)
    }

    /// Builds a graph from `(u, v, weight)` triples, adding both directions.
    pub fn from_undirected(
        nodes: impl IntoIterator<Item = u32>,
        edges: impl IntoIterator<Item = (u32, u32, u32)>,
    ) -> Result<Self, TopologyError> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().map(NodeId).collect();
        let mut map = BTreeMap::new();
        for (i, (u, v, w)) in edges.into_iter().enumerate() {
            let l = Link {
                from: NodeId(u),
                to: NodeId(v),
                weight: w,
            };
            check_link(&nodes, &l, i + 1)?;
            if map.contains_key(&(l.from, l.to)) || map.contains_key(&(l.to, l.from)) {
                return Err(TopologyError::parse(
                    i + 1,
                    format!("duplicate link ({u},{v})"),
                ));
            }
            map.insert((l.from, l.to), w);
            map.insert((l.to, l.from), w);
        }
        Self::finish(nodes, map)
    }

    fn finish(
        nodes: BTreeSet<NodeId>,
        links: BTreeMap<(NodeId, NodeId), u32>,
    ) -> Result<Self, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::Empty);
        }
        for &(u, v) in links.keys() {
            if !links.contains_key(&(v, u)) {
                return Err(TopologyError::AsymmetricLink { from: u, to: v });
            }
        }
        let mut adj: BTreeMap<NodeId, Vec<(NodeId, u32)>> =
            nodes.iter().map(|&n| (n, Vec::new())).collect();
        for (&(u, v), &w) in &links {
            adj.get_mut(&u).expect("checked").push((v, w));
        }
        Ok(Graph { nodes, links, adj })
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains_node(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    /// All directed links, sorted by `(from, to)`.
    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        self.links
            .iter()
            .map(|(&(from, to), &weight)| Link { from, to, weight })
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Undirected link keys, sorted.
    pub fn undirected_links(&self) -> impl Iterator<Item = LinkKey> + '_ {
        self.links
            .keys()
            .filter(|(u, v)| u < v)
            .map(|&(u, v)| LinkKey::new(u, v))
    }

    pub fn has_link(&self, u: NodeId, v: NodeId) -> bool {
        self.links.contains_key(&(u, v))
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<u32> {
        self.links.get(&(u, v)).copied()
    }

    /// Largest normal weight in the graph.
    pub fn w_max(&self) -> u32 {
        self.links.values().copied().max().unwrap_or(0)
    }

    /// Sum of all directed normal weights.
    pub fn total_weight(&self) -> u64 {
        self.links.values().map(|&w| u64::from(w)).sum()
    }

    /// Outgoing `(neighbor, weight)` pairs of `u`, sorted by neighbor id.
    pub fn neighbors(&self, u: NodeId) -> &[(NodeId, u32)] {
        self.adj.get(&u).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.neighbors(u).len()
    }

    /// The set of links leaving `u`.
    pub fn adjacency(&self, u: NodeId) -> Result<Vec<Link>, TopologyError> {
        let adj = self.adj.get(&u).ok_or(TopologyError::UnknownNode(u))?;
        Ok(adj
            .iter()
            .map(|&(to, weight)| Link {
                from: u,
                to,
                weight,
            })
            .collect())
    }

    /// A copy of the graph without the given nodes and undirected links.
    /// Returns `None` when nothing would be left.
    pub fn without(&self, nodes: &BTreeSet<NodeId>, links: &BTreeSet<LinkKey>) -> Option<Graph> {
        let keep: BTreeSet<NodeId> = self.nodes.difference(nodes).copied().collect();
        let map = self
            .links
            .iter()
            .filter(|(&(u, v), _)| {
                keep.contains(&u) && keep.contains(&v) && !links.contains(&LinkKey::new(u, v))
            })
            .map(|(&k, &w)| (k, w))
            .collect();
        Graph::finish(keep, map).ok()
    }

    /// Serializes to the line format, one directed `link` line per link.
    /// Parse the result with `mirror = false`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            out.push_str(&format!("node {n}\n"));
        }
        for l in self.links() {
            out.push_str(&format!("link {} {} {}\n", l.from, l.to, l.weight));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = TopologyDoc {
            nodes: self.nodes.iter().map(|n| n.0).collect(),
            links: self
                .links()
                .map(|l| LinkDoc {
                    from: l.from.0,
                    to: l.to.0,
                    weight: l.weight as i64,
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("plain data")
    }

    /// Nodes reachable from `start` over links whose endpoints pass `keep`.
    fn reach(&self, start: NodeId, keep: impl Fn(NodeId) -> bool) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in self.neighbors(u) {
                if keep(v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        match self.nodes.iter().next() {
            Some(&s) => self.reach(s, |_| true).len() == self.nodes.len(),
            None => false,
        }
    }

    /// Articulation points of the undirected view, sorted.
    pub fn articulation_points(&self) -> Vec<NodeId> {
        // Iterative Tarjan low-link over the undirected view.
        let mut disc: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut low: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut cut = BTreeSet::new();
        let mut time = 0usize;

        for &root in &self.nodes {
            if disc.contains_key(&root) {
                continue;
            }
            disc.insert(root, time);
            low.insert(root, time);
            time += 1;
            let mut root_children = 0;
            // (node, parent, next neighbor index)
            let mut stack: Vec<(NodeId, Option<NodeId>, usize)> = vec![(root, None, 0)];
            while let Some(top) = stack.last_mut() {
                let (u, parent, idx) = *top;
                let nbrs = self.neighbors(u);
                if idx < nbrs.len() {
                    top.2 += 1;
                    let v = nbrs[idx].0;
                    if Some(v) == parent {
                        continue;
                    }
                    if let Some(&dv) = disc.get(&v) {
                        let lu = low[&u].min(dv);
                        low.insert(u, lu);
                    } else {
                        disc.insert(v, time);
                        low.insert(v, time);
                        time += 1;
                        if u == root {
                            root_children += 1;
                        }
                        stack.push((v, Some(u), 0));
                    }
                } else {
                    stack.pop();
                    if let Some(p) = parent {
                        let lu = low[&u];
                        let lp = low[&p].min(lu);
                        low.insert(p, lp);
                        if p != root && lu >= disc[&p] {
                            cut.insert(p);
                        }
                    }
                }
            }
            if root_children > 1 {
                cut.insert(root);
            }
        }
        cut.into_iter().collect()
    }

    /// Connected with no articulation point. Graphs with fewer than three
    /// nodes count as bi-connected when connected.
    pub fn is_biconnected(&self) -> bool {
        self.is_connected() && self.articulation_points().is_empty()
    }
}

fn check_link(nodes: &BTreeSet<NodeId>, l: &Link, line: usize) -> Result<(), TopologyError> {
    if l.from == l.to {
        return Err(TopologyError::parse(
            line,
            format!("self-loop at node {}", l.from),
        ));
    }
    if l.weight == 0 {
        return Err(TopologyError::parse(line, "link weight must be positive"));
    }
    for n in [l.from, l.to] {
        if !nodes.contains(&n) {
            return Err(TopologyError::parse(line, format!("unknown node {n}")));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    nodes: Vec<u32>,
    links: Vec<LinkDoc>,
}

#[derive(Serialize, Deserialize)]
struct LinkDoc {
    from: u32,
    to: u32,
    weight: i64,
}

/// Parses a topology file. Accepts the line format (`node <id>`,
/// `link <u> <v> <w>`, `#` comments) or a JSON document with `nodes` and
/// `links` arrays. With `mirror` set, every link also gets its reverse.
pub fn parse_topology(text: &str, mirror: bool) -> Result<Graph, TopologyError> {
    if text.trim_start().starts_with('{') {
        return parse_json(text, mirror);
    }
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str, what: &str| -> Result<i64, TopologyError> {
            s.parse::<i64>()
                .map_err(|_| TopologyError::parse(line_no, format!("bad {what} '{s}'")))
        };
        match fields.as_slice() {
            ["node", id] => nodes.push((line_no, num(id, "node id")?)),
            ["link", u, v, w] => links.push((
                line_no,
                num(u, "node id")?,
                num(v, "node id")?,
                num(w, "weight")?,
            )),
            _ => {
                return Err(TopologyError::parse(
                    line_no,
                    format!("unrecognized line '{line}'"),
                ))
            }
        }
    }
    assemble(nodes, links, mirror)
}

fn parse_json(text: &str, mirror: bool) -> Result<Graph, TopologyError> {
    let doc: TopologyDoc = serde_json::from_str(text).map_err(|e| TopologyError::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    let nodes = doc.nodes.iter().map(|&n| (0, i64::from(n))).collect();
    let links = doc
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| (i + 1, i64::from(l.from), i64::from(l.to), l.weight))
        .collect();
    assemble(nodes, links, mirror)
}

fn assemble(
    nodes: Vec<(usize, i64)>,
    links: Vec<(usize, i64, i64, i64)>,
    mirror: bool,
) -> Result<Graph, TopologyError> {
    let mut set = BTreeSet::new();
    for &(line, id) in &nodes {
        let id = u32::try_from(id)
            .map_err(|_| TopologyError::parse(line, format!("node id {id} out of range")))?;
        if !set.insert(NodeId(id)) {
            return Err(TopologyError::parse(line, format!("duplicate node {id}")));
        }
    }
    if set.is_empty() {
        return Err(TopologyError::Empty);
    }
    if let Some((i, n)) = set.iter().enumerate().find(|(i, n)| n.0 as usize != *i) {
        let line = nodes
            .iter()
            .find(|(_, id)| *id == i64::from(n.0))
            .map_or(0, |x| x.0);
        return Err(TopologyError::parse(
            line,
            format!("node ids must be dense from 0; missing {i}"),
        ));
    }

    let mut map: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
    for &(line, u, v, w) in &links {
        let id = |x: i64| {
            u32::try_from(x)
                .map(NodeId)
                .map_err(|_| TopologyError::parse(line, format!("node id {x} out of range")))
        };
        let weight = u32::try_from(w).ok().filter(|&w| w > 0).ok_or_else(|| {
            TopologyError::parse(line, format!("weight must be positive, got {w}"))
        })?;
        let l = Link {
            from: id(u)?,
            to: id(v)?,
            weight,
        };
        check_link(&set, &l, line)?;
        let dup =
            map.contains_key(&(l.from, l.to)) || (mirror && map.contains_key(&(l.to, l.from)));
        if dup {
            return Err(TopologyError::parse(
                line,
                format!("duplicate link ({},{})", l.from, l.to),
            ));
        }
        map.insert((l.from, l.to), weight);
        if mirror {
            map.insert((l.to, l.from), weight);
        }
    }
    Graph::finish(set, map)
}
