//! Per-configuration shortest paths and destination-indexed forwarding
//! tables.
//!
//! Distances are computed towards each destination with a reverse Dijkstra
//! over the configuration's finite weights. Isolated links are skipped and
//! isolated nodes are never expanded as intermediate hops, so a node of
//! `S_i` can start or end a path but never carry it. The next hop at `x` is
//! the smallest-id neighbor lying on some shortest path, which makes every
//! walk the lexicographically smallest shortest path and keeps hop-by-hop
//! forwarding consistent with `shortest_path`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io;

use thiserror::Error;

use crate::configgen::{Configuration, ConfigurationSet};
use crate::topology::{Graph, Link, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("no path from {from} to {to} in configuration {config}")]
    Unreachable {
        from: NodeId,
        to: NodeId,
        config: usize,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no route at {at} towards {dst}")]
    NoRoute { at: NodeId, dst: NodeId },
    #[error("original path has zero weight")]
    ZeroWeightOriginal,
    #[error("paths do not share endpoints")]
    EndpointMismatch,
}

/// A path `P_i(u, v)`. `links` carry their normal weights; `total_weight`
/// is the cost under the configuration the path was computed in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
    pub total_weight: u64,
}

impl Path {
    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeId {
        *self.nodes.last().expect("paths are non-empty")
    }

    pub fn hop_count(&self) -> usize {
        self.links.len()
    }
}

/// Distance from every node to `dst` under `c`, by reverse Dijkstra.
fn distances_to(g: &Graph, c: &Configuration, dst: NodeId) -> BTreeMap<NodeId, u64> {
    let mut dist: BTreeMap<NodeId, u64> = BTreeMap::from([(dst, 0)]);
    let mut heap = BinaryHeap::from([Reverse((0u64, dst))]);
    while let Some(Reverse((d, y))) = heap.pop() {
        if dist.get(&y).is_some_and(|&best| d > best) {
            continue;
        }
        if y != dst && c.is_isolated(y) {
            continue;
        }
        // Links are symmetric, so the predecessors of y are its neighbors.
        for &(x, _) in g.neighbors(y) {
            let Some(w) = c.cost(x, y) else { continue };
            let nd = d + w;
            if dist.get(&x).is_none_or(|&cur| nd < cur) {
                dist.insert(x, nd);
                heap.push(Reverse((nd, x)));
            }
        }
    }
    dist
}

fn pick_next(
    g: &Graph,
    c: &Configuration,
    dist: &BTreeMap<NodeId, u64>,
    x: NodeId,
    dst: NodeId,
) -> Option<NodeId> {
    let dx = *dist.get(&x)?;
    g.neighbors(x).iter().map(|&(y, _)| y).find(|&y| {
        (y == dst || !c.is_isolated(y))
            && match (c.cost(x, y), dist.get(&y)) {
                (Some(w), Some(&dy)) => w + dy == dx,
                _ => false,
            }
    })
}

/// Minimum-cost path from `u` to `v` in configuration `c`, ties broken by
/// the lexicographically smallest node sequence.
pub fn shortest_path(
    g: &Graph,
    c: &Configuration,
    u: NodeId,
    v: NodeId,
) -> Result<Path, RoutingError> {
    for n in [u, v] {
        if !g.contains_node(n) {
            return Err(RoutingError::UnknownNode(n));
        }
    }
    let dist = distances_to(g, c, v);
    let unreachable = || RoutingError::Unreachable {
        from: u,
        to: v,
        config: c.index(),
    };
    let total_weight = *dist.get(&u).ok_or_else(unreachable)?;
    let mut nodes = vec![u];
    let mut links = Vec::new();
    let mut at = u;
    while at != v {
        let next = pick_next(g, c, &dist, at, v).ok_or_else(unreachable)?;
        links.push(Link {
            from: at,
            to: next,
            weight: g.weight(at, next).expect("neighbor"),
        });
        nodes.push(next);
        at = next;
    }
    Ok(Path {
        nodes,
        links,
        total_weight,
    })
}

/// Next-hop table of one configuration: `(at, destination) -> next hop`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingTable {
    config_index: usize,
    entries: BTreeMap<(NodeId, NodeId), NodeId>,
}

impl ForwardingTable {
    pub fn config_index(&self) -> usize {
        self.config_index
    }

    pub fn get(&self, at: NodeId, dst: NodeId) -> Option<NodeId> {
        self.entries.get(&(at, dst)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(at, destination, next hop)` triples, sorted.
    pub fn entries(&self) -> impl Iterator<Item = (NodeId, NodeId, NodeId)> + '_ {
        self.entries.iter().map(|(&(a, d), &n)| (a, d, n))
    }
}

fn table_for(g: &Graph, c: &Configuration, strict: bool) -> Result<ForwardingTable, RoutingError> {
    let mut entries = BTreeMap::new();
    for dst in g.nodes() {
        let dist = distances_to(g, c, dst);
        for at in g.nodes().filter(|&x| x != dst) {
            match pick_next(g, c, &dist, at, dst) {
                Some(next) => {
                    entries.insert((at, dst), next);
                }
                None if strict => {
                    return Err(RoutingError::Unreachable {
                        from: at,
                        to: dst,
                        config: c.index(),
                    })
                }
                None => {}
            }
        }
    }
    Ok(ForwardingTable {
        config_index: c.index(),
        entries,
    })
}

/// Table for one configuration; every ordered pair must be reachable.
pub fn build_table(g: &Graph, c: &Configuration) -> Result<ForwardingTable, RoutingError> {
    table_for(g, c, true)
}

/// Table for one configuration, silently omitting unreachable pairs. Used
/// after re-convergence on a degraded topology.
pub fn build_table_partial(g: &Graph, c: &Configuration) -> ForwardingTable {
    table_for(g, c, false).expect("lenient build cannot fail")
}

/// One table per configuration of the set, in index order.
pub fn build_tables(
    g: &Graph,
    cs: &ConfigurationSet,
) -> Result<Vec<ForwardingTable>, RoutingError> {
    cs.configs().iter().map(|c| build_table(g, c)).collect()
}

pub fn next_hop(t: &ForwardingTable, at: NodeId, dst: NodeId) -> Result<NodeId, RoutingError> {
    t.get(at, dst).ok_or(RoutingError::NoRoute { at, dst })
}

/// Backup cost over original cost.
pub fn path_stretch(original: &Path, backup: &Path) -> Result<f64, RoutingError> {
    if original.source() != backup.source() || original.target() != backup.target() {
        return Err(RoutingError::EndpointMismatch);
    }
    if original.total_weight == 0 {
        return Err(RoutingError::ZeroWeightOriginal);
    }
    Ok(backup.total_weight as f64 / original.total_weight as f64)
}

/// Writes `config_index,at_node,destination,next_hop` rows.
pub fn write_tables_csv<W: io::Write>(tables: &[ForwardingTable], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_index", "at_node", "destination", "next_hop"])?;
    for t in tables {
        for (at, dst, next) in t.entries() {
            w.write_record([
                t.config_index.to_string(),
                at.to_string(),
                dst.to_string(),
                next.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configgen::generate_configs;
    use std::collections::BTreeSet;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn ids(p: &Path) -> Vec<u32> {
        p.nodes.iter().map(|x| x.0).collect()
    }

    fn triangle() -> Graph {
        Graph::from_undirected(0..3, [(0, 1, 1), (1, 2, 1), (0, 2, 1)]).unwrap()
    }

    fn ring(k: u32) -> Graph {
        Graph::from_undirected(0..k, (0..k).map(|i| (i, (i + 1) % k, 1))).unwrap()
    }

    #[test]
    fn trivial_path() {
        let g = triangle();
        let c = Configuration::normal(&g, 7);
        let p = shortest_path(&g, &c, n(1), n(1)).unwrap();
        assert_eq!(p.nodes, vec![n(1)]);
        assert!(p.links.is_empty());
        assert_eq!(p.total_weight, 0);
    }

    #[test]
    fn triangle_direct_link() {
        let g = triangle();
        let cs = ConfigurationSet::unprotected(&g);
        let tables = build_tables(&g, &cs).unwrap();
        assert_eq!(next_hop(&tables[0], n(0), n(2)), Ok(n(2)));
        assert_eq!(
            next_hop(&tables[0], n(2), n(2)),
            Err(RoutingError::NoRoute {
                at: n(2),
                dst: n(2)
            })
        );
        assert_eq!(tables[0].len(), 6);
    }

    #[test]
    fn ring_isolating_node_zero() {
        let g = ring(4);
        let cs = generate_configs(&g, 4).unwrap();
        let tables = build_tables(&g, &cs).unwrap();
        let c1 = cs.get(1).unwrap();
        assert!(c1.is_isolated(n(0)));
        assert_eq!(next_hop(&tables[1], n(1), n(3)), Ok(n(2)));
        // Node 0 is reachable only as an endpoint.
        let p = shortest_path(&g, c1, n(1), n(0)).unwrap();
        assert_eq!(ids(&p), vec![1, 2, 3, 0]);
        for t in &tables {
            for v in g.nodes() {
                assert!(t.get(v, v).is_none());
            }
        }
    }

    #[test]
    fn ties_prefer_smaller_sequence() {
        // Square 0-1-3, 0-2-3, equal cost.
        let g = Graph::from_undirected(0..4, [(0, 1, 1), (1, 3, 1), (0, 2, 1), (2, 3, 1)]).unwrap();
        let c = Configuration::normal(&g, 9);
        assert_eq!(
            ids(&shortest_path(&g, &c, n(0), n(3)).unwrap()),
            vec![0, 1, 3]
        );
        assert_eq!(
            ids(&shortest_path(&g, &c, n(3), n(0)).unwrap()),
            vec![3, 1, 0]
        );
    }

    #[test]
    fn isolated_node_not_transited_even_when_cheaper() {
        // Chain of three isolated nodes 1-2-3 with restricted links; the
        // 1 -> 3 path must leave through the backbone instead of via 2.
        let g = Graph::from_undirected(
            0..5,
            [
                (0, 1, 1),
                (1, 2, 1),
                (2, 3, 1),
                (3, 4, 1),
                (4, 0, 1),
                (0, 2, 1),
            ],
        )
        .unwrap();
        let iso: BTreeSet<NodeId> = [1, 2, 3].into_iter().map(n).collect();
        let c = Configuration::with_isolation(&g, 1, 100, iso, BTreeSet::new());
        let p = shortest_path(&g, &c, n(1), n(3)).unwrap();
        assert_eq!(ids(&p), vec![1, 0, 4, 3]);
        assert_eq!(p.total_weight, 201);
    }

    #[test]
    fn unreachable_is_reported() {
        let g = ring(4);
        let links = [(0, 1), (2, 3)]
            .into_iter()
            .map(|(a, b)| crate::topology::LinkKey::new(n(a), n(b)))
            .collect();
        let c = Configuration::with_isolation(&g, 2, 9, BTreeSet::new(), links);
        assert_eq!(
            shortest_path(&g, &c, n(0), n(2)).unwrap_err(),
            RoutingError::Unreachable {
                from: n(0),
                to: n(2),
                config: 2
            }
        );
        assert!(build_table(&g, &c).is_err());
        let partial = build_table_partial(&g, &c);
        assert!(partial.get(n(0), n(2)).is_none());
        assert_eq!(partial.get(n(0), n(3)), Some(n(3)));
    }

    #[test]
    fn stretch() {
        let g = Graph::from_undirected(0..3, [(0, 1, 2), (1, 2, 3), (0, 2, 5)]).unwrap();
        let c = Configuration::normal(&g, 99);
        let direct = shortest_path(&g, &c, n(0), n(1)).unwrap();
        assert_eq!(path_stretch(&direct, &direct), Ok(1.0));
        let long = Path {
            nodes: vec![n(0), n(2), n(1)],
            links: vec![],
            total_weight: 5,
        };
        let short = Path {
            nodes: vec![n(0), n(1)],
            links: vec![],
            total_weight: 2,
        };
        assert_eq!(path_stretch(&short, &long), Ok(2.5));
        let zero = Path {
            nodes: vec![n(0)],
            links: vec![],
            total_weight: 0,
        };
        assert_eq!(
            path_stretch(&zero, &zero),
            Err(RoutingError::ZeroWeightOriginal)
        );
        assert_eq!(
            path_stretch(&short, &zero),
            Err(RoutingError::EndpointMismatch)
        );
    }

    #[test]
    fn csv_export() {
        let g = triangle();
        let tables = build_tables(&g, &ConfigurationSet::unprotected(&g)).unwrap();
        let mut buf = Vec::new();
        write_tables_csv(&tables, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("config_index,at_node,destination,next_hop")
        );
        assert_eq!(lines.next(), Some("0,0,1,1"));
        assert_eq!(text.lines().count(), 7);
    }
}
