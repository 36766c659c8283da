//! Exhaustive re-check of a configuration set by simple-path enumeration.
//! Intended for small graphs only; it deliberately shares no code with the
//! generator or with `is_valid_config`.

use std::collections::BTreeMap;

use super::{ConfigurationSet, WeightClass};
use crate::topology::{Graph, LinkKey, NodeId};

/// True when the set has at least one backup configuration, `C_0` is all
/// normal, every backup configuration satisfies the structural rules and
/// pairwise path condition, and every node and undirected link is isolated
/// in exactly one backup configuration.
pub fn oracle_validate(g: &Graph, cs: &ConfigurationSet) -> bool {
    let configs = cs.configs();
    if configs.len() < 2 {
        return false;
    }
    let nodes: Vec<NodeId> = g.nodes().collect();
    let links: Vec<(NodeId, NodeId)> = g.links().map(|l| (l.from, l.to)).collect();

    let c0 = &configs[0];
    for &(u, v) in &links {
        if c0.class(u, v) != Some(WeightClass::Normal(g.weight(u, v).unwrap_or(0))) {
            return false;
        }
    }

    let mut node_hits: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut link_hits: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();

    for c in &configs[1..] {
        // Every directed link has a class; the class of a link and its
        // reverse agree except that normal weights may differ.
        for &(u, v) in &links {
            let (Some(a), Some(b)) = (c.class(u, v), c.class(v, u)) else {
                return false;
            };
            let same_kind = matches!(
                (a, b),
                (WeightClass::Normal(_), WeightClass::Normal(_))
                    | (WeightClass::Restricted, WeightClass::Restricted)
                    | (WeightClass::Isolated, WeightClass::Isolated)
            );
            if !same_kind {
                return false;
            }
        }
        for &s in c.isolated_nodes() {
            if !nodes.contains(&s) {
                return false;
            }
            *node_hits.entry(s).or_insert(0) += 1;
            let attached: Vec<WeightClass> = links
                .iter()
                .filter(|&&(u, _)| u == s)
                .filter_map(|&(u, v)| c.class(u, v))
                .collect();
            if attached.iter().any(|w| matches!(w, WeightClass::Normal(_))) {
                return false;
            }
            if !attached.contains(&WeightClass::Restricted) {
                return false;
            }
        }
        for k in c.isolated_links() {
            let key = (k.lo, k.hi);
            if !links.contains(&key) || c.class(k.lo, k.hi) != Some(WeightClass::Isolated) {
                return false;
            }
            *link_hits.entry(key).or_insert(0) += 1;
        }
        // Isolated classes must be listed as isolated links.
        for &(u, v) in &links {
            if c.class(u, v) == Some(WeightClass::Isolated)
                && !c.isolated_links().contains(&LinkKey::new(u, v))
            {
                return false;
            }
        }

        for &src in &nodes {
            for &dst in &nodes {
                if src != dst && !admissible_path_exists(&links, c, src, dst) {
                    return false;
                }
            }
        }
    }

    let nodes_once = nodes.iter().all(|n| node_hits.get(n) == Some(&1));
    let links_once = links
        .iter()
        .filter(|(u, v)| u < v)
        .all(|key| link_hits.get(key) == Some(&1));
    nodes_once && links_once
}

fn admissible_path_exists(
    links: &[(NodeId, NodeId)],
    c: &super::Configuration,
    src: NodeId,
    dst: NodeId,
) -> bool {
    fn dfs(
        links: &[(NodeId, NodeId)],
        c: &super::Configuration,
        at: NodeId,
        dst: NodeId,
        visited: &mut Vec<NodeId>,
    ) -> bool {
        for &(u, v) in links {
            if u != at || visited.contains(&v) {
                continue;
            }
            if matches!(c.class(u, v), None | Some(WeightClass::Isolated)) {
                continue;
            }
            if v == dst {
                return true;
            }
            // v would be an interior node of the path.
            if c.isolated_nodes().contains(&v) {
                continue;
            }
            visited.push(v);
            if dfs(links, c, v, dst, visited) {
                return true;
            }
            visited.pop();
        }
        false
    }
    let mut visited = vec![src];
    dfs(links, c, src, dst, &mut visited)
}
