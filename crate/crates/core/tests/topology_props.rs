use std::collections::BTreeSet;

use emrc::{parse_topology, Graph, NodeId};
use proptest::prelude::*;

/// Connected graph with `n` nodes: a random spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = Graph> {
    (2u32..=10).prop_flat_map(|n| {
        let parents: Vec<BoxedStrategy<u32>> = (1..n).map(|v| (0..v).boxed()).collect();
        let extra = prop::collection::vec((0..n, 0..n, 1u32..=10), 0..(n as usize * 2));
        let weights = prop::collection::vec(1u32..=10, (n - 1) as usize);
        (Just(n), parents, extra, weights).prop_map(|(n, parents, extra, weights)| {
            let mut edges: Vec<(u32, u32, u32)> = parents
                .iter()
                .enumerate()
                .map(|(i, &p)| (p, i as u32 + 1, weights[i]))
                .collect();
            let mut have: BTreeSet<(u32, u32)> = edges
                .iter()
                .map(|&(a, b, _)| (a.min(b), a.max(b)))
                .collect();
            for (a, b, w) in extra {
                if a != b && have.insert((a.min(b), a.max(b))) {
                    edges.push((a, b, w));
                }
            }
            Graph::from_undirected(0..n, edges).unwrap()
        })
    })
}

fn connected_without(g: &Graph, removed: NodeId) -> bool {
    let rest: Vec<NodeId> = g.nodes().filter(|&v| v != removed).collect();
    let Some(&start) = rest.first() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &(v, _) in g.neighbors(u) {
            if v != removed && seen.insert(v) {
                stack.push(v);
            }
        }
    }
    seen.len() == rest.len()
}

proptest! {
    #[test]
    fn text_round_trip(g in connected_graph()) {
        prop_assert_eq!(parse_topology(&g.to_text(), false).unwrap(), g);
    }

    #[test]
    fn json_round_trip(g in connected_graph()) {
        let text = g.to_json().to_string();
        prop_assert_eq!(parse_topology(&text, false).unwrap(), g);
    }

    #[test]
    fn articulation_points_match_removal_oracle(g in connected_graph()) {
        let expected: Vec<NodeId> = g.nodes().filter(|&v| !connected_without(&g, v)).collect();
        prop_assert_eq!(g.articulation_points(), expected.clone());
        prop_assert_eq!(g.is_biconnected(), expected.is_empty());
    }
}
