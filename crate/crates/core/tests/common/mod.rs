#![allow(dead_code)]

use emrc::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bi-connected graph with `3..=max_nodes` nodes and weights in
/// `1..=max_weight`, by rejection sampling over G(n, p).
pub fn random_biconnected(seed: u64, max_nodes: u32, max_weight: u32) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(3..=max_nodes);
        let p: f64 = rng.gen_range(0.25..0.85);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(p) {
                    edges.push((u, v, rng.gen_range(1..=max_weight)));
                }
            }
        }
        if let Ok(g) = Graph::from_undirected(0..n, edges) {
            if g.is_biconnected() {
                return g;
            }
        }
    }
}

pub fn ring(k: u32) -> Graph {
    Graph::from_undirected(0..k, (0..k).map(|i| (i, (i + 1) % k, 1))).unwrap()
}

pub fn k4() -> Graph {
    Graph::from_undirected(
        0..4,
        [
            (0, 1, 1),
            (0, 2, 1),
            (0, 3, 1),
            (1, 2, 1),
            (1, 3, 1),
            (2, 3, 1),
        ],
    )
    .unwrap()
}

/// Cheapest admissible simple path from `u` to `v` in `c` by exhaustive
/// enumeration, with ties broken by the smallest node sequence. A path is
/// admissible when it uses no isolated link and no isolated node other
/// than its endpoints.
pub fn brute_force_path(
    g: &Graph,
    c: &emrc::configgen::Configuration,
    u: emrc::NodeId,
    v: emrc::NodeId,
) -> Option<(u64, Vec<emrc::NodeId>)> {
    fn walk(
        g: &Graph,
        c: &emrc::configgen::Configuration,
        v: emrc::NodeId,
        path: &mut Vec<emrc::NodeId>,
        cost: u64,
        best: &mut Option<(u64, Vec<emrc::NodeId>)>,
    ) {
        let at = *path.last().unwrap();
        if at == v {
            let better = match best {
                None => true,
                Some((bc, bp)) => cost < *bc || (cost == *bc && path < bp),
            };
            if better {
                *best = Some((cost, path.clone()));
            }
            return;
        }
        if path.len() > 1 && c.is_isolated(at) {
            return;
        }
        for &(next, _) in g.neighbors(at) {
            if path.contains(&next) {
                continue;
            }
            let Some(w) = c.cost(at, next) else { continue };
            path.push(next);
            walk(g, c, v, path, cost + w, best);
            path.pop();
        }
    }
    let mut best = None;
    walk(g, c, v, &mut vec![u], 0, &mut best);
    best
}

/// Random scenario on a random bi-connected graph with a few flows and up
/// to `max_failures` outages, some of which overlap in time.
pub fn random_scenario(seed: u64, max_failures: usize) -> emrc::sim::Scenario {
    use emrc::Component;
    let g = random_biconnected(seed, 10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let nodes: Vec<u32> = g.nodes().map(|n| n.0).collect();
    let links: Vec<emrc::LinkKey> = g.undirected_links().collect();
    let mut sc = emrc::sim::Scenario::new(g);
    sc.seed = seed;
    for _ in 0..rng.gen_range(1..=4) {
        let src = nodes[rng.gen_range(0..nodes.len())];
        let mut dst = nodes[rng.gen_range(0..nodes.len())];
        while dst == src {
            dst = nodes[rng.gen_range(0..nodes.len())];
        }
        let start = rng.gen_range(0..5_000);
        let interval = rng.gen_range(500..3_000);
        let count = rng.gen_range(50..250);
        sc = sc.with_flow(src, dst, start, interval, count);
        sc.flows.last_mut().unwrap().jitter = rng.gen_range(0..400);
    }
    let mut used = Vec::new();
    for _ in 0..rng.gen_range(1..=max_failures) {
        let c = if rng.gen_bool(0.5) {
            Component::node(nodes[rng.gen_range(0..nodes.len())])
        } else {
            Component::Link(links[rng.gen_range(0..links.len())])
        };
        if used.contains(&c) {
            continue;
        }
        used.push(c);
        let down = rng.gen_range(20_000..300_000);
        let up = match rng.gen_range(0..3) {
            0 => None,
            1 => Some(down + rng.gen_range(1_000..30_000)),
            _ => Some(down + rng.gen_range(30_000..1_500_000)),
        };
        sc = sc.with_failure(c, down, up);
    }
    sc
}

/// Checks that hold for every simulated packet. Returns human-readable
/// violations.
pub fn audit(sc: &emrc::sim::Scenario, res: &emrc::sim::SimResult) -> Vec<String> {
    use emrc::sim::Outcome;
    let mut bad = Vec::new();
    for r in &res.records {
        if r.path.len() != r.marks.len() + 1 || r.hop_times.len() != r.path.len() {
            bad.push(format!("seq {}: inconsistent trace", r.seq));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (node, mark) in r.path.iter().zip(&r.marks) {
            if !seen.insert((*node, *mark)) {
                bad.push(format!("seq {}: revisits ({node}, {mark})", r.seq));
            }
        }
        for w in r.path.windows(2) {
            if !sc.graph.has_link(w[0], w[1]) {
                bad.push(format!("seq {}: no link {}-{}", r.seq, w[0], w[1]));
            }
        }
        for w in r.hop_times.windows(2) {
            if w[1] < w[0] + sc.link_delay {
                bad.push(format!("seq {}: hop faster than link delay", r.seq));
            }
        }
        match r.outcome {
            Outcome::Delivered { at } => {
                if r.path.last() != Some(&r.dst) || r.hop_times.last() != Some(&at) {
                    bad.push(format!("seq {}: delivered off destination", r.seq));
                }
            }
            Outcome::Dropped { at, .. } => {
                if at < *r.hop_times.last().unwrap() {
                    bad.push(format!("seq {}: dropped before last hop", r.seq));
                }
            }
            Outcome::InFlight => {
                if sc.horizon.is_none() {
                    bad.push(format!("seq {}: unaccounted without horizon", r.seq));
                }
            }
        }
    }
    let s = &res.summary;
    if s.injected != s.delivered + s.dropped + s.in_flight {
        bad.push("conservation violated".into());
    }
    bad
}
