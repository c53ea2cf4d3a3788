//! Graph generators for tree-convergence checks.

use rand::Rng;
use spanmq_core::BrokerId;

use crate::oracle::Graph;

/// Ranges for randomly drawn capabilities and link RTTs.
#[derive(Debug, Clone, Copy)]
pub struct Weights {
    pub capability: (u64, u64),
    pub rtt_us: (u64, u64),
}

impl Weights {
    /// Narrow ranges: frequent capability ties and equal-cost paths.
    pub const TIE_HEAVY: Weights = Weights {
        capability: (1, 3),
        rtt_us: (1, 3),
    };
    pub const WIDE: Weights = Weights {
        capability: (1, 100_000),
        rtt_us: (50, 200_000),
    };
}

/// Broker `i` listens on 10.0.0.(i+1):1883, but ids are shuffled so index
/// order and id order disagree.
pub fn broker_ids<R: Rng>(rng: &mut R, n: usize) -> Vec<BrokerId> {
    let mut ids: Vec<BrokerId> = (0..n)
        .map(|i| BrokerId::new([10, 0, 0, (i + 1) as u8].into(), 1883 + rng.gen_range(0..2)))
        .collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.gen_range(0..=i));
    }
    ids
}

/// Every connected labelled graph on `n` nodes, as edge lists over `0..n`.
pub fn connected_edge_sets(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, p)| *p)
            .collect();
        if connected(n, &edges) {
            out.push(edges);
        }
    }
    out
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(c: &mut [usize], v: usize) -> usize {
        if c[v] != v {
            let r = find(c, c[v]);
            c[v] = r;
        }
        c[v]
    }
    let mut groups = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        if ra != rb {
            comp[ra] = rb;
            groups -= 1;
        }
    }
    groups <= 1
}

pub fn weighted<R: Rng>(rng: &mut R, n: usize, edges: &[(usize, usize)], w: Weights) -> Graph {
    let mut g = Graph::default();
    for id in broker_ids(rng, n) {
        g.add_node(id, rng.gen_range(w.capability.0..=w.capability.1));
    }
    for &(a, b) in edges {
        g.add_edge(a, b, rng.gen_range(w.rtt_us.0..=w.rtt_us.1));
    }
    g
}

/// Random spanning tree plus each remaining pair with probability `density`.
pub fn random_connected<R: Rng>(rng: &mut R, n: usize, density: f64, w: Weights) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v));
    }
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.gen_bool(density) {
                edges.push((a, b));
            }
        }
    }
    weighted(rng, n, &edges, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_connected_labelled_graphs() {
        // OEIS A001187
        let counts: Vec<usize> = (1..=5).map(|n| connected_edge_sets(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 4, 38, 728]);
    }
}
