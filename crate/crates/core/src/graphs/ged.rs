//! Exact unit-cost edit distance for small unlabeled graphs.
//!
//! With unlabeled nodes, substituting a node is free and never worse than a
//! delete/insert pair, so the distance is the size difference plus the
//! cheapest edge disagreement over injective maps from the smaller graph
//! into the larger one. The search below is depth-first with a running-cost
//! bound.

use super::Graph;
use crate::error::{Error, Result};

/// Largest node count accepted by [`exact_ged`].
pub const GED_MAX_NODES: usize = 8;

struct Search<'a> {
    n1: usize,
    n2: usize,
    a1: &'a [bool],
    a2: &'a [bool],
    e2: usize,
    map: Vec<usize>,
    used: Vec<bool>,
    best: usize,
}

impl Search<'_> {
    fn run(&mut self, depth: usize, cost: usize) {
        let base = self.n2 - self.n1;
        if cost + base >= self.best {
            return;
        }
        if depth == self.n1 {
            let mut covered = 0;
            for i in 0..self.n1 {
                for j in (i + 1)..self.n1 {
                    if self.a2[self.map[i] * self.n2 + self.map[j]] {
                        covered += 1;
                    }
                }
            }
            // Edges of the larger graph touching unmapped nodes are insertions.
            let total = base + cost + (self.e2 - covered);
            self.best = self.best.min(total);
            return;
        }
        for v in 0..self.n2 {
            if self.used[v] {
                continue;
            }
            let mut extra = 0;
            for w in 0..depth {
                let e1 = self.a1[depth * self.n1 + w];
                let e2 = self.a2[v * self.n2 + self.map[w]];
                if e1 != e2 {
                    extra += 1;
                }
            }
            self.used[v] = true;
            self.map[depth] = v;
            self.run(depth + 1, cost + extra);
            self.used[v] = false;
        }
    }
}

/// Minimum number of unit-cost node/edge insertions and deletions turning
/// `g1` into `g2`.
pub fn exact_ged(g1: &Graph, g2: &Graph) -> Result<usize> {
    let (n1, n2) = (g1.num_nodes(), g2.num_nodes());
    if n1 > GED_MAX_NODES || n2 > GED_MAX_NODES {
        return Err(Error::GedBound {
            bound: GED_MAX_NODES,
            n1,
            n2,
        });
    }
    let (small, large) = if n1 <= n2 { (g1, g2) } else { (g2, g1) };
    let (a1, a2) = (small.adjacency(), large.adjacency());
    let mut s = Search {
        n1: small.num_nodes(),
        n2: large.num_nodes(),
        a1: &a1,
        a2: &a2,
        e2: large.edges().len(),
        map: vec![0; small.num_nodes()],
        used: vec![false; large.num_nodes()],
        best: usize::MAX,
    };
    s.run(0, 0);
    Ok(s.best)
}

/// `exp(−2·GED/(|V1|+|V2|))`; two empty graphs score 1.
pub fn ged_similarity(g1: &Graph, g2: &Graph) -> Result<f64> {
    let ged = exact_ged(g1, g2)?;
    let n = g1.num_nodes() + g2.num_nodes();
    if n == 0 {
        return Ok(1.0);
    }
    Ok((-2.0 * ged as f64 / n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, e: &[(usize, usize)]) -> Graph {
        Graph::structure(n, e.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let t = g(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(exact_ged(&t, &t).unwrap(), 0);
    }

    #[test]
    fn empty_vs_single_node() {
        assert_eq!(exact_ged(&g(0, &[]), &g(1, &[])).unwrap(), 1);
    }

    #[test]
    fn triangle_vs_path() {
        let tri = g(3, &[(0, 1), (1, 2), (0, 2)]);
        let path = g(3, &[(0, 1), (1, 2)]);
        assert_eq!(exact_ged(&tri, &path).unwrap(), 1);
        let s = ged_similarity(&tri, &path).unwrap();
        assert!((s - (-2.0f64 / 6.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn identical_graphs_score_one() {
        let p = g(3, &[(0, 1)]);
        assert_eq!(ged_similarity(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn similarity_decreases_with_distance() {
        let empty = g(6, &[]);
        let mut prev = 1.0;
        let mut edges = vec![];
        for (u, v) in [(0, 1), (2, 3), (4, 5), (0, 2), (1, 3)] {
            edges.push((u, v));
            let s = ged_similarity(&empty, &g(6, &edges)).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn size_bound_is_reported() {
        let big = g(9, &[]);
        let err = exact_ged(&big, &g(2, &[])).unwrap_err();
        assert!(err.to_string().contains('8'), "{err}");
    }
}
