//! Slow, obviously-correct reference implementations.

use ppgm::graphs::Graph;

/// Fraction of (positive, negative) pairs ordered correctly, ties 1/2, as
/// an exact rational.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> (u128, u128) {
    let mut twice = 0u128;
    let mut pairs = 0u128;
    for (&si, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (&sj, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    (twice, 2 * pairs)
}

/// Exhaustive search: pad the smaller graph with isolated dummy nodes and try
/// every bijection onto the larger one.
pub fn brute_force_ged(g1: &Graph, g2: &Graph) -> usize {
    let (small, large) = if g1.num_nodes() <= g2.num_nodes() {
        (g1, g2)
    } else {
        (g2, g1)
    };
    let n = large.num_nodes();
    let k = small.num_nodes();
    let mut a1 = vec![false; n * n];
    for &(u, v) in small.edges() {
        a1[u * n + v] = true;
        a1[v * n + u] = true;
    }
    let mut a2 = vec![false; n * n];
    for &(u, v) in large.edges() {
        a2[u * n + v] = true;
        a2[v * n + u] = true;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = usize::MAX;
    permute(&mut perm, 0, &mut |p| {
        let mut cost = n - k;
        for i in 0..n {
            for j in i + 1..n {
                if a1[i * n + j] != a2[p[i] * n + p[j]] {
                    cost += 1;
                }
            }
        }
        best = best.min(cost);
    });
    best
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}
