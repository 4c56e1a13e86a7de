//! Synthetic similarity benchmark.
//!
//! Base graphs come from two random-graph families (Erdős–Rényi and
//! preferential attachment) and the family is the private property. A
//! positive pair is two independent edge rewirings of one base graph; a
//! negative pair rewires two distinct base graphs. Base graphs are split
//! across train/val/test before any pair is drawn, so no structure is shared
//! between splits.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ged_similarity, Dataset, Graph, GraphPair, Split, Task, FAMILY, GED_MAX_NODES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub task: Task,
    pub base_graphs: usize,
    pub pairs: SplitCounts,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Fraction of edges rewired per perturbation.
    pub perturb: f64,
    /// Share of base graphs drawn from the Erdős–Rényi family.
    pub er_fraction: f64,
    pub er_p: f64,
    pub pa_k: usize,
    pub feature_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            task: Task::Classification,
            base_graphs: 60,
            pairs: SplitCounts {
                train: 500,
                val: 100,
                test: 100,
            },
            min_nodes: 20,
            max_nodes: 40,
            perturb: 0.10,
            er_fraction: 0.5,
            er_p: 0.15,
            pa_k: 2,
            feature_dim: 8,
        }
    }
}

impl GeneratorConfig {
    /// Small graphs with exact edit-distance similarity labels.
    pub fn regression() -> Self {
        GeneratorConfig {
            task: Task::Regression,
            min_nodes: 5,
            max_nodes: GED_MAX_NODES,
            er_p: 0.3,
            perturb: 0.2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_nodes < 3 {
            return Err(Error::invalid(format!(
                "min_nodes must be at least 3 (got {})",
                self.min_nodes
            )));
        }
        if self.max_nodes < self.min_nodes {
            return Err(Error::invalid("max_nodes is below min_nodes"));
        }
        if !(0.0..=0.5).contains(&self.perturb) {
            return Err(Error::invalid(format!(
                "perturbation rate {} outside [0, 0.5]",
                self.perturb
            )));
        }
        if !(0.0..=1.0).contains(&self.er_fraction) || !(0.0..=1.0).contains(&self.er_p) {
            return Err(Error::invalid(
                "family mix and edge probability must lie in [0, 1]",
            ));
        }
        if self.base_graphs < 2 || self.feature_dim == 0 || self.pa_k == 0 {
            return Err(Error::invalid(
                "need at least 2 base graphs, a positive feature dim and pa_k ≥ 1",
            ));
        }
        if self.task == Task::Regression && self.max_nodes > GED_MAX_NODES {
            return Err(Error::GedBound {
                bound: GED_MAX_NODES,
                n1: self.max_nodes,
                n2: self.max_nodes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    ErdosRenyi,
    PreferentialAttachment,
}

impl Family {
    fn label(self) -> &'static str {
        match self {
            Family::ErdosRenyi => "er",
            Family::PreferentialAttachment => "pa",
        }
    }
}

struct Base {
    family: Family,
    n: usize,
    edges: Vec<(usize, usize)>,
}

fn erdos_renyi(n: usize, p: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Barabási–Albert growth from a (k+1)-clique.
fn preferential_attachment(n: usize, k: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let seed = (k + 1).min(n);
    let mut edges = Vec::new();
    let mut endpoints = Vec::new();
    for u in 0..seed {
        for v in (u + 1)..seed {
            edges.push((u, v));
            endpoints.extend([u, v]);
        }
    }
    for v in seed..n {
        let mut targets = HashSet::new();
        while targets.len() < k.min(v) {
            let t = if endpoints.is_empty() {
                rng.gen_range(0..v)
            } else {
                endpoints[rng.gen_range(0..endpoints.len())]
            };
            targets.insert(t);
        }
        let mut targets: Vec<usize> = targets.into_iter().collect();
        targets.sort_unstable();
        for t in targets {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }
    edges
}

/// Replaces `ceil(rate·|E|)` random edges with random non-edges.
pub fn rewire(n: usize, edges: &[(usize, usize)], rate: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    let k = (rate * edges.len() as f64).ceil() as usize;
    if k == 0 {
        return edges.to_vec();
    }
    let removed: HashSet<usize> = rand::seq::index::sample(rng, edges.len(), k.min(edges.len()))
        .into_iter()
        .collect();
    let mut kept: Vec<(usize, usize)> = edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, &e)| e)
        .collect();
    let present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let mut candidates = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if !present.contains(&(u, v)) {
                candidates.push((u, v));
            }
        }
    }
    let add = removed.len().min(candidates.len());
    for i in rand::seq::index::sample(rng, candidates.len(), add) {
        kept.push(candidates[i]);
    }
    kept
}

/// One-hot degree buckets; degrees at or above `f−1` share the last bucket.
pub fn degree_features(n: usize, edges: &[(usize, usize)], f: usize) -> Tensor {
    let mut deg = vec![0usize; n];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut data = vec![0.0; n * f];
    for (i, d) in deg.into_iter().enumerate() {
        data[i * f + d.min(f - 1)] = 1.0;
    }
    Tensor::matrix(n, f, data).expect("n×f")
}

/// Splits `total` proportionally to `weights` (largest remainder), then
/// guarantees one item to every positive-weight bucket when possible.
fn allocate(total: usize, weights: &[usize]) -> Vec<usize> {
    let wsum: usize = weights.iter().sum();
    if wsum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| total as f64 * w as f64 / wsum as f64)
        .collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &i in order.iter().cycle().take(left * weights.len().max(1)) {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    for i in 0..weights.len() {
        if weights[i] > 0 && out[i] == 0 {
            let donor = (0..weights.len())
                .max_by_key(|&j| out[j])
                .expect("non-empty");
            if out[donor] > 1 {
                out[donor] -= 1;
                out[i] += 1;
            }
        }
    }
    out
}

pub fn generate_synthetic_dataset(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = rng::stream(seed, &[rng::tag("generate")]);

    let n_er = (config.base_graphs as f64 * config.er_fraction).round() as usize;
    let mut families: Vec<Family> = (0..config.base_graphs)
        .map(|i| {
            if i < n_er {
                Family::ErdosRenyi
            } else {
                Family::PreferentialAttachment
            }
        })
        .collect();
    families.shuffle(&mut rng);
    let bases: Vec<Base> = families
        .into_iter()
        .map(|family| {
            let n = rng.gen_range(config.min_nodes..=config.max_nodes);
            let edges = match family {
                Family::ErdosRenyi => erdos_renyi(n, config.er_p, &mut rng),
                Family::PreferentialAttachment => preferential_attachment(n, config.pa_k, &mut rng),
            };
            Base { family, n, edges }
        })
        .collect();

    // Partition base graphs across splits, family by family.
    let weights: Vec<usize> = Split::ALL.iter().map(|&s| config.pairs.get(s)).collect();
    let mut split_bases: [Vec<usize>; 3] = Default::default();
    for fam in [Family::ErdosRenyi, Family::PreferentialAttachment] {
        let mut ids: Vec<usize> = (0..bases.len())
            .filter(|&i| bases[i].family == fam)
            .collect();
        ids.shuffle(&mut rng);
        let counts = allocate(ids.len(), &weights);
        let mut it = ids.into_iter();
        for (s, &c) in counts.iter().enumerate() {
            split_bases[s].extend(it.by_ref().take(c));
        }
    }
    for (s, split) in Split::ALL.iter().enumerate() {
        if config.pairs.get(*split) > 0 && split_bases[s].len() < 2 {
            return Err(Error::invalid(format!(
                "{split} split needs at least 2 base graphs; increase base_graphs"
            )));
        }
        split_bases[s].sort_unstable();
    }

    let mut graphs = Vec::new();
    let mut pairs: [Vec<GraphPair>; 3] = Default::default();
    let mut counter = 0usize;
    let mut variant = |b: usize, rng: &mut Rng, graphs: &mut Vec<Graph>| -> Result<usize> {
        let base = &bases[b];
        let edges = rewire(base.n, &base.edges, config.perturb, rng);
        let feats = degree_features(base.n, &edges, config.feature_dim);
        let mut props = BTreeMap::new();
        props.insert(FAMILY.to_string(), base.family.label().to_string());
        let g = Graph::new(format!("b{b:03}v{counter:05}"), base.n, feats, edges, props)?;
        counter += 1;
        graphs.push(g);
        Ok(graphs.len() - 1)
    };

    for (s, split) in Split::ALL.iter().enumerate() {
        let total = config.pairs.get(*split);
        let positives = total / 2;
        let mut labels: Vec<bool> = (0..total).map(|i| i < positives).collect();
        labels.shuffle(&mut rng);
        let pool = &split_bases[s];
        for positive in labels {
            let (b1, b2) = if positive {
                let b = pool[rng.gen_range(0..pool.len())];
                (b, b)
            } else {
                let picked = rand::seq::index::sample(&mut rng, pool.len(), 2);
                (pool[picked.index(0)], pool[picked.index(1)])
            };
            let i1 = variant(b1, &mut rng, &mut graphs)?;
            let i2 = variant(b2, &mut rng, &mut graphs)?;
            let label = match config.task {
                Task::Classification => f64::from(u8::from(positive)),
                Task::Regression => ged_similarity(&graphs[i1], &graphs[i2])?,
            };
            pairs[s].push(GraphPair {
                g1: graphs[i1].id().to_string(),
                g2: graphs[i2].id().to_string(),
                label,
            });
        }
    }

    Dataset::new(
        config.task,
        config.feature_dim,
        seed,
        serde_json::to_value(config)?,
        graphs,
        pairs,
    )
}
