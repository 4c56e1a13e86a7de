#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use std::collections::BTreeMap;

use ppgm::graphs::{degree_features, Graph, PreparedGraph, Task};
use ppgm::model::{HyperParams, Model, ModelFamily};
use ppgm::numerics::Tensor;
use ppgm::rng::{self, Rng};
use rand::Rng as _;

/// Undirected G(n, p) graph with one-hot degree features.
pub fn random_graph(id: &str, n: usize, p: f64, f: usize, rng: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let feats = degree_features(n, &edges, f);
    Graph::new(id, n, feats, edges, BTreeMap::new()).expect("valid random graph")
}

pub fn prepared(id: &str, n: usize, f: usize, rng: &mut Rng) -> PreparedGraph {
    PreparedGraph::new(&random_graph(id, n, 0.4, f, rng))
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub fn small_hyper() -> HyperParams {
    HyperParams {
        d: 16,
        layers: 3,
        m: 2,
        heads: 2,
        ..HyperParams::default()
    }
}

pub fn model(family: ModelFamily, task: Task, hyper: HyperParams, seed: u64) -> Model {
    Model::init(
        family,
        task,
        8,
        hyper,
        &mut rng::stream(seed, &[rng::tag("test-init")]),
    )
    .expect("valid model")
}

/// Random permutation of 0..n.
pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn default_dataset() -> ppgm::graphs::Dataset {
    ppgm::graphs::generate_synthetic_dataset(&ppgm::graphs::GeneratorConfig::default(), 7)
        .expect("default dataset")
}
