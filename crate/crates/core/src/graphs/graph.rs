use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// An undirected graph with node features and private graph-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    id: String,
    num_nodes: usize,
    features: Tensor,
    edges: Vec<(usize, usize)>,
    props: BTreeMap<String, String>,
}

impl Graph {
    /// Edges are stored with the smaller endpoint first; self-loops,
    /// duplicates, and out-of-range endpoints are rejected.
    pub fn new(
        id: impl Into<String>,
        num_nodes: usize,
        features: Tensor,
        edges: Vec<(usize, usize)>,
        props: BTreeMap<String, String>,
    ) -> Result<Self> {
        let id = id.into();
        if features.shape().len() != 2 || features.rows() != num_nodes {
            return Err(Error::invalid(format!(
                "graph {id}: feature matrix {:?} does not have {num_nodes} rows",
                features.shape()
            )));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "graph {id}: edge ({u},{v}) has an endpoint outside [0,{num_nodes})"
                )));
            }
            if u == v {
                return Err(Error::invalid(format!("graph {id}: self-loop at node {u}")));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(Error::invalid(format!(
                    "graph {id}: duplicate edge ({u},{v})"
                )));
            }
            canon.push(e);
        }
        Ok(Graph {
            id,
            num_nodes,
            features,
            edges: canon,
            props,
        })
    }

    /// A featureless graph, for structural computations such as edit distance.
    pub fn structure(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Graph::new(
            "",
            num_nodes,
            Tensor::zeros(&[num_nodes, 0]),
            edges,
            BTreeMap::new(),
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn props(&self) -> &BTreeMap<String, String> {
        &self.props
    }

    pub fn prop(&self, name: &str) -> Option<&str> {
        self.props.get(name).map(String::as_str)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Dense boolean adjacency, row-major.
    pub fn adjacency(&self) -> Vec<bool> {
        let n = self.num_nodes;
        let mut a = vec![false; n * n];
        for &(u, v) in &self.edges {
            a[u * n + v] = true;
            a[v * n + u] = true;
        }
        a
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        if perm.len() != n
            || perm.iter().collect::<HashSet<_>>().len() != n
            || perm.iter().any(|&p| p >= n)
        {
            return Err(Error::invalid("not a permutation of the node set"));
        }
        let f = self.feature_dim();
        let mut feats = vec![0.0; n * f];
        for (old, &new) in perm.iter().enumerate() {
            feats[new * f..(new + 1) * f].copy_from_slice(self.features.row_slice(old));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u], perm[v]))
            .collect();
        Graph::new(
            self.id.clone(),
            n,
            Tensor::matrix(n, f, feats)?,
            edges,
            self.props.clone(),
        )
    }
}

/// The GCN propagation matrix `D̃^{-1/2}(A+I)D̃^{-1/2}`, where `D̃` is the
/// degree matrix of `A+I`.
pub fn normalized_adjacency(g: &Graph) -> Tensor {
    let n = g.num_nodes();
    let deg = g.degrees();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = inv_sqrt[i] * inv_sqrt[i];
    }
    for &(u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        a[u * n + v] = w;
        a[v * n + u] = w;
    }
    Tensor::matrix(n, n, a).expect("n×n")
}

/// A graph together with the tensors the encoders consume.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub id: String,
    pub adjacency: Tensor,
    pub features: Tensor,
}

impl PreparedGraph {
    pub fn new(g: &Graph) -> Self {
        PreparedGraph {
            id: g.id().to_string(),
            adjacency: normalized_adjacency(g),
            features: g.features().clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}
