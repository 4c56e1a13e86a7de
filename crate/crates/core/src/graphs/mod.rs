//! Graph data model, the synthetic benchmark, the exact edit-distance
//! oracle, and dataset files.

mod ged;
mod generate;
mod graph;
mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

pub use ged::{exact_ged, ged_similarity, GED_MAX_NODES};
pub use generate::{
    degree_features, generate_synthetic_dataset, rewire, GeneratorConfig, SplitCounts,
};
pub use graph::{normalized_adjacency, Graph, PreparedGraph};
pub use io::{read_dataset, write_dataset};

use crate::error::{Error, Result};

/// Name of the private property carried by every generated graph.
pub const FAMILY: &str = "family";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Task {
    #[serde(rename = "cls")]
    Classification,
    #[serde(rename = "reg")]
    Regression,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "cls",
            Task::Regression => "reg",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Task::Classification),
            "reg" => Ok(Task::Regression),
            other => Err(Error::invalid(format!(
                "unknown task kind {other:?} (expected cls|reg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Two graph ids and their similarity label: a class in {0,1} or a score in
/// [0,1] depending on the dataset task.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub g1: String,
    pub g2: String,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task: Task,
    feature_dim: usize,
    seed: u64,
    config: serde_json::Value,
    graphs: Vec<Graph>,
    index: HashMap<String, usize>,
    pairs: [Vec<GraphPair>; 3],
}

impl Dataset {
    /// Validates ids, labels, feature widths and split disjointness.
    pub fn new(
        task: Task,
        feature_dim: usize,
        seed: u64,
        config: serde_json::Value,
        graphs: Vec<Graph>,
        pairs: [Vec<GraphPair>; 3],
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(graphs.len());
        for (i, g) in graphs.iter().enumerate() {
            if g.num_nodes() == 0 {
                return Err(Error::invalid(format!("graph {} is empty", g.id())));
            }
            if g.feature_dim() != feature_dim {
                return Err(Error::invalid(format!(
                    "graph {} has feature dim {} (dataset declares {feature_dim})",
                    g.id(),
                    g.feature_dim()
                )));
            }
            if index.insert(g.id().to_string(), i).is_some() {
                return Err(Error::invalid(format!("duplicate graph id {}", g.id())));
            }
        }
        let mut owner: HashMap<&str, Split> = HashMap::new();
        for split in Split::ALL {
            for p in &pairs[split.index()] {
                for id in [&p.g1, &p.g2] {
                    if !index.contains_key(id.as_str()) {
                        return Err(Error::invalid(format!(
                            "pair references unknown graph {id}"
                        )));
                    }
                    if let Some(prev) = owner.insert(id.as_str(), split) {
                        if prev != split {
                            return Err(Error::invalid(format!(
                                "graph {id} appears in both {prev} and {split}"
                            )));
                        }
                    }
                }
                let ok = match task {
                    Task::Classification => p.label == 0.0 || p.label == 1.0,
                    Task::Regression => (0.0..=1.0).contains(&p.label),
                };
                if !ok {
                    return Err(Error::invalid(format!(
                        "label {} out of range for task {}",
                        p.label,
                        task.as_str()
                    )));
                }
            }
        }
        Ok(Dataset {
            task,
            feature_dim,
            seed,
            config,
            graphs,
            index,
            pairs,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &serde_json::Value {
        &self.config
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, id: &str) -> Option<&Graph> {
        self.index.get(id).map(|&i| &self.graphs[i])
    }

    pub fn graph_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn pairs(&self, split: Split) -> &[GraphPair] {
        &self.pairs[split.index()]
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// Ids of graphs referenced by pairs of `split`, in sorted order.
    pub fn graph_ids(&self, split: Split) -> Vec<String> {
        let ids: BTreeSet<&str> = self
            .pairs(split)
            .iter()
            .flat_map(|p| [p.g1.as_str(), p.g2.as_str()])
            .collect();
        ids.into_iter().map(str::to_string).collect()
    }

    /// Encoder-ready tensors for every graph, indexed like [`Dataset::graphs`].
    pub fn prepare(&self) -> Vec<PreparedGraph> {
        self.graphs.iter().map(PreparedGraph::new).collect()
    }

    /// Count of graphs per value of property `name`.
    pub fn property_counts(&self, name: &str) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for g in &self.graphs {
            if let Some(v) = g.prop(name) {
                *out.entry(v.to_string()).or_insert(0) += 1;
            }
        }
        out
    }

    /// One-paragraph human summary; degenerate splits are flagged.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "task={} f={} graphs={} seed={}",
            self.task.as_str(),
            self.feature_dim,
            self.graphs.len(),
            self.seed
        );
        for split in Split::ALL {
            let pairs = self.pairs(split);
            let pos = pairs.iter().filter(|p| p.label >= 0.5).count();
            s.push_str(&format!(
                " | {split}: {} pairs ({pos} positive)",
                pairs.len()
            ));
            if pairs.is_empty() {
                s.push_str(" [WARNING: empty split]");
            }
        }
        s
    }
}
