//! Forward computation on a tape. Every device-level step is a separate
//! method so that the split-execution protocol and the single-process path
//! call exactly the same operations in the same order.

use std::collections::BTreeMap;

use super::{ldp_noise, Model, ModelFamily};
use crate::error::{Error, Result};
use crate::graphs::{PreparedGraph, Task};
use crate::numerics::{cosine, Tape, Tensor, Var};
use crate::rng::{self, Rng};

/// Which data-holding device a computation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::A => "A",
            Side::B => "B",
        }
    }
}

/// Seed for the per-session Laplace noise of the LDP baseline. Each device
/// draws from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionNoise {
    pub seed: u64,
}

impl SessionNoise {
    pub fn new(seed: u64) -> Self {
        SessionNoise { seed }
    }

    pub fn rng(&self, side: Side) -> Rng {
        rng::stream(self.seed, &[rng::tag("ldp"), rng::tag(side.as_str())])
    }
}

pub struct AttentionOutput {
    /// One row per query.
    pub out: Var,
    /// Per-head attention matrices, queries × keys.
    pub weights: Vec<Var>,
}

/// Everything one device computed for a pair. Only some of these cross the
/// device boundary, depending on the family.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeviceTrace {
    pub nodes: Option<Var>,
    pub messages: Option<Var>,
    pub pooled: Option<Var>,
    pub obfuscated: Option<Var>,
    pub graph_rep: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct PairOutput {
    pub score: Var,
    pub a: DeviceTrace,
    pub b: DeviceTrace,
}

/// A tape bound to one model's parameters. Parameters are placed on the tape
/// the first time an operation needs them.
pub struct ModelTape<'m> {
    pub model: &'m Model,
    pub tape: Tape,
    bound: BTreeMap<String, Var>,
}

impl<'m> ModelTape<'m> {
    pub fn new(model: &'m Model) -> Self {
        ModelTape {
            model,
            tape: Tape::new(),
            bound: BTreeMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .model
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("model has no parameter {name}")))?;
        let v = self.tape.param(name, t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    fn d(&self) -> usize {
        self.model.hyper.d
    }

    fn m(&self) -> usize {
        self.model.hyper.m
    }

    /// Stacked graph convolutions, ReLU after every layer, no bias.
    pub fn gcn_encode(&mut self, g: &PreparedGraph) -> Result<Var> {
        if g.features.cols() != self.model.feature_dim {
            return Err(Error::invalid(format!(
                "graph {} has feature dimension {}, model expects {}",
                g.id,
                g.features.cols(),
                self.model.feature_dim
            )));
        }
        if g.num_nodes() == 0 {
            return Err(Error::invalid(format!("graph {} is empty", g.id)));
        }
        let a = self.tape.constant(g.adjacency.clone());
        let mut h = self.tape.constant(g.features.clone());
        for l in 0..self.model.hyper.layers {
            let w = self.param(&format!("gcn.w{l}"))?;
            let ah = self.tape.matmul(a, h)?;
            let z = self.tape.matmul(ah, w)?;
            h = self.tape.relu(z);
        }
        Ok(h)
    }

    /// Multi-head attention pooling of `nodes` for each row of `queries`.
    pub fn mha_pool(&mut self, block: &str, queries: Var, nodes: Var) -> Result<AttentionOutput> {
        let n = self.tape.value(nodes).rows();
        if n == 0 {
            return Err(Error::invalid("attention over an empty key set"));
        }
        let d = self.d();
        let heads = self.model.hyper.heads;
        let width = d / heads;
        let wq = self.param(&format!("{block}.w_q"))?;
        let wk = self.param(&format!("{block}.w_k"))?;
        let wv = self.param(&format!("{block}.w_v"))?;
        let wo = self.param(&format!("{block}.w_o"))?;
        let q = self.tape.matmul(queries, wq)?;
        let k = self.tape.matmul(nodes, wk)?;
        let v = self.tape.matmul(nodes, wv)?;
        let scale = 1.0 / (width as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = self.tape.slice_cols(q, hd * width, width)?;
            let kh = self.tape.slice_cols(k, hd * width, width)?;
            let vh = self.tape.slice_cols(v, hd * width, width)?;
            let kt = self.tape.transpose(kh)?;
            let s = self.tape.matmul(qh, kt)?;
            let s = self.tape.scale(s, scale);
            let att = self.tape.softmax(s);
            outs.push(self.tape.matmul(att, vh)?);
            weights.push(att);
        }
        let cat = self.tape.concat(&outs)?;
        let out = self.tape.matmul(cat, wo)?;
        Ok(AttentionOutput { out, weights })
    }

    fn repeat_mean(&mut self, nodes: Var) -> Result<Var> {
        let mean = self.tape.mean_rows(nodes)?;
        let rows = vec![mean; self.m()];
        self.tape.concat_rows(&rows)
    }

    /// Context-attentive messages, one row per context code.
    pub fn extract_messages(&mut self, nodes: Var) -> Result<Var> {
        if self.model.hyper.ablations.no_context_codes {
            return self.repeat_mean(nodes);
        }
        let codes = self.param("context_codes")?;
        Ok(self.mha_pool("ctx_attn", codes, nodes)?.out)
    }

    /// Own-graph pools guided by the incoming messages, one row per message.
    pub fn message_pool(&mut self, nodes: Var, incoming: Var) -> Result<Var> {
        let rows = self.tape.value(incoming).rows();
        if rows != self.m() {
            return Err(Error::invalid(format!(
                "expected {} incoming messages, got {rows}",
                self.m()
            )));
        }
        if self.model.hyper.ablations.no_ng_matching {
            return self.repeat_mean(nodes);
        }
        Ok(self.mha_pool("msg_attn", incoming, nodes)?.out)
    }

    /// LSTM over e_i = p_i ‖ g_i; returns the final hidden state as a 1×d row.
    pub fn obfuscate(&mut self, pooled: Var, messages: Var) -> Result<Var> {
        let m = self.tape.value(pooled).rows();
        if m != self.tape.value(messages).rows() || m == 0 {
            return Err(Error::invalid(format!(
                "obfuscation needs equal, non-empty lists (got {m} and {})",
                self.tape.value(messages).rows()
            )));
        }
        let d = self.d();
        let gates: Vec<(Var, Var)> = ["i", "f", "g", "o"]
            .iter()
            .map(|g| {
                Ok((
                    self.param(&format!("lstm.w_{g}"))?,
                    self.param(&format!("lstm.b_{g}"))?,
                ))
            })
            .collect::<Result<_>>()?;
        let mut h = self.tape.constant(Tensor::zeros(&[1, d]));
        let mut c = self.tape.constant(Tensor::zeros(&[1, d]));
        for i in 0..m {
            let p = self.tape.slice_rows(pooled, i, 1)?;
            let g = self.tape.slice_rows(messages, i, 1)?;
            let z = self.tape.concat(&[p, g, h])?;
            let mut pre = Vec::with_capacity(4);
            for &(w, b) in &gates {
                let zw = self.tape.matmul(z, w)?;
                pre.push(self.tape.add_row(zw, b)?);
            }
            let ig = self.tape.sigmoid(pre[0]);
            let fg = self.tape.sigmoid(pre[1]);
            let cand = self.tape.tanh(pre[2]);
            let og = self.tape.sigmoid(pre[3]);
            let keep = self.tape.mul(fg, c)?;
            let write = self.tape.mul(ig, cand)?;
            c = self.tape.add(keep, write)?;
            let tc = self.tape.tanh(c);
            h = self.tape.mul(og, tc)?;
        }
        Ok(h)
    }

    pub fn predict_classification(&mut self, o1: Var, o2: Var) -> Result<Var> {
        let degenerate = |t: &Tensor| t.data().iter().all(|&x| x == 0.0);
        if degenerate(self.tape.value(o1)) || degenerate(self.tape.value(o2)) {
            log::debug!("cosine score with a zero vector, defined as 0");
        }
        cosine(&mut self.tape, o1, o2)
    }

    pub fn predict_regression(&mut self, o1: Var, o2: Var) -> Result<Var> {
        if !self.model.params.contains_key("reg_head.w1") {
            return Err(Error::invalid("model has no regression head"));
        }
        let x = self.tape.concat(&[o1, o2])?;
        let mut h = x;
        for layer in 1..=3 {
            let w = self.param(&format!("reg_head.w{layer}"))?;
            let b = self.param(&format!("reg_head.b{layer}"))?;
            let z = self.tape.matmul(h, w)?;
            let z = self.tape.add_row(z, b)?;
            h = if layer < 3 { self.tape.relu(z) } else { z };
        }
        Ok(self.tape.sigmoid(h))
    }

    /// Task-dependent scorer applied to the two communicated vectors.
    pub fn score(&mut self, r1: Var, r2: Var) -> Result<Var> {
        match self.model.task {
            Task::Classification => self.predict_classification(r1, r2),
            Task::Regression => self.predict_regression(r1, r2),
        }
    }

    /// SGNN device step: mean-pooled graph vector, noised for the LDP variant.
    pub fn graph_rep(&mut self, nodes: Var, side: Side, noise: SessionNoise) -> Result<Var> {
        let r = self.tape.mean_rows(nodes)?;
        if self.model.family != ModelFamily::SgnnLdp || self.model.hyper.ldp_b == 0.0 {
            return Ok(r);
        }
        let d = self.d();
        let eta = ldp_noise(&vec![0.0; d], self.model.hyper.ldp_b, &mut noise.rng(side))?;
        let eta = self.tape.constant(Tensor::row(eta));
        self.tape.add(r, eta)
    }

    /// NodeMatch scorer-side summary of one graph: its graph vector next to
    /// the mean over its nodes of softmax-weighted matches in the other graph.
    pub fn match_summary(&mut self, own_nodes: Var, own_rep: Var, other_nodes: Var) -> Result<Var> {
        let scale = 1.0 / (self.d() as f64).sqrt();
        let ot = self.tape.transpose(other_nodes)?;
        let s = self.tape.matmul(own_nodes, ot)?;
        let s = self.tape.scale(s, scale);
        let att = self.tape.softmax(s);
        let matched = self.tape.matmul(att, other_nodes)?;
        let pooled = self.tape.mean_rows(matched)?;
        self.tape.concat(&[own_rep, pooled])
    }

    /// Single-process forward pass for a pair with device A holding `g1`.
    pub fn forward_pair(
        &mut self,
        g1: &PreparedGraph,
        g2: &PreparedGraph,
        noise: SessionNoise,
    ) -> Result<PairOutput> {
        let h1 = self.gcn_encode(g1)?;
        let h2 = self.gcn_encode(g2)?;
        let mut a = DeviceTrace {
            nodes: Some(h1),
            ..Default::default()
        };
        let mut b = DeviceTrace {
            nodes: Some(h2),
            ..Default::default()
        };
        let score = match self.model.family {
            ModelFamily::Ppgm => {
                let m1 = self.extract_messages(h1)?;
                let m2 = self.extract_messages(h2)?;
                let (o1, p1) = self.device_fuse(h1, m1, m2)?;
                let (o2, p2) = self.device_fuse(h2, m2, m1)?;
                a.messages = Some(m1);
                a.pooled = Some(p1);
                a.obfuscated = Some(o1);
                b.messages = Some(m2);
                b.pooled = Some(p2);
                b.obfuscated = Some(o2);
                self.score(o1, o2)?
            }
            ModelFamily::Sgnn | ModelFamily::SgnnLdp => {
                let r1 = self.graph_rep(h1, Side::A, noise)?;
                let r2 = self.graph_rep(h2, Side::B, noise)?;
                a.graph_rep = Some(r1);
                b.graph_rep = Some(r2);
                self.score(r1, r2)?
            }
            ModelFamily::NodeMatch => {
                let r1 = self.graph_rep(h1, Side::A, noise)?;
                let r2 = self.graph_rep(h2, Side::B, noise)?;
                a.graph_rep = Some(r1);
                b.graph_rep = Some(r2);
                let z1 = self.match_summary(h1, r1, h2)?;
                let z2 = self.match_summary(h2, r2, h1)?;
                self.score(z1, z2)?
            }
        };
        Ok(PairOutput { score, a, b })
    }

    /// PPGM device step after receiving the other device's messages.
    /// Returns (obfuscated vector, pooled list).
    pub fn device_fuse(&mut self, nodes: Var, own: Var, incoming: Var) -> Result<(Var, Var)> {
        let pooled = self.message_pool(nodes, incoming)?;
        let fused_with = if self.model.hyper.ablations.no_obfuscation {
            own
        } else {
            incoming
        };
        let o = self.obfuscate(pooled, fused_with)?;
        Ok((o, pooled))
    }
}

/// Forward pass without keeping anything beyond the score.
pub fn score_pair(
    model: &Model,
    g1: &PreparedGraph,
    g2: &PreparedGraph,
    noise: SessionNoise,
) -> Result<f64> {
    let mut mt = ModelTape::new(model);
    let out = mt.forward_pair(g1, g2, noise)?;
    Ok(mt.value(out.score).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{Graph, Task};
    use crate::model::{Ablations, HyperParams};

    fn small(family: ModelFamily, task: Task, ablations: Ablations) -> Model {
        let h = HyperParams {
            d: 8,
            layers: 2,
            m: 3,
            heads: 2,
            ablations,
            ..Default::default()
        };
        Model::init(family, task, 3, h, &mut rng::stream(5, &[])).unwrap()
    }

    fn graph(n: usize, edges: &[(usize, usize)], shift: f64) -> PreparedGraph {
        let feats = Tensor::matrix(
            n,
            3,
            (0..n * 3)
                .map(|i| ((i as f64) * 0.37 + shift).sin())
                .collect(),
        )
        .unwrap();
        PreparedGraph::new(&Graph::new("g", n, feats, edges.to_vec(), Default::default()).unwrap())
    }

    #[test]
    fn single_key_attention_ignores_query() {
        let model = small(
            ModelFamily::Ppgm,
            Task::Classification,
            Ablations::default(),
        );
        let mut mt = ModelTape::new(&model);
        let g = graph(1, &[], 0.0);
        let h = mt.gcn_encode(&g).unwrap();
        let msgs = mt.extract_messages(h).unwrap();
        let t = mt.value(msgs).clone();
        for r in 1..3 {
            assert_eq!(t.row_slice(0), t.row_slice(r));
        }
    }

    #[test]
    fn attention_weights_are_distributions() {
        let model = small(
            ModelFamily::Ppgm,
            Task::Classification,
            Ablations::default(),
        );
        let mut mt = ModelTape::new(&model);
        let h = mt
            .gcn_encode(&graph(5, &[(0, 1), (1, 2), (3, 4)], 0.2))
            .unwrap();
        let codes = mt.param("context_codes").unwrap();
        let att = mt.mha_pool("ctx_attn", codes, h).unwrap();
        assert_eq!(att.weights.len(), 2);
        for w in att.weights {
            let t = mt.value(w);
            for r in 0..t.rows() {
                assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_lstm_gives_zero_output() {
        let mut model = small(
            ModelFamily::Ppgm,
            Task::Classification,
            Ablations::default(),
        );
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("lstm.") {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mut mt = ModelTape::new(&model);
        let p = mt.constant(Tensor::matrix(3, 8, vec![0.3; 24]).unwrap());
        let g = mt.constant(Tensor::matrix(3, 8, vec![-0.7; 24]).unwrap());
        let o = mt.obfuscate(p, g).unwrap();
        assert!(mt.value(o).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_graphs_score_one() {
        for family in ModelFamily::ALL {
            let model = small(family, Task::Classification, Ablations::default());
            let g = graph(4, &[(0, 1), (1, 2), (2, 3)], 0.1);
            let s = score_pair(&model, &g, &g, SessionNoise::new(0)).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "{family}: {s}");
        }
    }

    #[test]
    fn regression_head_zero_weights_half() {
        let mut model = small(ModelFamily::Ppgm, Task::Regression, Ablations::default());
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("reg_head.") {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let g1 = graph(4, &[(0, 1), (2, 3)], 0.1);
        let g2 = graph(3, &[(0, 1)], 0.9);
        assert_eq!(
            score_pair(&model, &g1, &g2, SessionNoise::new(0)).unwrap(),
            0.5
        );
    }

    #[test]
    fn regression_head_needs_head() {
        let model = small(
            ModelFamily::Ppgm,
            Task::Classification,
            Ablations::default(),
        );
        let mut mt = ModelTape::new(&model);
        let a = mt.constant(Tensor::row(vec![1.0; 8]));
        assert!(mt.predict_regression(a, a).is_err());
    }

    #[test]
    fn feature_mismatch_rejected() {
        let model = small(
            ModelFamily::Sgnn,
            Task::Classification,
            Ablations::default(),
        );
        let feats = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        let g = PreparedGraph::new(
            &Graph::new("x", 2, feats, vec![(0, 1)], Default::default()).unwrap(),
        );
        assert!(ModelTape::new(&model).gcn_encode(&g).is_err());
    }

    #[test]
    fn message_count_checked() {
        let model = small(
            ModelFamily::Ppgm,
            Task::Classification,
            Ablations::default(),
        );
        let mut mt = ModelTape::new(&model);
        let h = mt.gcn_encode(&graph(3, &[(0, 1)], 0.0)).unwrap();
        let wrong = mt.constant(Tensor::zeros(&[2, 8]));
        assert!(mt.message_pool(h, wrong).is_err());
    }
}
