//! Trainable architectures: the split-execution PPGM model and the SGNN,
//! SGNN+LDP and NodeMatch baselines.

mod forward;
mod loss;
mod noise;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use forward::{
    score_pair, AttentionOutput, DeviceTrace, ModelTape, PairOutput, SessionNoise, Side,
};
pub use loss::{map_label, mse, mse_loss};
pub use noise::ldp_noise;

use crate::error::{Error, Result};
use crate::graphs::Task;
use crate::numerics::{ParamSet, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "ppgm")]
    Ppgm,
    #[serde(rename = "sgnn")]
    Sgnn,
    #[serde(rename = "sgnn-ldp")]
    SgnnLdp,
    #[serde(rename = "nodematch")]
    NodeMatch,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Ppgm,
        ModelFamily::Sgnn,
        ModelFamily::SgnnLdp,
        ModelFamily::NodeMatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Ppgm => "ppgm",
            ModelFamily::Sgnn => "sgnn",
            ModelFamily::SgnnLdp => "sgnn-ldp",
            ModelFamily::NodeMatch => "nodematch",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppgm" => Ok(ModelFamily::Ppgm),
            "sgnn" => Ok(ModelFamily::Sgnn),
            "sgnn-ldp" | "sgnn_ldp" => Ok(ModelFamily::SgnnLdp),
            "nodematch" => Ok(ModelFamily::NodeMatch),
            other => Err(Error::invalid(format!("unknown model family {other:?}"))),
        }
    }
}

/// Layer replacements used by the ablation study. All off is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Fuse own pooled vectors with the device's own messages instead of the
    /// incoming ones.
    pub no_obfuscation: bool,
    /// Messages are the mean of node representations instead of
    /// context-attentive pools.
    pub no_context_codes: bool,
    /// Message-guided pools are replaced by the node mean.
    pub no_ng_matching: bool,
}

impl Ablations {
    pub fn is_none(&self) -> bool {
        !(self.no_obfuscation || self.no_context_codes || self.no_ng_matching)
    }

    pub fn label(&self) -> String {
        let mut parts = vec![];
        if self.no_obfuscation {
            parts.push("no-obf");
        }
        if self.no_context_codes {
            parts.push("no-ctx");
        }
        if self.no_ng_matching {
            parts.push("no-ngm");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }

    pub fn enable(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no-obf" => self.no_obfuscation = true,
            "no-ctx" => self.no_context_codes = true,
            "no-ngm" => self.no_ng_matching = true,
            other => {
                return Err(Error::invalid(format!(
                    "unknown ablation {other:?} (no-obf|no-ctx|no-ngm)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub d: usize,
    pub layers: usize,
    pub m: usize,
    pub heads: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    #[serde(default)]
    pub ablations: Ablations,
    /// Laplace scale for the SGNN+LDP baseline.
    #[serde(default)]
    pub ldp_b: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d: 100,
            layers: 3,
            m: 8,
            heads: 4,
            lr: 5e-4,
            epochs: 100,
            batch: 10,
            ablations: Ablations::default(),
            ldp_b: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.m == 0 || self.heads == 0 || self.batch == 0 {
            return Err(Error::invalid(
                "d, layers, m, heads and batch must be positive",
            ));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d={} is not divisible by heads={}",
                self.d, self.heads
            )));
        }
        if self.d < 2 {
            return Err(Error::invalid("d must be at least 2"));
        }
        if !(self.ldp_b >= 0.0) {
            return Err(Error::invalid(format!(
                "LDP scale must be non-negative (got {})",
                self.ldp_b
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// uniform(±1/√fan_in)
    Uniform,
    Zeros,
    /// N(0, 0.1²)
    SmallNormal,
}

/// Everything needed to run or train one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub family: ModelFamily,
    pub task: Task,
    pub feature_dim: usize,
    pub hyper: HyperParams,
    pub params: ParamSet,
}

fn param_layout(
    family: ModelFamily,
    task: Task,
    f: usize,
    h: &HyperParams,
) -> Vec<(String, Vec<usize>, Init)> {
    let d = h.d;
    let mut out = Vec::new();
    for l in 0..h.layers {
        let rows = if l == 0 { f } else { d };
        out.push((format!("gcn.w{l}"), vec![rows, d], Init::Uniform));
    }
    if family == ModelFamily::Ppgm {
        out.push(("context_codes".into(), vec![h.m, d], Init::SmallNormal));
        for block in ["ctx_attn", "msg_attn"] {
            for w in ["w_q", "w_k", "w_v", "w_o"] {
                out.push((format!("{block}.{w}"), vec![d, d], Init::Uniform));
            }
        }
        for gate in ["i", "f", "g", "o"] {
            out.push((format!("lstm.w_{gate}"), vec![3 * d, d], Init::Uniform));
        }
        for gate in ["i", "f", "g", "o"] {
            out.push((format!("lstm.b_{gate}"), vec![1, d], Init::Zeros));
        }
    }
    if task == Task::Regression {
        let input = if family == ModelFamily::NodeMatch {
            4 * d
        } else {
            2 * d
        };
        let half = (d / 2).max(1);
        out.push(("reg_head.w1".into(), vec![input, d], Init::Uniform));
        out.push(("reg_head.b1".into(), vec![1, d], Init::Zeros));
        out.push(("reg_head.w2".into(), vec![d, half], Init::Uniform));
        out.push(("reg_head.b2".into(), vec![1, half], Init::Zeros));
        out.push(("reg_head.w3".into(), vec![half, 1], Init::Uniform));
        out.push(("reg_head.b3".into(), vec![1, 1], Init::Zeros));
    }
    out
}

impl Model {
    /// Expected parameter names and shapes for a configuration.
    pub fn param_shapes(
        family: ModelFamily,
        task: Task,
        feature_dim: usize,
        hyper: &HyperParams,
    ) -> Vec<(String, Vec<usize>)> {
        param_layout(family, task, feature_dim, hyper)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect()
    }

    pub fn init(
        family: ModelFamily,
        task: Task,
        feature_dim: usize,
        hyper: HyperParams,
        rng: &mut Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        if feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut params = ParamSet::new();
        for (name, shape, init) in param_layout(family, task, feature_dim, &hyper) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::SmallNormal => (0..n).map(|_| normal.sample(rng)).collect(),
                Init::Uniform => {
                    let bound = 1.0 / (shape[0] as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
            };
            params.insert(name, Tensor::new(shape, data)?.with_grad(true));
        }
        Ok(Model {
            family,
            task,
            feature_dim,
            hyper,
            params,
        })
    }

    /// Builds a model around existing parameters, checking names and shapes.
    pub fn from_params(
        family: ModelFamily,
        task: Task,
        feature_dim: usize,
        hyper: HyperParams,
        params: ParamSet,
    ) -> Result<Self> {
        hyper.validate()?;
        let expected = Self::param_shapes(family, task, feature_dim, &hyper);
        for (name, shape) in &expected {
            match params.get(name) {
                None => return Err(Error::invalid(format!("missing parameter tensor {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::invalid(format!(
                        "parameter tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = params
            .keys()
            .find(|k| !expected.iter().any(|(n, _)| n == *k))
        {
            return Err(Error::invalid(format!(
                "unexpected parameter tensor {extra}"
            )));
        }
        let params = params
            .into_iter()
            .map(|(k, v)| (k, v.with_grad(true)))
            .collect();
        Ok(Model {
            family,
            task,
            feature_dim,
            hyper,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }
}
