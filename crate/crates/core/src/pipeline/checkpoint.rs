//! Checkpoint files: one JSON document with base64 little-endian tensors.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::graphs::Task;
use crate::model::{HyperParams, Model, ModelFamily};
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs_completed: usize,
    /// Validation AUC (classification) or MSE (regression) of the kept
    /// parameters; absent before any epoch ran.
    pub best_val_metric: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn tensor_json(t: &Tensor) -> Value {
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    for x in t.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    json!({"shape": t.shape(), "data_b64": B64.encode(bytes)})
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    data_b64: String,
}

fn tensor_from(name: &str, v: Value) -> Result<Tensor> {
    let rec: TensorRecord =
        serde_json::from_value(v).map_err(|e| err(format!("tensor {name}: {e}")))?;
    let bytes = B64
        .decode(&rec.data_b64)
        .map_err(|e| err(format!("tensor {name}: {e}")))?;
    let expected: usize = rec.shape.iter().product();
    if bytes.len() != expected * 8 {
        return Err(err(format!(
            "tensor {name}: {} bytes of data for shape {:?} (expected {})",
            bytes.len(),
            rec.shape,
            expected * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(rec.shape, data).map_err(|e| err(format!("tensor {name}: {e}")))
}

impl Checkpoint {
    pub fn to_json(&self) -> Value {
        let m = &self.model;
        let mut hyper = serde_json::to_value(m.hyper).expect("hyperparameters serialize");
        let obj = hyper
            .as_object_mut()
            .expect("struct serializes to an object");
        obj.insert("f".into(), json!(m.feature_dim));
        obj.insert("task".into(), json!(m.task.as_str()));
        let params: Map<String, Value> = m
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tensor_json(t)))
            .collect();
        json!({
            "version": CHECKPOINT_VERSION,
            "family": m.family.as_str(),
            "hyper": hyper,
            "params": params,
            "meta": self.meta,
        })
    }

    pub fn from_json(v: Value) -> Result<Self> {
        let Value::Object(mut root) = v else {
            return Err(err("document is not an object"));
        };
        let version = root
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| err("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let family: ModelFamily = root
            .get("family")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing family"))?
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        let Some(Value::Object(mut hyper)) = root.remove("hyper") else {
            return Err(err("missing hyper"));
        };
        let f = hyper
            .remove("f")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| err("hyper.f missing"))? as usize;
        let task: Task = hyper
            .remove("task")
            .and_then(|v| v.as_str().map(str::to_string))
            .ok_or_else(|| err("hyper.task missing"))?
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        let hyper: HyperParams =
            serde_json::from_value(Value::Object(hyper)).map_err(|e| err(format!("hyper: {e}")))?;
        let Some(Value::Object(params)) = root.remove("params") else {
            return Err(err("missing params"));
        };
        let mut set = ParamSet::new();
        for (name, v) in params {
            let t = tensor_from(&name, v)?;
            set.insert(name, t);
        }
        let meta: CheckpointMeta =
            serde_json::from_value(root.remove("meta").ok_or_else(|| err("missing meta"))?)
                .map_err(|e| err(format!("meta: {e}")))?;
        let model =
            Model::from_params(family, task, f, hyper, set).map_err(|e| err(e.to_string()))?;
        Ok(Checkpoint { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_string(&self.to_json())? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let v: Value =
            serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_json(v)
    }
}

/// Parameter memory at 32-bit deployment precision.
pub fn model_size_bytes(c: &Checkpoint) -> usize {
    c.model.param_count() * 4
}
