//! Property-inference evaluation: which representations each model family
//! exposes, and how well a black-box attacker trained on a shadow set can
//! recover a private graph property from them.

mod auc;
mod mlp;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use auc::{compute_auc, twice_u};
pub use mlp::{train_attacker, Attacker, AttackerConfig};

use crate::error::{Error, Result};
use crate::graphs::{Dataset, PreparedGraph, Split};
use crate::model::{Model, ModelFamily};
use crate::protocol::{interceptable, run_pairwise_session, Policy, RepTag, Sender, Session};
use crate::rng;

/// Representation kinds in the attack-surface table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceRep {
    /// Node-level representations.
    N,
    /// Graph-level representations.
    G,
    /// Obfuscated features.
    O,
}

impl fmt::Display for SurfaceRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SurfaceRep::N => "N",
            SurfaceRep::G => "G",
            SurfaceRep::O => "O",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSurface {
    pub reps: BTreeSet<SurfaceRep>,
    pub reconstruction_attackable: bool,
    pub property_inference_attackable: bool,
}

pub fn classify_attack_surface(family: &str) -> Result<AttackSurface> {
    let family: ModelFamily = family.parse()?;
    let (reps, reconstruction) = match family {
        ModelFamily::Ppgm => (vec![SurfaceRep::G, SurfaceRep::O], false),
        ModelFamily::Sgnn | ModelFamily::SgnnLdp => (vec![SurfaceRep::G], false),
        ModelFamily::NodeMatch => (vec![SurfaceRep::N, SurfaceRep::G], true),
    };
    Ok(AttackSurface {
        reps: reps.into_iter().collect(),
        reconstruction_attackable: reconstruction,
        property_inference_attackable: true,
    })
}

/// Uniform sample without replacement of `round(fraction · n)` training
/// graph ids (at least one), returned sorted.
pub fn build_shadow_set(ds: &Dataset, fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "shadow fraction must be in (0, 1], got {fraction}"
        )));
    }
    let train = ds.graph_ids(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("training split has no graphs"));
    }
    let k = ((fraction * train.len() as f64).round() as usize).clamp(1, train.len());
    let mut r = rng::stream(seed, &[rng::tag("shadow")]);
    let mut picked: Vec<String> = index::sample(&mut r, train.len(), k)
        .into_iter()
        .map(|i| train[i].clone())
        .collect();
    picked.sort();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSample {
    pub representation: Vec<f64>,
    pub property_label: bool,
    pub rep_kind: String,
    pub source_graph_id: String,
}

/// Binary encoding of a categorical graph property: the two observed values
/// in sorted order map to false and true.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyCoding {
    pub name: String,
    pub negative: String,
    pub positive: String,
}

impl PropertyCoding {
    pub fn from_dataset(ds: &Dataset, name: &str) -> Result<Self> {
        let counts = ds.property_counts(name);
        let values: Vec<&String> = counts.keys().collect();
        if values.len() != 2 {
            return Err(Error::invalid(format!(
                "property {name:?} must take exactly two values, found {values:?}"
            )));
        }
        Ok(PropertyCoding {
            name: name.to_string(),
            negative: values[0].clone(),
            positive: values[1].clone(),
        })
    }

    pub fn label(&self, ds: &Dataset, id: &str) -> Result<bool> {
        let g = ds
            .graph(id)
            .ok_or_else(|| Error::invalid(format!("unknown graph {id}")))?;
        match g.prop(&self.name) {
            Some(v) if v == self.positive => Ok(true),
            Some(v) if v == self.negative => Ok(false),
            other => Err(Error::invalid(format!(
                "graph {id} has property {}={other:?}",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub policy: Policy,
    pub seed: u64,
    /// Permit models that were never trained (null-model measurements).
    pub allow_untrained: bool,
    /// Label for partner and session streams so that disjoint graph sets
    /// draw independently.
    pub stream: String,
}

/// Runs one session per graph in `ids` (graph on device A, partner drawn
/// uniformly from the rest of `ids` on device B) and turns what device A
/// emitted into attack samples.
pub fn collect_attackable(
    model: &Model,
    epochs_completed: usize,
    ids: &[String],
    ds: &Dataset,
    property: &PropertyCoding,
    opts: &CollectOptions,
) -> Result<Vec<AttackSample>> {
    if epochs_completed == 0 && !opts.allow_untrained {
        return Err(Error::invalid("refusing to attack an untrained model"));
    }
    if ids.is_empty() {
        return Err(Error::invalid("no graphs to collect representations from"));
    }
    let prepared: Vec<PreparedGraph> = ids
        .iter()
        .map(|id| {
            ds.graph(id)
                .map(PreparedGraph::new)
                .ok_or_else(|| Error::invalid(format!("unknown graph {id}")))
        })
        .collect::<Result<_>>()?;
    let stream = rng::tag(&opts.stream);
    let mut partner_rng = rng::stream(opts.seed, &[rng::tag("partner"), stream]);
    let mut samples = Vec::new();
    for (i, g) in prepared.iter().enumerate() {
        let j = if ids.len() == 1 {
            0
        } else {
            let j = partner_rng.gen_range(0..ids.len() - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        };
        let session = Session::new(
            format!("{}:{}", opts.stream, g.id),
            rng::derive(opts.seed, &[rng::tag("session"), stream, i as u64]),
        );
        let (_, transcript) = run_pairwise_session(model, model, g, &prepared[j], &session)?;
        let own: Vec<_> = interceptable(&transcript)
            .into_iter()
            .filter(|v| v.sender == Sender::A)
            .collect();
        let label = property.label(ds, &g.id)?;
        let mut push = |representation: Vec<f64>, kind: &str| {
            samples.push(AttackSample {
                representation,
                property_label: label,
                rep_kind: kind.to_string(),
                source_graph_id: g.id.clone(),
            })
        };
        match model.family {
            ModelFamily::Ppgm => match opts.policy {
                Policy::UniformOne => {
                    for v in own {
                        push(v.vector, v.tag.as_str());
                    }
                }
                Policy::All => push(own.into_iter().flat_map(|v| v.vector).collect(), "all"),
            },
            ModelFamily::Sgnn | ModelFamily::SgnnLdp => {
                let r = own
                    .into_iter()
                    .find(|v| v.tag == RepTag::GraphRep)
                    .ok_or_else(|| Error::invalid("no graph representation in transcript"))?;
                push(r.vector, RepTag::GraphRep.as_str());
            }
            ModelFamily::NodeMatch => {
                let d = model.hyper.d;
                let nodes: Vec<_> = own.iter().filter(|v| v.tag == RepTag::NodeRep).collect();
                let graph = own
                    .iter()
                    .find(|v| v.tag == RepTag::GraphRep)
                    .ok_or_else(|| Error::invalid("no graph representation in transcript"))?;
                let mut x = vec![0.0; 2 * d];
                for v in &nodes {
                    for (acc, val) in x[..d].iter_mut().zip(&v.vector) {
                        *acc += val;
                    }
                }
                x[..d].iter_mut().for_each(|a| *a /= nodes.len() as f64);
                x[d..].copy_from_slice(&graph.vector);
                push(x, "node_mean+graph_rep");
            }
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub shadow_frac: f64,
    pub property: String,
    pub seed: u64,
    pub policy: Policy,
    pub allow_untrained: bool,
    pub attacker: AttackerConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            shadow_frac: 0.10,
            property: crate::graphs::FAMILY.to_string(),
            seed: 0,
            policy: Policy::UniformOne,
            allow_untrained: false,
            attacker: AttackerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub model: String,
    pub property: String,
    pub seed: u64,
    pub val_auc: f64,
    pub test_auc: f64,
    pub n_train_samples: usize,
    pub policy: String,
}

fn split_xy(samples: Vec<AttackSample>) -> (Vec<Vec<f64>>, Vec<bool>) {
    samples
        .into_iter()
        .map(|s| (s.representation, s.property_label))
        .unzip()
}

/// Shadow-set training followed by evaluation on every validation and test
/// graph.
pub fn run_attack(
    model: &Model,
    epochs_completed: usize,
    ds: &Dataset,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    let property = PropertyCoding::from_dataset(ds, &cfg.property)?;
    let shadow = build_shadow_set(ds, cfg.shadow_frac, cfg.seed)?;
    let val = ds.graph_ids(Split::Val);
    let test = ds.graph_ids(Split::Test);
    if shadow
        .iter()
        .any(|id| val.binary_search(id).is_ok() || test.binary_search(id).is_ok())
    {
        return Err(Error::invalid("shadow set overlaps the evaluation graphs"));
    }
    let opts = |stream: &str| CollectOptions {
        policy: cfg.policy,
        seed: cfg.seed,
        allow_untrained: cfg.allow_untrained,
        stream: stream.to_string(),
    };
    let (x, y) = split_xy(collect_attackable(
        model,
        epochs_completed,
        &shadow,
        ds,
        &property,
        &opts("shadow"),
    )?);
    let attacker = train_attacker(&x, &y, cfg.seed, cfg.attacker)?;
    let eval = |ids: &[String], name: &str| -> Result<f64> {
        let (xe, ye) = split_xy(collect_attackable(
            model,
            epochs_completed,
            ids,
            ds,
            &property,
            &opts(name),
        )?);
        compute_auc(&attacker.predict(&xe)?, &ye)
    };
    let val_auc = eval(&val, "val")?;
    let test_auc = eval(&test, "test")?;
    log::info!(
        "attack on {} ({}): val AUC {val_auc:.4}, test AUC {test_auc:.4}, {} training samples",
        model.family,
        cfg.policy,
        x.len()
    );
    Ok(AttackReport {
        model: model.family.as_str().to_string(),
        property: cfg.property.clone(),
        seed: cfg.seed,
        val_auc,
        test_auc,
        n_train_samples: x.len(),
        policy: cfg.policy.as_str().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_table() {
        let p = classify_attack_surface("ppgm").unwrap();
        assert_eq!(p.reps, [SurfaceRep::G, SurfaceRep::O].into_iter().collect());
        assert!(!p.reconstruction_attackable && p.property_inference_attackable);
        let s = classify_attack_surface("sgnn").unwrap();
        assert_eq!(s.reps, [SurfaceRep::G].into_iter().collect());
        assert!(!s.reconstruction_attackable);
        assert_eq!(classify_attack_surface("sgnn-ldp").unwrap(), s);
        let n = classify_attack_surface("nodematch").unwrap();
        assert_eq!(n.reps, [SurfaceRep::N, SurfaceRep::G].into_iter().collect());
        assert!(n.reconstruction_attackable && n.property_inference_attackable);
        assert!(classify_attack_surface("gmn").is_err());
    }

    #[test]
    fn separable_samples_learned() {
        let mut r = rng::stream(4, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..80 {
            let l = i % 2 == 0;
            let c = if l { 1.0 } else { -1.0 };
            x.push((0..5).map(|_| c + r.gen_range(-0.5..0.5)).collect());
            y.push(l);
        }
        let a = train_attacker(&x, &y, 1, AttackerConfig::default()).unwrap();
        assert!(compute_auc(&a.predict(&x).unwrap(), &y).unwrap() >= 0.99);
        let b = train_attacker(&x, &y, 1, AttackerConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0]; 4];
        assert!(train_attacker(&x, &[true; 4], 0, AttackerConfig::default()).is_err());
        assert!(
            train_attacker(&x, &[true, true, true, false], 0, AttackerConfig::default()).is_err()
        );
    }
}
