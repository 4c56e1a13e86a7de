//! Training, evaluation, checkpoints and the experiment drivers.

mod checkpoint;
mod report;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use checkpoint::{model_size_bytes, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use report::{build_report, ReportRow};
pub use sweep::{sweep, SweepConfig, SweepKind, SweepReport, SweepRow, SweepSummary};

use crate::attack::compute_auc;
use crate::error::{Error, Result};
use crate::graphs::{Dataset, GraphPair, PreparedGraph, Split, Task};
use crate::model::{mse, mse_loss, HyperParams, Model, ModelFamily, ModelTape, SessionNoise};
use crate::numerics::{AdamConfig, AdamState, GradMap};
use crate::protocol::{run_pairwise_session, Session};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Outcome of one training run. `val_metric` and `test_metric` are AUC for
/// classification and MSE for regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub family: ModelFamily,
    pub task: Task,
    pub hyper: HyperParams,
    pub seed: u64,
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub test_metric: f64,
    pub wall_seconds: f64,
}

impl PartialEq for RunRecord {
    /// Wall-clock time is not part of a run's result.
    fn eq(&self, o: &Self) -> bool {
        self.family == o.family
            && self.task == o.task
            && self.hyper == o.hyper
            && self.seed == o.seed
            && self.initial_train_loss.to_bits() == o.initial_train_loss.to_bits()
            && self.epochs == o.epochs
            && self.best_epoch == o.best_epoch
            && self.best_val_metric.map(f64::to_bits) == o.best_val_metric.map(f64::to_bits)
            && self.test_metric.to_bits() == o.test_metric.to_bits()
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "auc",
        Task::Regression => "mse",
    }
}

fn better(task: Task, candidate: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) => match task {
            Task::Classification => candidate > b,
            Task::Regression => candidate < b,
        },
    }
}

impl RunRecord {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// Writes `run.jsonl` (one config line, one line per epoch, one result
    /// line) and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("run.jsonl"))?;
        writeln!(
            f,
            "{}",
            json!({"record": "config", "family": self.family, "task": self.task, "hyper": self.hyper, "seed": self.seed})
        )?;
        for e in &self.epochs {
            writeln!(
                f,
                "{}",
                json!({"record": "epoch", "epoch": e.epoch, "train_loss": e.train_loss, "val_metric": e.val_metric})
            )?;
        }
        writeln!(
            f,
            "{}",
            json!({
                "record": "result",
                "metric": metric_name(self.task),
                "initial_train_loss": self.initial_train_loss,
                "best_epoch": self.best_epoch,
                "best_val_metric": self.best_val_metric,
                "test_metric": self.test_metric,
                "wall_seconds": self.wall_seconds,
            })
        )?;
        fs::write(dir.join("summary.txt"), self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file = path.display().to_string();
        let perr = |line: usize, msg: String| Error::Parse {
            file: file.clone(),
            line,
            msg,
        };
        let mut config = None;
        let mut epochs = Vec::new();
        let mut result = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| perr(i + 1, e.to_string()))?;
            match v.get("record").and_then(|r| r.as_str()) {
                Some("config") => config = Some(v),
                Some("epoch") => epochs.push(
                    serde_json::from_value::<EpochRecord>(v)
                        .map_err(|e| perr(i + 1, e.to_string()))?,
                ),
                Some("result") => result = Some(v),
                other => return Err(perr(i + 1, format!("unknown record type {other:?}"))),
            }
        }
        let config = config.ok_or_else(|| perr(0, "no config record".into()))?;
        let result = result.ok_or_else(|| perr(0, "no result record".into()))?;
        let field = |v: &serde_json::Value, k: &str| -> Result<serde_json::Value> {
            v.get(k)
                .cloned()
                .ok_or_else(|| perr(0, format!("missing field {k}")))
        };
        Ok(RunRecord {
            family: serde_json::from_value(field(&config, "family")?)?,
            task: serde_json::from_value(field(&config, "task")?)?,
            hyper: serde_json::from_value(field(&config, "hyper")?)?,
            seed: serde_json::from_value(field(&config, "seed")?)?,
            initial_train_loss: serde_json::from_value(field(&result, "initial_train_loss")?)?,
            epochs,
            best_epoch: serde_json::from_value(field(&result, "best_epoch")?)?,
            best_val_metric: serde_json::from_value(field(&result, "best_val_metric")?)?,
            test_metric: serde_json::from_value(field(&result, "test_metric")?)?,
            wall_seconds: serde_json::from_value(field(&result, "wall_seconds")?)?,
        })
    }

    pub fn render(&self) -> String {
        let metric = metric_name(self.task);
        let mut s = format!(
            "model {} ({}) task {} seed {}\n",
            self.family,
            self.hyper.ablations.label(),
            self.task.as_str(),
            self.seed
        );
        s += &format!("initial train loss {:.6}\n", self.initial_train_loss);
        s += &format!(
            "{:>6}  {:>12}  {:>10}\n",
            "epoch",
            "train_loss",
            format!("val_{metric}")
        );
        for e in &self.epochs {
            s += &format!(
                "{:>6}  {:>12.6}  {:>10.4}\n",
                e.epoch, e.train_loss, e.val_metric
            );
        }
        match (self.best_epoch, self.best_val_metric) {
            (Some(e), Some(v)) => s += &format!("best epoch {e}: val_{metric} {v:.4}\n"),
            _ => s += "no epochs run\n",
        }
        s += &format!(
            "test_{metric} {:.4}\nwall {:.1}s\n",
            self.test_metric, self.wall_seconds
        );
        s
    }
}

fn check_task(model: &Model, ds: &Dataset) -> Result<()> {
    if model.task != ds.task() {
        return Err(Error::invalid(format!(
            "model head is for task {} but the dataset is {}",
            model.task.as_str(),
            ds.task().as_str()
        )));
    }
    if model.feature_dim != ds.feature_dim() {
        return Err(Error::invalid(format!(
            "model expects feature dimension {}, dataset has {}",
            model.feature_dim,
            ds.feature_dim()
        )));
    }
    Ok(())
}

struct Prepared<'d> {
    ds: &'d Dataset,
    graphs: Vec<PreparedGraph>,
}

impl<'d> Prepared<'d> {
    fn new(ds: &'d Dataset) -> Self {
        Prepared {
            ds,
            graphs: ds.prepare(),
        }
    }

    fn pair(&self, p: &GraphPair) -> (&PreparedGraph, &PreparedGraph) {
        let i = self.ds.graph_index(&p.g1).expect("dataset validated ids");
        let j = self.ds.graph_index(&p.g2).expect("dataset validated ids");
        (&self.graphs[i], &self.graphs[j])
    }
}

fn eval_noise_seed(seed: u64, split: Split, index: usize) -> u64 {
    rng::derive(
        seed,
        &[rng::tag("eval"), rng::tag(split.as_str()), index as u64],
    )
}

/// Scores every pair of `split` through the two-party protocol.
pub fn score_split(model: &Model, ds: &Dataset, split: Split, noise_seed: u64) -> Result<Vec<f64>> {
    score_split_prepared(model, &Prepared::new(ds), split, noise_seed)
}

fn score_split_prepared(
    model: &Model,
    prep: &Prepared<'_>,
    split: Split,
    noise_seed: u64,
) -> Result<Vec<f64>> {
    prep.ds
        .pairs(split)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (g1, g2) = prep.pair(p);
            let session = Session::new(
                format!("{split}-{i}"),
                eval_noise_seed(noise_seed, split, i),
            );
            Ok(run_pairwise_session(model, model, g1, g2, &session)?.0)
        })
        .collect()
}

fn metric(task: Task, scores: &[f64], pairs: &[GraphPair]) -> Result<f64> {
    let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    match task {
        Task::Classification => {
            let binary: Vec<bool> = labels.iter().map(|&y| y > 0.5).collect();
            compute_auc(scores, &binary)
        }
        Task::Regression => mse(scores, &labels, task),
    }
}

fn evaluate_prepared(
    model: &Model,
    prep: &Prepared<'_>,
    split: Split,
    noise_seed: u64,
) -> Result<f64> {
    let pairs = prep.ds.pairs(split);
    if pairs.is_empty() {
        return Err(Error::invalid(format!("split {split} has no pairs")));
    }
    let scores = score_split_prepared(model, prep, split, noise_seed)?;
    metric(model.task, &scores, pairs)
}

/// AUC (classification) or MSE (regression) on `split`, scored through the
/// distributed protocol.
pub fn evaluate_gsl(ckpt: &Checkpoint, ds: &Dataset, split: Split) -> Result<f64> {
    check_task(&ckpt.model, ds)?;
    evaluate_prepared(&ckpt.model, &Prepared::new(ds), split, ckpt.meta.seed)
}

fn pair_loss_and_grads(
    model: &Model,
    g1: &PreparedGraph,
    g2: &PreparedGraph,
    label: f64,
    noise: SessionNoise,
) -> Result<(f64, GradMap)> {
    let mut mt = ModelTape::new(model);
    let out = mt.forward_pair(g1, g2, noise)?;
    let loss = mse_loss(&mut mt.tape, &[out.score], &[label], model.task)?;
    let value = mt.tape.value(loss).item();
    Ok((value, mt.tape.backward(loss)?))
}

fn train_noise(seed: u64, epoch: usize, index: usize) -> SessionNoise {
    SessionNoise::new(rng::derive(
        seed,
        &[rng::tag("train-noise"), epoch as u64, index as u64],
    ))
}

/// Mean per-pair training loss without updating anything.
fn train_loss(model: &Model, prep: &Prepared<'_>, seed: u64) -> Result<f64> {
    let pairs = prep.ds.pairs(Split::Train);
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let (g1, g2) = prep.pair(p);
        let mut mt = ModelTape::new(model);
        let out = mt.forward_pair(g1, g2, train_noise(seed, 0, i))?;
        let loss = mse_loss(&mut mt.tape, &[out.score], &[p.label], model.task)?;
        total += mt.tape.value(loss).item();
    }
    Ok(total / pairs.len() as f64)
}

/// Batches visited in one epoch: shuffled pair indices chunked by `batch`.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag("shuffle"), epoch as u64]));
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Trains from a fresh initialization. `on_epoch` sees the best-so-far
/// checkpoint after every epoch.
pub fn train_gsl_with(
    ds: &Dataset,
    family: ModelFamily,
    hyper: HyperParams,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<(Checkpoint, RunRecord)> {
    let start = Instant::now();
    let mut model = Model::init(
        family,
        ds.task(),
        ds.feature_dim(),
        hyper,
        &mut rng::stream(seed, &[rng::tag("init")]),
    )?;
    check_task(&model, ds)?;
    let train = ds.pairs(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("training split has no pairs"));
    }
    if ds.pairs(Split::Val).is_empty() || ds.pairs(Split::Test).is_empty() {
        return Err(Error::invalid(
            "validation and test splits must be non-empty",
        ));
    }
    let prep = Prepared::new(ds);
    let initial_train_loss = train_loss(&model, &prep, seed)?;
    log::info!("{family} seed {seed}: initial train loss {initial_train_loss:.6}");

    let mut adam = AdamState::new(AdamConfig::with_lr(hyper.lr));
    let mut best = Checkpoint {
        model: model.clone(),
        meta: CheckpointMeta {
            seed,
            epochs_completed: 0,
            best_val_metric: None,
            best_epoch: None,
        },
    };
    let mut epochs = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(train.len(), hyper.batch, seed, epoch) {
            let mut grads = GradMap::new();
            for &i in &batch {
                let (g1, g2) = prep.pair(&train[i]);
                let (loss, g) = pair_loss_and_grads(
                    &model,
                    g1,
                    g2,
                    train[i].label,
                    train_noise(seed, epoch, i),
                )?;
                total += loss;
                grads.accumulate(&g)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads)?;
        }
        let train_loss = total / train.len() as f64;
        let val = evaluate_prepared(&model, &prep, Split::Val, seed)?;
        log::info!(
            "{family} seed {seed} epoch {epoch}: train loss {train_loss:.6}, val {} {val:.4}",
            metric_name(ds.task())
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: val,
        });
        if better(ds.task(), val, best.meta.best_val_metric) {
            best.model = model.clone();
            best.meta.best_val_metric = Some(val);
            best.meta.best_epoch = Some(epoch);
        }
        best.meta.epochs_completed = epoch;
        on_epoch(epoch, &best)?;
    }
    let test_metric = evaluate_prepared(&best.model, &prep, Split::Test, seed)?;
    let record = RunRecord {
        family,
        task: ds.task(),
        hyper,
        seed,
        initial_train_loss,
        epochs,
        best_epoch: best.meta.best_epoch,
        best_val_metric: best.meta.best_val_metric,
        test_metric,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best, record))
}

pub fn train_gsl(
    ds: &Dataset,
    family: ModelFamily,
    hyper: HyperParams,
    seed: u64,
) -> Result<(Checkpoint, RunRecord)> {
    train_gsl_with(ds, family, hyper, seed, |_, _| Ok(()))
}
