//! Context-code and training-length sweeps: train, evaluate the task, run
//! the attack, one row per (point, seed).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{evaluate_gsl, train_gsl, train_gsl_with, Checkpoint};
use crate::attack::{run_attack, AttackConfig};
use crate::error::{Error, Result};
use crate::graphs::{Dataset, Split, Task};
use crate::model::{HyperParams, ModelFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    #[serde(rename = "m")]
    M,
    #[serde(rename = "epochs")]
    Epochs,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::M => "m",
            SweepKind::Epochs => "epochs",
        }
    }

    pub fn default_points(self) -> Vec<usize> {
        match self {
            SweepKind::M => vec![1, 2, 4, 8, 16],
            SweepKind::Epochs => vec![20, 40, 60, 80, 100],
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(SweepKind::M),
            "epochs" => Ok(SweepKind::Epochs),
            other => Err(Error::invalid(format!(
                "unknown sweep kind {other:?} (m|epochs)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub family: ModelFamily,
    pub kind: SweepKind,
    pub points: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Base hyperparameters; the swept field is overridden per point.
    pub hyper: HyperParams,
    /// Attack settings; the seed is replaced by each run's seed.
    pub attack: AttackConfig,
    pub jobs: usize,
}

impl SweepConfig {
    pub fn new(family: ModelFamily, kind: SweepKind, seeds: Vec<u64>) -> Self {
        SweepConfig {
            family,
            kind,
            points: kind.default_points(),
            seeds,
            hyper: HyperParams::default(),
            attack: AttackConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    pub model: String,
    pub point: usize,
    pub seed: u64,
    pub task_auc: f64,
    pub attack_val_auc: f64,
    pub attack_auc: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub point: usize,
    pub runs: usize,
    pub task_mean: f64,
    pub task_std: f64,
    pub attack_mean: f64,
    pub attack_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub family: ModelFamily,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn row_for(
    ds: &Dataset,
    cfg: &SweepConfig,
    ckpt: &Checkpoint,
    point: usize,
    seed: u64,
) -> Result<SweepRow> {
    let task_auc = evaluate_gsl(ckpt, ds, Split::Test)?;
    let attack = AttackConfig {
        seed,
        ..cfg.attack.clone()
    };
    let report = run_attack(&ckpt.model, ckpt.meta.epochs_completed, ds, &attack)?;
    log::info!(
        "sweep {} {}={point} seed {seed}: task AUC {task_auc:.4}, attack AUC {:.4}",
        cfg.family,
        cfg.kind,
        report.test_auc
    );
    Ok(SweepRow {
        kind: cfg.kind,
        model: cfg.family.as_str().to_string(),
        point,
        seed,
        task_auc,
        attack_val_auc: report.val_auc,
        attack_auc: report.test_auc,
        best_epoch: ckpt.meta.best_epoch,
    })
}

/// Rows for one unit of work: a single (point, seed) for the m sweep, or
/// every milestone of one seed's run for the epoch sweep.
fn run_unit(
    ds: &Dataset,
    cfg: &SweepConfig,
    point: Option<usize>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    match (cfg.kind, point) {
        (SweepKind::M, Some(m)) => {
            let hyper = HyperParams { m, ..cfg.hyper };
            let (ckpt, _) = train_gsl(ds, cfg.family, hyper, seed)?;
            Ok(vec![row_for(ds, cfg, &ckpt, m, seed)?])
        }
        _ => {
            let last = *cfg.points.iter().max().expect("points checked non-empty");
            let hyper = HyperParams {
                epochs: last,
                ..cfg.hyper
            };
            let mut snapshots = Vec::new();
            train_gsl_with(ds, cfg.family, hyper, seed, |epoch, best| {
                if cfg.points.contains(&epoch) {
                    snapshots.push((epoch, best.clone()));
                }
                Ok(())
            })?;
            snapshots
                .iter()
                .map(|(epoch, ckpt)| row_for(ds, cfg, ckpt, *epoch, seed))
                .collect()
        }
    }
}

pub fn sweep(ds: &Dataset, cfg: &SweepConfig) -> Result<SweepReport> {
    if ds.task() != Task::Classification {
        return Err(Error::invalid("sweeps need a classification dataset"));
    }
    if cfg.points.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one point and one seed",
        ));
    }
    if cfg.points.contains(&0) {
        return Err(Error::invalid("sweep points must be positive"));
    }
    let units: Vec<(Option<usize>, u64)> = match cfg.kind {
        SweepKind::M => cfg
            .points
            .iter()
            .flat_map(|&p| cfg.seeds.iter().map(move |&s| (Some(p), s)))
            .collect(),
        SweepKind::Epochs => cfg.seeds.iter().map(|&s| (None, s)).collect(),
    };
    let results: Mutex<Vec<Option<Result<Vec<SweepRow>>>>> =
        Mutex::new(units.iter().map(|_| None).collect());
    let next = Mutex::new(0usize);
    let workers = cfg.jobs.clamp(1, units.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("counter lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= units.len() {
                    break;
                }
                let (point, seed) = units[i];
                let out = run_unit(ds, cfg, point, seed);
                results.lock().expect("results lock")[i] = Some(out);
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("results lock") {
        rows.extend(r.expect("every unit ran")?);
    }
    rows.sort_by_key(|r| (r.point, r.seed));

    let mut points: Vec<usize> = rows.iter().map(|r| r.point).collect();
    points.dedup();
    let summary = points
        .into_iter()
        .map(|p| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.point == p).collect();
            let (task_mean, task_std) =
                mean_std(&sel.iter().map(|r| r.task_auc).collect::<Vec<_>>());
            let (attack_mean, attack_std) =
                mean_std(&sel.iter().map(|r| r.attack_auc).collect::<Vec<_>>());
            SweepSummary {
                point: p,
                runs: sel.len(),
                task_mean,
                task_std,
                attack_mean,
                attack_std,
            }
        })
        .collect();
    Ok(SweepReport {
        kind: cfg.kind,
        family: cfg.family,
        rows,
        summary,
    })
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut s = format!("sweep over {} for {}\n", self.kind, self.family);
        s += &format!(
            "{:>8}  {:>4}  {:>17}  {:>17}\n",
            self.kind.as_str(),
            "runs",
            "task AUC",
            "attack AUC"
        );
        for r in &self.summary {
            s += &format!(
                "{:>8}  {:>4}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}\n",
                r.point, r.runs, r.task_mean, r.task_std, r.attack_mean, r.attack_std
            );
        }
        s
    }

    /// Writes `sweep.jsonl` (one row per line) and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut lines = String::new();
        for r in &self.rows {
            lines += &serde_json::to_string(r)?;
            lines.push('\n');
        }
        fs::write(dir.join("sweep.jsonl"), lines)?;
        fs::write(dir.join("summary.txt"), self.render())?;
        Ok(())
    }
}
