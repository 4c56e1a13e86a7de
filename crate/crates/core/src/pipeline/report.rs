//! Aggregates run records, attack reports and sweep rows into one table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweep::{mean_std, SweepRow};
use super::{metric_name, RunRecord};
use crate::attack::AttackReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub metric: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

fn collect_file(path: &Path, out: &mut Vec<(String, String, f64)>) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    if name == "run.jsonl" {
        let r = RunRecord::read(path)?;
        let model = format!("{}[{}]", r.family, r.hyper.ablations.label());
        out.push((
            model,
            format!("test_{}", metric_name(r.task)),
            r.test_metric,
        ));
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    if name.ends_with(".jsonl") {
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let row: SweepRow = serde_json::from_str(line).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let model = format!("{}[{}={}]", row.model, row.kind, row.point);
            out.push((model.clone(), "task_auc".into(), row.task_auc));
            out.push((model, "attack_auc".into(), row.attack_auc));
        }
        return Ok(());
    }
    let rep: AttackReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: format!("not an attack report, run record or sweep table: {e}"),
    })?;
    let model = format!("{}[{}]", rep.model, rep.policy);
    out.push((
        model.clone(),
        format!("attack_val_auc:{}", rep.property),
        rep.val_auc,
    ));
    out.push((
        model,
        format!("attack_test_auc:{}", rep.property),
        rep.test_auc,
    ));
    Ok(())
}

fn expand(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input)? {
        let p = entry?.path();
        let name = p
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if p.is_dir() {
            files.extend(expand(&p)?);
        } else if name == "run.jsonl" || name == "sweep.jsonl" || name == "attack.json" {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads every input (files, or directories searched for `run.jsonl`,
/// `sweep.jsonl` and `attack.json`), groups values by (model, metric) and
/// writes `report.jsonl` and `report.txt` into `out`.
pub fn build_report(inputs: &[PathBuf], out: &Path) -> Result<Vec<ReportRow>> {
    if inputs.is_empty() {
        return Err(Error::invalid("report needs at least one input"));
    }
    let mut values = Vec::new();
    for input in inputs {
        for file in expand(input)? {
            collect_file(&file, &mut values)?;
        }
    }
    if values.is_empty() {
        return Err(Error::invalid("no results found in the inputs"));
    }
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (model, metric, v) in values {
        groups.entry((model, metric)).or_default().push(v);
    }
    let rows: Vec<ReportRow> = groups
        .into_iter()
        .map(|((model, metric), vs)| {
            let (mean, std) = mean_std(&vs);
            ReportRow {
                model,
                metric,
                runs: vs.len(),
                mean,
                std,
            }
        })
        .collect();

    fs::create_dir_all(out)?;
    let mut jsonl = String::new();
    for r in &rows {
        jsonl += &serde_json::to_string(r)?;
        jsonl.push('\n');
    }
    fs::write(out.join("report.jsonl"), jsonl)?;
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mwidth = rows
        .iter()
        .map(|r| r.metric.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut txt = format!(
        "{:<width$}  {:<mwidth$}  {:>4}  {:>8}  {:>8}\n",
        "model", "metric", "runs", "mean", "std"
    );
    for r in &rows {
        txt += &format!(
            "{:<width$}  {:<mwidth$}  {:>4}  {:>8.4}  {:>8.4}\n",
            r.model, r.metric, r.runs, r.mean, r.std
        );
    }
    fs::write(out.join("report.txt"), txt)?;
    Ok(rows)
}
