//! Dataset directory format: `graphs.jsonl`, `pairs.jsonl`, `meta.json`.
//! Reals are written with 17 significant digits so that reading a file back
//! reproduces every 64-bit value exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Dataset, Graph, GraphPair, Split, Task};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    id: String,
    n: usize,
    features: Vec<Vec<f64>>,
    edges: Vec<[i64; 2]>,
    #[serde(default)]
    props: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    split: String,
    g1: String,
    g2: String,
    y: f64,
}

#[derive(Deserialize)]
struct MetaRecord {
    task: String,
    f: usize,
    seed: u64,
    #[serde(default)]
    config: serde_json::Value,
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut w = BufWriter::new(fs::File::create(dir.join("graphs.jsonl"))?);
    for g in ds.graphs() {
        let rows: Vec<String> = (0..g.num_nodes())
            .map(|i| {
                let vals: Vec<String> = g
                    .features()
                    .row_slice(i)
                    .iter()
                    .map(|&x| fmt_real(x))
                    .collect();
                format!("[{}]", vals.join(","))
            })
            .collect();
        let edges: Vec<String> = g
            .edges()
            .iter()
            .map(|(u, v)| format!("[{u},{v}]"))
            .collect();
        let props: Vec<String> = g
            .props()
            .iter()
            .map(|(k, v)| format!("{}:{}", json_str(k), json_str(v)))
            .collect();
        writeln!(
            w,
            "{{\"id\":{},\"n\":{},\"features\":[{}],\"edges\":[{}],\"props\":{{{}}}}}",
            json_str(g.id()),
            g.num_nodes(),
            rows.join(","),
            edges.join(","),
            props.join(",")
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join("pairs.jsonl"))?);
    for split in Split::ALL {
        for p in ds.pairs(split) {
            writeln!(
                w,
                "{{\"split\":{},\"g1\":{},\"g2\":{},\"y\":{}}}",
                json_str(split.as_str()),
                json_str(&p.g1),
                json_str(&p.g2),
                fmt_real(p.label)
            )?;
        }
    }
    w.flush()?;

    let meta = serde_json::json!({
        "task": ds.task().as_str(),
        "f": ds.feature_dim(),
        "seed": ds.seed(),
        "config": ds.config(),
    });
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_graph(rec: GraphRecord, f: usize, file: &str, line: usize) -> Result<Graph> {
    if rec.n == 0 {
        return Err(parse_err(file, line, format!("graph {} is empty", rec.id)));
    }
    if rec.features.len() != rec.n {
        return Err(parse_err(
            file,
            line,
            format!(
                "graph {}: {} feature rows for n={}",
                rec.id,
                rec.features.len(),
                rec.n
            ),
        ));
    }
    let mut data = Vec::with_capacity(rec.n * f);
    for row in &rec.features {
        if row.len() != f {
            return Err(parse_err(
                file,
                line,
                format!(
                    "graph {}: feature row of width {} (f={f})",
                    rec.id,
                    row.len()
                ),
            ));
        }
        data.extend_from_slice(row);
    }
    let mut edges = Vec::with_capacity(rec.edges.len());
    for [u, v] in rec.edges {
        if u < 0 || v < 0 || u as usize >= rec.n || v as usize >= rec.n {
            return Err(parse_err(
                file,
                line,
                format!(
                    "graph {}: edge [{u},{v}] out of range for n={}",
                    rec.id, rec.n
                ),
            ));
        }
        edges.push((u as usize, v as usize));
    }
    let feats = Tensor::matrix(rec.n, f, data)?;
    Graph::new(rec.id, rec.n, feats, edges, rec.props)
        .map_err(|e| parse_err(file, line, e.to_string()))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: MetaRecord = serde_json::from_str(&meta_text)
        .map_err(|e| parse_err("meta.json", e.line(), e.to_string()))?;
    let task: Task = meta
        .task
        .parse()
        .map_err(|e: Error| parse_err("meta.json", 1, e.to_string()))?;

    let mut graphs = Vec::new();
    let reader = BufReader::new(fs::File::open(dir.join("graphs.jsonl"))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err("graphs.jsonl", i + 1, e.to_string()))?;
        graphs.push(read_graph(rec, meta.f, "graphs.jsonl", i + 1)?);
    }

    let mut pairs: [Vec<GraphPair>; 3] = Default::default();
    let reader = BufReader::new(fs::File::open(dir.join("pairs.jsonl"))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err("pairs.jsonl", i + 1, e.to_string()))?;
        let split: Split = rec
            .split
            .parse()
            .map_err(|e: Error| parse_err("pairs.jsonl", i + 1, e.to_string()))?;
        pairs[split as usize].push(GraphPair {
            g1: rec.g1,
            g2: rec.g2,
            label: rec.y,
        });
    }

    Dataset::new(task, meta.f, meta.seed, meta.config, graphs, pairs)
}
