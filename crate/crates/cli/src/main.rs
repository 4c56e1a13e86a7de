//! `ppgm` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ppgm::attack::{run_attack, AttackConfig};
use ppgm::graphs::{
    generate_synthetic_dataset, read_dataset, write_dataset, GeneratorConfig, Split, SplitCounts,
};
use ppgm::model::{Ablations, HyperParams, ModelFamily};
use ppgm::pipeline::{
    build_report, evaluate_gsl, metric_name, sweep, train_gsl, Checkpoint, SweepConfig, SweepKind,
};
use ppgm::protocol::{replay_score, run_pairwise_session, Policy, Session};
use ppgm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ppgm",
    version,
    about = "Privacy-preserving graph similarity learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark
    GenData(GenData),
    /// Train a model and write its checkpoint and run record
    Train(Train),
    /// Evaluate a checkpoint on one split
    Eval(Eval),
    /// Run one two-party session and write its transcript
    Simulate(Simulate),
    /// Run the property-inference attack against a checkpoint
    Attack(Attack),
    /// Context-code or training-length sweep
    Sweep(Sweep),
    /// Aggregate result files into one table
    Report(Report),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Cls,
    Reg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ppgm,
    Sgnn,
    #[value(name = "sgnn-ldp")]
    SgnnLdp,
    Nodematch,
}

impl From<ModelArg> for ModelFamily {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ppgm => ModelFamily::Ppgm,
            ModelArg::Sgnn => ModelFamily::Sgnn,
            ModelArg::SgnnLdp => ModelFamily::SgnnLdp,
            ModelArg::Nodematch => ModelFamily::NodeMatch,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    #[value(name = "no-obf")]
    NoObf,
    #[value(name = "no-ctx")]
    NoCtx,
    #[value(name = "no-ngm")]
    NoNgm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    #[value(name = "uniform-one")]
    UniformOne,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    M,
    Epochs,
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of base graphs
    #[arg(long)]
    graphs: Option<usize>,
    /// Pair counts as TRAIN,VAL,TEST, or one total split 5:1:1
    #[arg(long)]
    pairs: Option<String>,
    #[arg(long)]
    min_nodes: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long, value_enum, default_value = "cls")]
    task: TaskArg,
    /// Fraction of edges rewired per variant
    #[arg(long)]
    perturb: Option<f64>,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Layer replacement for ablation runs (repeatable)
    #[arg(long, value_enum)]
    ablate: Vec<AblateArg>,
    /// Laplace noise scale for sgnn-ldp
    #[arg(long)]
    ldp_b: Option<f64>,
}

impl HyperArgs {
    fn resolve(&self) -> HyperParams {
        let mut h = HyperParams::default();
        h.d = self.d.unwrap_or(h.d);
        h.layers = self.layers.unwrap_or(h.layers);
        h.m = self.m.unwrap_or(h.m);
        h.heads = self.heads.unwrap_or(h.heads);
        h.lr = self.lr.unwrap_or(h.lr);
        h.epochs = self.epochs.unwrap_or(h.epochs);
        h.batch = self.batch.unwrap_or(h.batch);
        h.ldp_b = self.ldp_b.unwrap_or(h.ldp_b);
        let mut a = Ablations::default();
        for flag in &self.ablate {
            match flag {
                AblateArg::NoObf => a.no_obfuscation = true,
                AblateArg::NoCtx => a.no_context_codes = true,
                AblateArg::NoNgm => a.no_ng_matching = true,
            }
        }
        h.ablations = a;
        h
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    /// Checkpoint file or a training output directory
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct Simulate {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Index of the pair within --split
    #[arg(long, default_value_t = 0)]
    pair_index: usize,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    transcript: PathBuf,
    /// Seed for session noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Attack {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    shadow_frac: f64,
    #[arg(long, default_value = "family")]
    property: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "uniform-one")]
    policy: PolicyArg,
    /// Output report file
    #[arg(long, default_value = "attack.json")]
    report: PathBuf,
    /// Allow checkpoints that were never trained
    #[arg(long)]
    allow_untrained: bool,
}

#[derive(Args)]
struct Sweep {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Comma-separated seeds
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent training runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Override the sweep grid (comma-separated)
    #[arg(long, value_delimiter = ',')]
    points: Vec<usize>,
    #[arg(long, default_value_t = 0.10)]
    shadow_frac: f64,
}

#[derive(Args)]
struct Report {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn print_config(command: &str, config: serde_json::Value) {
    println!("{}", json!({"command": command, "config": config}));
}

fn parse_pairs(s: &str) -> Result<SplitCounts> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("--pairs {s:?}: {e}")))?;
    match parts[..] {
        [train, val, test] => Ok(SplitCounts { train, val, test }),
        [total] => {
            let val = total / 7;
            Ok(SplitCounts {
                train: total - 2 * val,
                val,
                test: val,
            })
        }
        _ => Err(Error::InvalidArgument(format!(
            "--pairs expects N or TRAIN,VAL,TEST, got {s:?}"
        ))),
    }
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    if path.is_dir() {
        Checkpoint::load(&path.join("checkpoint.json"))
    } else {
        Checkpoint::load(path)
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg = match a.task {
        TaskArg::Cls => GeneratorConfig::default(),
        TaskArg::Reg => GeneratorConfig::regression(),
    };
    cfg.base_graphs = a.graphs.unwrap_or(cfg.base_graphs);
    if let Some(p) = &a.pairs {
        cfg.pairs = parse_pairs(p)?;
    }
    cfg.min_nodes = a.min_nodes.unwrap_or(cfg.min_nodes);
    cfg.max_nodes = a.max_nodes.unwrap_or(cfg.max_nodes);
    cfg.perturb = a.perturb.unwrap_or(cfg.perturb);
    print_config(
        "gen-data",
        json!({"seed": a.seed, "out": a.out, "generator": cfg}),
    );
    let ds = generate_synthetic_dataset(&cfg, a.seed)?;
    write_dataset(&ds, &a.out)?;
    println!("{}", ds.summary());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let hyper = a.hyper.resolve();
    let family: ModelFamily = a.model.into();
    print_config(
        "train",
        json!({"data": a.data, "model": family, "hyper": hyper, "seed": a.seed, "out": a.out}),
    );
    let ds = read_dataset(&a.data)?;
    let (ckpt, record) = train_gsl(&ds, family, hyper, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    ckpt.save(&a.out.join("checkpoint.json"))?;
    record.write(&a.out)?;
    print!("{}", record.render());
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    print_config(
        "eval",
        json!({"ckpt": a.ckpt, "data": a.data, "split": Split::from(a.split).as_str()}),
    );
    let ckpt = load_ckpt(&a.ckpt)?;
    let ds = read_dataset(&a.data)?;
    let split: Split = a.split.into();
    let value = evaluate_gsl(&ckpt, &ds, split)?;
    println!(
        "{}",
        json!({"split": split.as_str(), "metric": metric_name(ckpt.model.task), "value": value})
    );
    Ok(())
}

fn simulate(a: Simulate) -> Result<()> {
    let split: Split = a.split.into();
    print_config(
        "simulate",
        json!({"ckpt": a.ckpt, "data": a.data, "split": split.as_str(), "pair_index": a.pair_index, "seed": a.seed, "transcript": a.transcript}),
    );
    let ckpt = load_ckpt(&a.ckpt)?;
    let ds = read_dataset(&a.data)?;
    let pairs = ds.pairs(split);
    let pair = pairs.get(a.pair_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "pair index {} out of range ({} pairs in {split})",
            a.pair_index,
            pairs.len()
        ))
    })?;
    let prep = |id: &str| {
        ds.graph(id)
            .map(ppgm::graphs::PreparedGraph::new)
            .expect("dataset validated ids")
    };
    let (g1, g2) = (prep(&pair.g1), prep(&pair.g2));
    let session = Session::new(format!("{split}-{}", a.pair_index), a.seed);
    let (score, transcript) = run_pairwise_session(&ckpt.model, &ckpt.model, &g1, &g2, &session)?;
    if let Some(dir) = a.transcript.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    transcript.write(&a.transcript)?;
    let replayed = replay_score(&ckpt.model, &transcript)?;
    if replayed.to_bits() != score.to_bits() {
        return Err(Error::Protocol {
            step: transcript.len() as u64 - 1,
            msg: format!("replayed score {replayed} differs from session score {score}"),
        });
    }
    println!(
        "{}",
        json!({"g1": pair.g1, "g2": pair.g2, "label": pair.label, "score": score, "events": transcript.len()})
    );
    Ok(())
}

fn attack(a: Attack) -> Result<()> {
    let policy = match a.policy {
        PolicyArg::UniformOne => Policy::UniformOne,
        PolicyArg::All => Policy::All,
    };
    print_config(
        "attack",
        json!({"ckpt": a.ckpt, "data": a.data, "shadow_frac": a.shadow_frac, "property": a.property, "seed": a.seed, "policy": policy.as_str(), "report": a.report}),
    );
    let ckpt = load_ckpt(&a.ckpt)?;
    let ds = read_dataset(&a.data)?;
    let cfg = AttackConfig {
        shadow_frac: a.shadow_frac,
        property: a.property,
        seed: a.seed,
        policy,
        allow_untrained: a.allow_untrained,
        ..Default::default()
    };
    let report = run_attack(&ckpt.model, ckpt.meta.epochs_completed, &ds, &cfg)?;
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&a.report, text.clone() + "\n")?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn run_sweep(a: Sweep) -> Result<()> {
    let family: ModelFamily = a.model.into();
    let kind = match a.kind {
        KindArg::M => SweepKind::M,
        KindArg::Epochs => SweepKind::Epochs,
    };
    let mut cfg = SweepConfig::new(family, kind, a.seeds.clone());
    cfg.hyper = a.hyper.resolve();
    cfg.jobs = a.jobs;
    cfg.attack.shadow_frac = a.shadow_frac;
    if !a.points.is_empty() {
        cfg.points = a.points.clone();
    }
    print_config(
        "sweep",
        json!({"data": a.data, "model": family, "kind": kind, "points": cfg.points, "seeds": cfg.seeds, "hyper": cfg.hyper, "jobs": cfg.jobs, "shadow_frac": a.shadow_frac, "out": a.out}),
    );
    let ds = read_dataset(&a.data)?;
    let report = sweep(&ds, &cfg)?;
    report.write(&a.out)?;
    print!("{}", report.render());
    Ok(())
}

fn report(a: Report) -> Result<()> {
    print_config("report", json!({"inputs": a.inputs, "out": a.out}));
    for row in build_report(&a.inputs, &a.out)? {
        println!("{}", serde_json::to_string(&row)?);
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } | Error::NonScalarLoss(_) => "shape",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::GedBound { .. } => "ged_bound",
        Error::Parse { .. } => "parse",
        Error::Wire { .. } => "wire",
        Error::Protocol { .. } => "protocol",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Attack(a) => attack(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": error_kind(&e), "message": e.to_string()})
            );
            ExitCode::FAILURE
        }
    }
}
