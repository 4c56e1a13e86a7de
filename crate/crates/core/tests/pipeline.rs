//! Dataset files, checkpoints, training, sweeps and reports end to end.

mod common;

use std::collections::BTreeSet;
use std::fs;

use common::default_dataset;
use ppgm::attack::{run_attack, AttackConfig, AttackerConfig};
use ppgm::graphs::{
    generate_synthetic_dataset, read_dataset, write_dataset, Dataset, GeneratorConfig, Split,
    SplitCounts, Task, FAMILY,
};
use ppgm::model::{HyperParams, Model, ModelFamily};
use ppgm::pipeline::{
    build_report, evaluate_gsl, model_size_bytes, sweep, train_gsl, Checkpoint, CheckpointMeta,
    RunRecord, SweepConfig, SweepKind,
};
use ppgm::Error;

fn tiny_config(task: Task) -> GeneratorConfig {
    let base = match task {
        Task::Classification => GeneratorConfig::default(),
        Task::Regression => GeneratorConfig::regression(),
    };
    GeneratorConfig {
        base_graphs: 16,
        pairs: SplitCounts {
            train: 40,
            val: 12,
            test: 12,
        },
        min_nodes: 6,
        max_nodes: 8,
        ..base
    }
}

fn tiny(task: Task) -> Dataset {
    generate_synthetic_dataset(&tiny_config(task), 3).unwrap()
}

fn tiny_hyper(epochs: usize) -> HyperParams {
    HyperParams {
        d: 12,
        layers: 2,
        m: 2,
        heads: 2,
        lr: 5e-3,
        epochs,
        batch: 8,
        ..HyperParams::default()
    }
}

fn base_id(graph_id: &str) -> &str {
    &graph_id[..4]
}

#[test]
fn default_dataset_shape() {
    let ds = default_dataset();
    let bases: BTreeSet<&str> = ds.graphs().iter().map(|g| base_id(g.id())).collect();
    assert_eq!(bases.len(), 60);
    assert_eq!(ds.num_pairs(), 700);
    let counts = [(Split::Train, 500), (Split::Val, 100), (Split::Test, 100)];
    let mut positives = 0;
    let mut split_bases: Vec<BTreeSet<&str>> = Vec::new();
    for (split, n) in counts {
        let pairs = ds.pairs(split);
        assert_eq!(pairs.len(), n);
        positives += pairs.iter().filter(|p| p.label == 1.0).count();
        split_bases.push(
            pairs
                .iter()
                .flat_map(|p| [base_id(&p.g1), base_id(&p.g2)])
                .collect(),
        );
    }
    assert_eq!(positives, 350);
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(
                split_bases[i].is_disjoint(&split_bases[j]),
                "splits {i} and {j} share base graphs"
            );
        }
    }
    let mut family_of_base = std::collections::BTreeMap::new();
    for g in ds.graphs() {
        family_of_base.insert(base_id(g.id()), g.prop(FAMILY).unwrap().to_string());
    }
    let er = family_of_base
        .values()
        .filter(|f| f.as_str() < "pa")
        .count();
    assert_eq!((er, family_of_base.len() - er), (30, 30));
    assert!(ds
        .graphs()
        .iter()
        .all(|g| (20..=40).contains(&g.num_nodes()) && g.feature_dim() == 8));
}

#[test]
fn generation_is_deterministic_and_files_round_trip() {
    let cfg = tiny_config(Task::Regression);
    let a = generate_synthetic_dataset(&cfg, 11).unwrap();
    assert_eq!(a, generate_synthetic_dataset(&cfg, 11).unwrap());
    assert_ne!(a, generate_synthetic_dataset(&cfg, 12).unwrap());
    assert!(a
        .pairs(Split::Train)
        .iter()
        .all(|p| p.label > 0.0 && p.label <= 1.0));

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&a, dir.path()).unwrap();
    let b = read_dataset(dir.path()).unwrap();
    assert_eq!(a, b);
    let dir2 = tempfile::tempdir().unwrap();
    write_dataset(&b, dir2.path()).unwrap();
    for f in ["graphs.jsonl", "pairs.jsonl", "meta.json"] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(dir2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn malformed_dataset_lines_report_file_and_line() {
    let ds = tiny(Task::Classification);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("pairs.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text += "{\"split\":\"train\",\"g1\":\n";
    fs::write(&path, text).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Parse { file, line, .. }) => {
            assert!(file.ends_with("pairs.jsonl"));
            assert_eq!(line, 65);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let ds = tiny(Task::Classification);
    for family in ModelFamily::ALL {
        let (ckpt, run) = train_gsl(&ds, family, tiny_hyper(6), 1).unwrap();
        assert_eq!(ckpt.meta.epochs_completed, 6);
        assert_eq!(run.epochs.len(), 6);
        assert!(
            run.final_train_loss().unwrap() < run.initial_train_loss,
            "{family}: {} -> {:?}",
            run.initial_train_loss,
            run.final_train_loss()
        );
        let best = run.best_epoch.unwrap();
        assert_eq!(run.best_val_metric, Some(run.epochs[best - 1].val_metric));
        assert_eq!(
            evaluate_gsl(&ckpt, &ds, Split::Test).unwrap(),
            run.test_metric
        );
        let (ckpt2, run2) = train_gsl(&ds, family, tiny_hyper(6), 1).unwrap();
        assert_eq!(ckpt, ckpt2);
        assert_eq!(run, run2);
    }
}

#[test]
fn regression_training_reports_mse() {
    let ds = tiny(Task::Regression);
    let (ckpt, run) = train_gsl(&ds, ModelFamily::Ppgm, tiny_hyper(4), 2).unwrap();
    assert!(run.final_train_loss().unwrap() < run.initial_train_loss);
    assert!(run.test_metric >= 0.0 && run.test_metric < 1.0);
    assert!(ckpt.model.params.contains_key("reg_head.w1"));
}

#[test]
fn checkpoints_round_trip_and_name_corrupt_tensors() {
    let ds = tiny(Task::Classification);
    let (ckpt, _) = train_gsl(&ds, ModelFamily::Ppgm, tiny_hyper(2), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(
        evaluate_gsl(&back, &ds, Split::Val).unwrap(),
        evaluate_gsl(&ckpt, &ds, Split::Val).unwrap()
    );

    let mut doc = ckpt.to_json();
    let rec = &mut doc["params"]["lstm.w_f"]["data_b64"];
    let s = rec.as_str().unwrap().to_string();
    *rec = serde_json::Value::String(s[..s.len() - 12].to_string());
    let e = Checkpoint::from_json(doc).unwrap_err();
    assert!(matches!(e, Error::Checkpoint(_)));
    assert!(e.to_string().contains("lstm.w_f"), "{e}");

    let mut doc = ckpt.to_json();
    doc["version"] = serde_json::json!(2);
    assert!(Checkpoint::from_json(doc).is_err());
}

#[test]
fn default_model_fits_the_size_budget() {
    let model = Model::init(
        ModelFamily::Ppgm,
        Task::Classification,
        8,
        HyperParams::default(),
        &mut ppgm::rng::stream(0, &[]),
    )
    .unwrap();
    let ckpt = Checkpoint {
        model,
        meta: CheckpointMeta {
            seed: 0,
            epochs_completed: 0,
            best_val_metric: None,
            best_epoch: None,
        },
    };
    let bytes = model_size_bytes(&ckpt);
    assert!((500_000..=2_000_000).contains(&bytes), "{bytes}");
}

#[test]
fn untrained_models_are_not_attacked_by_default() {
    let ds = tiny(Task::Classification);
    let model = Model::init(
        ModelFamily::Sgnn,
        Task::Classification,
        8,
        tiny_hyper(1),
        &mut ppgm::rng::stream(0, &[]),
    )
    .unwrap();
    let cfg = AttackConfig {
        shadow_frac: 0.5,
        attacker: AttackerConfig {
            epochs: 20,
            ..AttackerConfig::default()
        },
        ..AttackConfig::default()
    };
    assert!(run_attack(&model, 0, &ds, &cfg).is_err());
    let cfg = AttackConfig {
        allow_untrained: true,
        ..cfg
    };
    let rep = run_attack(&model, 0, &ds, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&rep.test_auc));
    assert_eq!(rep, run_attack(&model, 0, &ds, &cfg).unwrap());
}

#[test]
fn sweeps_and_reports() {
    let ds = tiny(Task::Classification);
    let dir = tempfile::tempdir().unwrap();
    let attack = AttackConfig {
        shadow_frac: 0.5,
        attacker: AttackerConfig {
            epochs: 20,
            ..AttackerConfig::default()
        },
        ..AttackConfig::default()
    };

    let mut m_cfg = SweepConfig::new(ModelFamily::Ppgm, SweepKind::M, vec![1, 2]);
    m_cfg.points = vec![1, 2];
    m_cfg.hyper = tiny_hyper(2);
    m_cfg.attack = attack.clone();
    m_cfg.jobs = 2;
    let rep = sweep(&ds, &m_cfg).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert_eq!(rep.summary.len(), 2);
    assert!(rep.summary.iter().all(|s| s.runs == 2));
    // Thread count does not change results.
    m_cfg.jobs = 1;
    assert_eq!(sweep(&ds, &m_cfg).unwrap(), rep);
    rep.write(&dir.path().join("m")).unwrap();

    let mut e_cfg = SweepConfig::new(ModelFamily::Sgnn, SweepKind::Epochs, vec![5]);
    e_cfg.points = vec![1, 3];
    e_cfg.hyper = tiny_hyper(0);
    e_cfg.attack = attack;
    let rep = sweep(&ds, &e_cfg).unwrap();
    assert_eq!(
        rep.rows.iter().map(|r| r.point).collect::<Vec<_>>(),
        vec![1, 3]
    );
    rep.write(&dir.path().join("e")).unwrap();

    let (_, run) = train_gsl(&ds, ModelFamily::Sgnn, tiny_hyper(2), 9).unwrap();
    run.write(&dir.path().join("run")).unwrap();
    assert_eq!(
        RunRecord::read(&dir.path().join("run/run.jsonl")).unwrap(),
        run
    );

    let rows = build_report(&[dir.path().to_path_buf()], &dir.path().join("report")).unwrap();
    assert!(rows
        .iter()
        .any(|r| r.model == "ppgm[m=2]" && r.metric == "attack_auc" && r.runs == 2));
    assert!(rows
        .iter()
        .any(|r| r.model == "sgnn[epochs=3]" && r.runs == 1));
    assert!(rows
        .iter()
        .any(|r| r.model == "sgnn[full]" && r.metric == "test_auc"));
    assert!(dir.path().join("report/report.txt").exists());
    assert!(build_report(&[], dir.path()).is_err());
}
