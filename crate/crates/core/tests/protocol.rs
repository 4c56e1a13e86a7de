//! Split execution over the simulated channel.

mod common;

use common::{default_dataset, model, small_hyper};
use ppgm::graphs::{PreparedGraph, Split, Task};
use ppgm::model::{score_pair, HyperParams, ModelFamily, SessionNoise};
use ppgm::protocol::{
    intercept, interceptable, replay_score, run_pairwise_session, Kind, Policy, Session, Transcript,
};
use ppgm::rng;

fn pairs(n: usize) -> Vec<(PreparedGraph, PreparedGraph)> {
    let ds = default_dataset();
    ds.pairs(Split::Train)
        .iter()
        .take(n)
        .map(|p| {
            (
                PreparedGraph::new(ds.graph(&p.g1).unwrap()),
                PreparedGraph::new(ds.graph(&p.g2).unwrap()),
            )
        })
        .collect()
}

#[test]
fn transcripts_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prs = pairs(3);
    for family in ModelFamily::ALL {
        let h = HyperParams {
            ldp_b: if family == ModelFamily::SgnnLdp {
                0.2
            } else {
                0.0
            },
            ..small_hyper()
        };
        let m = model(family, Task::Classification, h, 1);
        for (i, (g1, g2)) in prs.iter().enumerate() {
            let (score, t) =
                run_pairwise_session(&m, &m, g1, g2, &Session::new(format!("s{i}"), 5)).unwrap();
            let path = dir.path().join(format!("{family}-{i}.jsonl"));
            t.write(&path).unwrap();
            let back = Transcript::read(&path).unwrap();
            assert_eq!(back, t);
            assert_eq!(replay_score(&m, &back).unwrap().to_bits(), score.to_bits());
            assert_eq!(
                score.to_bits(),
                score_pair(&m, g1, g2, SessionNoise::new(5))
                    .unwrap()
                    .to_bits()
            );
        }
    }
}

#[test]
fn ldp_noise_depends_on_the_session_seed() {
    let h = HyperParams {
        ldp_b: 0.5,
        ..small_hyper()
    };
    let m = model(ModelFamily::SgnnLdp, Task::Classification, h, 2);
    let (g1, g2) = &pairs(1)[0];
    let (a, _) = run_pairwise_session(&m, &m, g1, g2, &Session::new("x", 1)).unwrap();
    let (b, _) = run_pairwise_session(&m, &m, g1, g2, &Session::new("x", 1)).unwrap();
    let (c, _) = run_pairwise_session(&m, &m, g1, g2, &Session::new("x", 2)).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_ne!(a, c);
}

#[test]
fn only_graph_level_vectors_cross_for_ppgm() {
    let m = model(
        ModelFamily::Ppgm,
        Task::Classification,
        HyperParams::default(),
        3,
    );
    for (i, (g1, g2)) in pairs(50).iter().enumerate() {
        let (_, t) =
            run_pairwise_session(&m, &m, g1, g2, &Session::new(format!("b{i}"), i as u64)).unwrap();
        for e in t.events() {
            assert_ne!(e.kind, Kind::NodeReps);
            match e.kind {
                Kind::Messages => assert_eq!((e.rows(), e.dim), (8, 100)),
                Kind::Obfuscated => assert_eq!((e.rows(), e.dim), (1, 100)),
                Kind::Score => assert_eq!(e.payload.len(), 1),
                other => panic!("unexpected {other:?}"),
            }
        }
    }
}

#[test]
fn uniform_one_draws_every_vector_equally_often() {
    let m = model(ModelFamily::Ppgm, Task::Classification, small_hyper(), 4);
    let (g1, g2) = &pairs(1)[0];
    let (_, t) = run_pairwise_session(&m, &m, g1, g2, &Session::new("u", 0)).unwrap();
    let all = interceptable(&t);
    assert_eq!(all.len(), 2 * 2 + 2);
    let mut counts = vec![0usize; all.len()];
    let mut r = rng::stream(77, &[]);
    let draws = 60_000;
    for _ in 0..draws {
        let got = intercept(&t, Policy::UniformOne, &mut r).unwrap();
        assert_eq!(got.len(), 1);
        let k = all.iter().position(|v| v.vector == got[0].vector).unwrap();
        counts[k] += 1;
    }
    let expected = draws as f64 / all.len() as f64;
    // Pearson chi-square with 5 degrees of freedom; 20.5 is the 0.999 quantile.
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 20.5, "counts {counts:?}, chi2 {chi2}");
    assert_eq!(intercept(&t, Policy::All, &mut r).unwrap().len(), all.len());
}

#[test]
fn devices_with_different_parameters_are_refused() {
    let a = model(ModelFamily::Ppgm, Task::Classification, small_hyper(), 5);
    let b = model(ModelFamily::Ppgm, Task::Classification, small_hyper(), 6);
    let (g1, g2) = &pairs(1)[0];
    assert!(run_pairwise_session(&a, &b, g1, g2, &Session::new("z", 0)).is_err());
}

#[test]
fn uniform_one_over_eighteen_default_vectors() {
    let m = model(ModelFamily::Ppgm, Task::Classification, HyperParams::default(), 8);
    let (g1, g2) = &pairs(1)[0];
    let (_, t) = run_pairwise_session(&m, &m, g1, g2, &Session::new("u18", 0)).unwrap();
    let all = interceptable(&t);
    assert_eq!(all.len(), 18);
    let draws = 10_000;
    let mut counts = [0usize; 18];
    let mut r = rng::stream(18, &[]);
    for _ in 0..draws {
        let got = intercept(&t, Policy::UniformOne, &mut r).unwrap();
        counts[all.iter().position(|v| v.vector == got[0].vector).unwrap()] += 1;
    }
    let p = 1.0 / 18.0;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        let f = c as f64 / draws as f64;
        assert!((f - p).abs() <= 3.0 * se, "vector {k}: frequency {f}");
    }
}
