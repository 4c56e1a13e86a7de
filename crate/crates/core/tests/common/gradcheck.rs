//! Central finite differences against the tape's reverse pass.

use ppgm::graphs::{PreparedGraph, Task};
use ppgm::model::{mse_loss, HyperParams, Model, ModelFamily, ModelTape, SessionNoise};
use ppgm::numerics::{cosine, GradMap, Tape, Tensor, Var};
use ppgm::rng::{self, Rng};
use ppgm::Result;
use rand::Rng as _;

use super::{model, prepared, random_tensor};

const EPS: f64 = 1e-6;
const MODEL_EPS: f64 = 1e-5;

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Scalar loss `sum(op(inputs) * weights)` so every output element carries
/// a distinct upstream gradient.
fn weighted_loss(inputs: &[Tensor], weights: &Tensor, op: &Build) -> (f64, GradMap) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(format!("x{i}"), &t.clone().with_grad(true)))
        .collect();
    let out = op(&mut tape, &vars).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum_all(prod);
    let g = tape.backward(loss).unwrap();
    (tape.value(loss).item(), g)
}

/// Worst relative error over the inputs of one primitive.
fn primitive_error(name: &str, inputs: Vec<Tensor>, op: &Build) -> f64 {
    let mut r = rng::stream(7, &[rng::tag(name)]);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let weights = random_tensor(out_shape[0], out_shape[1], &mut r);
    let (_, grads) = weighted_loss(&inputs, &weights, op);
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(&format!("x{i}"))
            .map(|g| g.data().to_vec())
            .unwrap_or(vec![0.0; x.numel()]);
        let mut numeric = vec![0.0; x.numel()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[k] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[k] -= EPS;
            *slot = (weighted_loss(&plus, &weights, op).0 - weighted_loss(&minus, &weights, op).0)
                / (2.0 * EPS);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn m(rows: usize, cols: usize, seed: u64) -> Tensor {
    random_tensor(rows, cols, &mut rng::stream(seed, &[]))
}

/// Values bounded away from zero so that ReLU kinks stay out of reach of
/// the finite-difference step.
fn away_from_zero(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut t = m(rows, cols, seed);
    for x in t.data_mut() {
        *x = if *x >= 0.0 { *x + 0.1 } else { *x - 0.1 };
    }
    t
}

/// Worst relative error of every differentiable primitive.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let cases: Vec<(&'static str, Vec<Tensor>, Box<Build>)> = vec![
        (
            "matmul",
            vec![m(3, 4, 1), m(4, 5, 2)],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "transpose",
            vec![m(3, 5, 3)],
            Box::new(|t, v| t.transpose(v[0])),
        ),
        (
            "add",
            vec![m(3, 4, 4), m(3, 4, 5)],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![m(3, 4, 6), m(3, 4, 7)],
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![m(3, 4, 8), m(3, 4, 9)],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "add_row",
            vec![m(3, 4, 10), m(1, 4, 11)],
            Box::new(|t, v| t.add_row(v[0], v[1])),
        ),
        (
            "scale",
            vec![m(3, 5, 12)],
            Box::new(|t, v| Ok(t.scale(v[0], -1.7))),
        ),
        (
            "concat",
            vec![m(3, 2, 13), m(3, 5, 14)],
            Box::new(|t, v| t.concat(&[v[0], v[1]])),
        ),
        (
            "concat_rows",
            vec![m(2, 3, 15), m(4, 3, 16)],
            Box::new(|t, v| t.concat_rows(&[v[0], v[1]])),
        ),
        (
            "slice_cols",
            vec![m(3, 6, 17)],
            Box::new(|t, v| t.slice_cols(v[0], 2, 3)),
        ),
        (
            "slice_rows",
            vec![m(5, 3, 18)],
            Box::new(|t, v| t.slice_rows(v[0], 1, 3)),
        ),
        (
            "sigmoid",
            vec![m(3, 4, 19)],
            Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        ),
        ("tanh", vec![m(3, 4, 20)], Box::new(|t, v| Ok(t.tanh(v[0])))),
        (
            "relu",
            vec![away_from_zero(3, 4, 21)],
            Box::new(|t, v| Ok(t.relu(v[0]))),
        ),
        (
            "softplus",
            vec![m(3, 4, 22)],
            Box::new(|t, v| Ok(t.softplus(v[0]))),
        ),
        (
            "softmax",
            vec![m(3, 4, 23)],
            Box::new(|t, v| Ok(t.softmax(v[0]))),
        ),
        (
            "mean_rows",
            vec![m(4, 3, 24)],
            Box::new(|t, v| t.mean_rows(v[0])),
        ),
        (
            "sum_all",
            vec![m(4, 3, 25)],
            Box::new(|t, v| Ok(t.sum_all(v[0]))),
        ),
        (
            "mean_all",
            vec![m(4, 3, 26)],
            Box::new(|t, v| Ok(t.mean_all(v[0]))),
        ),
        (
            "l2_normalize",
            vec![m(3, 4, 27)],
            Box::new(|t, v| Ok(t.l2_normalize(v[0]))),
        ),
        (
            "cosine",
            vec![m(1, 6, 28), m(1, 6, 29)],
            Box::new(|t, v| cosine(t, v[0], v[1])),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, op)| (name, primitive_error(name, inputs, op.as_ref())))
        .collect()
}

type Batch = Vec<(PreparedGraph, PreparedGraph, f64)>;

fn batch_loss(model: &Model, pairs: &Batch) -> (f64, GradMap) {
    let mut mt = ModelTape::new(model);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, (g1, g2, y)) in pairs.iter().enumerate() {
        let out = mt
            .forward_pair(g1, g2, SessionNoise::new(100 + i as u64))
            .unwrap();
        scores.push(out.score);
        labels.push(*y);
    }
    let loss = mse_loss(&mut mt.tape, &scores, &labels, model.task).unwrap();
    let value = mt.tape.value(loss).item();
    (value, mt.tape.backward(loss).unwrap())
}

/// At the default initialization activations shrink through the stacked
/// layers and attention logits sit near zero, so several gradients fall to
/// 1e-12 where finite differences are pure roundoff. Checking at a larger,
/// fully random point keeps every group well above that floor.
fn well_conditioned(mut model: Model, r: &mut Rng) -> Model {
    for t in model.params.values_mut() {
        for x in t.data_mut() {
            *x = 2.0 * *x + r.gen_range(-0.1..0.1);
        }
    }
    model
}

pub struct GroupError {
    pub name: String,
    pub rel_err: f64,
    /// Largest analytic gradient entry, to tell a vacuous match from a real one.
    pub max_abs: f64,
}

/// Relative error of every parameter group for the loss of a 2-pair batch
/// on 5-node graphs.
pub fn model_errors(family: ModelFamily, task: Task, hyper: HyperParams) -> Vec<GroupError> {
    let mut r = rng::stream(11, &[rng::tag(family.as_str())]);
    let model = well_conditioned(model(family, task, hyper, 3), &mut r);
    let labels = match task {
        Task::Classification => [1.0, 0.0],
        Task::Regression => [0.8, 0.3],
    };
    let pairs: Batch = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            (
                prepared(&format!("a{i}"), 5, 8, &mut r),
                prepared(&format!("b{i}"), 5, 8, &mut r),
                y,
            )
        })
        .collect();
    let (_, grads) = batch_loss(&model, &pairs);
    let mut out = Vec::new();
    for (name, t) in model.params.iter() {
        let analytic = grads
            .get(name)
            .map(|g| g.data().to_vec())
            .unwrap_or(vec![0.0; t.numel()]);
        let mut numeric = vec![0.0; t.numel()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data_mut()[k] += MODEL_EPS;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data_mut()[k] -= MODEL_EPS;
            *slot =
                (batch_loss(&plus, &pairs).0 - batch_loss(&minus, &pairs).0) / (2.0 * MODEL_EPS);
        }
        out.push(GroupError {
            name: name.clone(),
            rel_err: rel_err(&analytic, &numeric),
            max_abs: analytic.iter().fold(0.0, |a, g| a.max(g.abs())),
        });
    }
    out
}
