//! The black-box attacker: a three-layer perceptron trained with binary
//! cross-entropy on standardized inputs.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, ParamSet, Tape, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackerConfig {
    pub hidden: (usize, usize),
    pub epochs: usize,
    pub lr: f64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            hidden: (128, 64),
            epochs: 200,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attacker {
    pub params: ParamSet,
    /// Per-feature standardization fitted on the training samples.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Training loss after each epoch.
    pub losses: Vec<f64>,
}

const LAYERS: [&str; 3] = ["l1", "l2", "l3"];

fn standardize(x: &[Vec<f64>], mean: &[f64], scale: &[f64]) -> Tensor {
    let dim = mean.len();
    let mut data = Vec::with_capacity(x.len() * dim);
    for row in x {
        data.extend(
            row.iter()
                .zip(mean)
                .zip(scale)
                .map(|((v, m), s)| (v - m) / s),
        );
    }
    Tensor::matrix(x.len(), dim, data).expect("rows share the fitted width")
}

fn logits(tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, l) in LAYERS.iter().enumerate() {
        let w = tape.param(format!("{l}.w"), &params[&format!("{l}.w")]);
        let b = tape.param(format!("{l}.b"), &params[&format!("{l}.b")]);
        let z = tape.matmul(h, w)?;
        let z = tape.add_row(z, b)?;
        h = if i < 2 { tape.relu(z) } else { z };
    }
    Ok(h)
}

fn check_width(x: &[Vec<f64>]) -> Result<usize> {
    let dim = x
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no attack samples"))?;
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid(
            "attack samples must share one non-zero width",
        ));
    }
    Ok(dim)
}

/// Full-batch Adam on mean binary cross-entropy. Deterministic given `seed`.
pub fn train_attacker(
    x: &[Vec<f64>],
    y: &[bool],
    seed: u64,
    cfg: AttackerConfig,
) -> Result<Attacker> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} samples for {} labels",
            x.len(),
            y.len()
        )));
    }
    let dim = check_width(x)?;
    let pos = y.iter().filter(|&&l| l).count();
    if pos < 2 || y.len() - pos < 2 {
        return Err(Error::invalid(format!(
            "attacker needs at least 2 samples per class (got {pos} positive, {} negative)",
            y.len() - pos
        )));
    }

    let n = x.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-16 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();

    let mut r = rng::stream(seed, &[rng::tag("attacker")]);
    let widths = [dim, cfg.hidden.0, cfg.hidden.1, 1];
    let mut params = ParamSet::new();
    for (i, l) in LAYERS.iter().enumerate() {
        let (fan_in, fan_out) = (widths[i], widths[i + 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| r.gen_range(-bound..=bound))
            .collect();
        params.insert(
            format!("{l}.w"),
            Tensor::matrix(fan_in, fan_out, w)?.with_grad(true),
        );
        params.insert(
            format!("{l}.b"),
            Tensor::zeros(&[1, fan_out]).with_grad(true),
        );
    }

    let xs = standardize(x, &mean, &scale);
    let ys = Tensor::matrix(
        y.len(),
        1,
        y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
    )?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(xs.clone());
        let yv = tape.constant(ys.clone());
        let z = logits(&mut tape, &params, xv)?;
        // softplus(z) − y·z is −log σ(z) for y=1 and −log(1−σ(z)) for y=0.
        let sp = tape.softplus(z);
        let yz = tape.mul(yv, z)?;
        let per = tape.sub(sp, yz)?;
        let loss = tape.mean_all(per);
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss)?;
        adam.step(&mut params, &grads)?;
    }
    Ok(Attacker {
        params,
        mean,
        scale,
        losses,
    })
}

impl Attacker {
    /// Probability of the positive property value for each sample.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Ok(vec![]);
        }
        let dim = check_width(x)?;
        if dim != self.mean.len() {
            return Err(Error::invalid(format!(
                "attacker trained on width {}, got {dim}",
                self.mean.len()
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(standardize(x, &self.mean, &self.scale));
        let z = logits(&mut tape, &self.params, xv)?;
        let p = tape.sigmoid(z);
        Ok(tape.value(p).data().to_vec())
    }
}
