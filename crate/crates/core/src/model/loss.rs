use crate::error::{Error, Result};
use crate::graphs::Task;
use crate::numerics::{Tape, Tensor, Var};

/// Classification labels {0,1} become cosine targets {−1,+1}; regression
/// labels are used as is.
pub fn map_label(task: Task, y: f64) -> f64 {
    match task {
        Task::Classification => 2.0 * y - 1.0,
        Task::Regression => y,
    }
}

/// Mean squared error of scalar predictions on the tape against raw labels.
pub fn mse_loss(tape: &mut Tape, predictions: &[Var], labels: &[f64], task: Task) -> Result<Var> {
    if predictions.is_empty() {
        return Err(Error::invalid("mse_loss on an empty batch"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let pred = tape.concat(predictions)?;
    let target = Tensor::row(labels.iter().map(|&y| map_label(task, y)).collect());
    let target = tape.constant(target);
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// Plain-value counterpart of [`mse_loss`].
pub fn mse(predictions: &[f64], labels: &[f64], task: Task) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::invalid(
            "mse needs equal, non-empty prediction and label lists",
        ));
    }
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - map_label(task, y)).powi(2))
        .sum();
    Ok(sum / predictions.len() as f64)
}
