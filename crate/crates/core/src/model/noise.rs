use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Adds i.i.d. Laplace(0, b) noise to every coordinate.
pub fn ldp_noise(rep: &[f64], b: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(b >= 0.0) {
        return Err(Error::invalid(format!(
            "Laplace scale must be non-negative (got {b})"
        )));
    }
    if b == 0.0 {
        return Ok(rep.to_vec());
    }
    Ok(rep
        .iter()
        .map(|&x| {
            // Inverse CDF on u ∈ (−½, ½).
            let u: f64 = rng.gen::<f64>() - 0.5;
            x - b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
        })
        .collect())
}
