//! Dense 64-bit tensors, a reverse-mode tape, and Adam.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, ParamSet};
pub use tape::{GradMap, Tape, Var, NORM_EPS};
pub use tensor::Tensor;

/// Cosine similarity of two row vectors on the tape. A zero vector yields 0.
pub fn cosine(tape: &mut Tape, a: Var, b: Var) -> crate::Result<Var> {
    let na = tape.l2_normalize(a);
    let nb = tape.l2_normalize(b);
    let prod = tape.mul(na, nb)?;
    Ok(tape.sum_all(prod))
}
