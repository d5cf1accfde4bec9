//! Dense tensors, reverse-mode differentiation, and optimization.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod softmax;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use optim::{Adam, AdamConfig, CosineSchedule};
pub use params::ParamStore;
pub use softmax::{is_blocked, masked_softmax, BLOCKED};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Cross-entropy of `targets` under row-wise softmax of a `rows × vocab` matrix.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> crate::error::Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let out = tape.cross_entropy(l, targets)?;
    Ok(tape.value(out).item())
}

/// Per-row negative log-likelihood of `targets` (no gradient).
pub fn row_cross_entropy(logits: &Tensor, targets: &[usize]) -> crate::error::Result<Vec<f64>> {
    let v = logits.cols();
    if logits.rows() != targets.len() {
        return Err(crate::Error::Shape(format!(
            "{} rows with {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            if t >= v {
                return Err(crate::Error::TargetOutOfRange { index: t, vocab: v });
            }
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            Ok(z.ln() + max - row[t])
        })
        .collect()
}
