use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive mask value for a blocked attention entry.
pub const BLOCKED: f64 = -1e9;

pub fn is_blocked(m: f64) -> bool {
    m <= BLOCKED * 0.5
}

/// Softmax of `logits + mask` per row, where blocked entries are excluded
/// from normalization and set to exactly zero.
pub fn masked_softmax(logits: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if logits.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs mask {:?}",
            logits.shape(),
            mask.shape()
        )));
    }
    let out = masked_softmax_rows(logits.data(), mask.data(), logits.cols())?;
    Tensor::new(logits.shape().to_vec(), out)
}

pub(crate) fn masked_softmax_rows(logits: &[f64], mask: &[f64], cols: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.len()];
    if cols == 0 {
        return Ok(out);
    }
    for (r, ((dst, row), mrow)) in out
        .chunks_mut(cols)
        .zip(logits.chunks(cols))
        .zip(mask.chunks(cols))
        .enumerate()
    {
        softmax_row_into(row, mrow, dst).map_err(|_| Error::DegenerateAttention { row: r })?;
    }
    Ok(out)
}

/// One masked softmax row. Errors (with `()`) when every entry is blocked.
pub(crate) fn softmax_row_into(row: &[f64], mask: &[f64], dst: &mut [f64]) -> Result<(), ()> {
    let mut max = f64::NEG_INFINITY;
    for (&x, &m) in row.iter().zip(mask) {
        if !is_blocked(m) {
            max = max.max(x + m);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut z = 0.0;
    for ((d, &x), &m) in dst.iter_mut().zip(row).zip(mask) {
        *d = if is_blocked(m) {
            0.0
        } else {
            (x + m - max).exp()
        };
        z += *d;
    }
    for d in dst.iter_mut() {
        *d /= z;
    }
    Ok(())
}
