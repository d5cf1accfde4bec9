use std::ops::Range;

use super::encode::SpanLayout;
use crate::numerics::{is_blocked, BLOCKED};

/// Square additive attention mask: 0 = visible, [`BLOCKED`] = hidden.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMask {
    n: usize,
    data: Vec<f64>,
}

impl AttnMask {
    pub fn open(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.n..(q + 1) * self.n]
    }

    pub fn is_blocked(&self, q: usize, k: usize) -> bool {
        is_blocked(self.data[q * self.n + k])
    }

    pub fn block(&mut self, q: usize, k: usize) {
        self.data[q * self.n + k] = BLOCKED;
    }

    pub fn block_rect(&mut self, rows: Range<usize>, cols: Range<usize>) {
        for q in rows {
            for k in cols.clone() {
                self.block(q, k);
            }
        }
    }

    /// Square sub-mask over the first `n` positions.
    pub fn truncated(&self, n: usize) -> Self {
        let mut out = Self::open(n);
        for q in 0..n {
            out.data[q * n..(q + 1) * n].copy_from_slice(&self.row(q)[..n]);
        }
        out
    }

    /// Entries (q, k) that differ between two masks of equal size.
    pub fn diff(&self, other: &AttnMask) -> Vec<(usize, usize)> {
        assert_eq!(self.n, other.n, "mask sizes differ");
        (0..self.n * self.n)
            .filter(|&i| self.data[i].to_bits() != other.data[i].to_bits())
            .map(|i| (i / self.n, i % self.n))
            .collect()
    }
}

/// Position `i` sees every `j <= i`.
pub fn base_causal_mask(layout: &SpanLayout, seq_len: usize) -> AttnMask {
    debug_assert!(seq_len <= layout.len);
    let mut m = AttnMask::open(seq_len);
    for q in 0..seq_len {
        for k in q + 1..seq_len {
            m.block(q, k);
        }
    }
    m
}
