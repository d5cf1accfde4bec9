//! Desk-scale laboratory for view dropout on interleaved thinking-image traces.
//!
//! A grid world supplies two-view scenes with exact ground truth; traces are
//! encoded into one token stream; a small decoder-only transformer learns to
//! emit a thinking-image and then an answer, optionally under the view-dropout
//! attention edit; probes measure whether the thinking-image is actually used.

pub mod error;
pub mod gridworld;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod probes;
pub mod sequence;
pub mod training;
pub mod vdrop;

pub use error::{Error, Result};
