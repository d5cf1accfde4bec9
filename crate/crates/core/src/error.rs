use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate attention: row {row} has every key blocked")]
    DegenerateAttention { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("target index {index} out of range for vocabulary of {vocab}")]
    TargetOutOfRange { index: usize, vocab: usize },

    #[error("scene generation failed for seed {seed} after {retries} retries")]
    SceneGeneration { seed: u64, retries: usize },

    #[error("unknown token {0}")]
    UnknownToken(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("drop region cell ({row}, {col}) lies outside the {rows}x{cols} view span")]
    RegionOutOfView {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("training diverged at step {step}: non-finite loss (samples {samples:?})")]
    Diverged { step: usize, samples: Vec<usize> },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("probe: {0}")]
    Probe(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
