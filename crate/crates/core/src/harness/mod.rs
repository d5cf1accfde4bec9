pub mod io;
mod manifest;
mod selftest;
mod stages;

pub use manifest::{ExperimentManifest, OUT_ENV};
pub use selftest::{run_selftest, CheckResult};
pub use stages::{Experiment, Stage, StageOutcome, DONE};

use sha2::{Digest, Sha256};

/// Independent seed for the named substream of `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}
