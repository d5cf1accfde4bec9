//! Flat `key = value` experiment manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::io::sha256_hex;
use crate::sequence::VtType;
use crate::training::TrainConfig;
use crate::vdrop::{Scope, Strategy, VDropConfig};
use crate::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "VTLAB_OUT";

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", ""),
    ("gen.train_count", "20000"),
    ("gen.test_count", "400"),
    ("gen.ood_count", "400"),
    ("gen.mix", "0.1,0.15,0.375,0.375"),
    ("train.vt_type", "panoramic"),
    ("train.vdrop", "true"),
    ("train.layers", "2"),
    ("train.heads", "4"),
    ("train.dim", "64"),
    ("train.steps", "3000"),
    ("train.batch", "16"),
    ("train.lr", "0.003"),
    ("train.lr_warmup", "100"),
    ("train.min_lr_ratio", "0.1"),
    ("train.clip_norm", "1"),
    ("train.checkpoint_every", "0"),
    ("vdrop.rho", "0.5"),
    ("vdrop.strategy", "region"),
    ("vdrop.scope", "one_view"),
    ("vdrop.s_w", "500"),
    ("vdrop.s_a", "1500"),
    ("probe.items", "400"),
    ("li.items", "2000"),
    ("ablate.seeds", "3"),
    ("ablate.steps", "3000"),
    ("ablate.cells", "all"),
];

/// Stage configuration read from a manifest; unset keys take defaults.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentManifest {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl ExperimentManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected key = value", n + 1)))?;
            m.set(k.trim(), v.trim())?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::Manifest(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        DEFAULTS.iter().map(|(k, _)| *k)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Manifest(format!("`{key}` has invalid value `{}`", self.get(key))))
    }

    /// Canonical text: every key in sorted order.
    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hash of the canonical text minus `out`, so relocating a run keeps
    /// its identity.
    pub fn hash(&self) -> String {
        let text: String = self
            .values
            .iter()
            .filter(|(k, _)| k.as_str() != "out")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        sha256_hex(text.as_bytes())
    }

    /// `out`, else `$VTLAB_OUT`, else `./runs`.
    pub fn out_dir(&self) -> PathBuf {
        match self.get("out") {
            "" => std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
            p => PathBuf::from(p),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn count(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn mix(&self) -> Result<[f64; 4]> {
        let parts: Vec<f64> = self
            .get("gen.mix")
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::Manifest(format!(
                    "`gen.mix` has invalid value `{}`",
                    self.get("gen.mix")
                ))
            })?;
        parts
            .try_into()
            .map_err(|_| Error::Manifest("`gen.mix` needs four weights".into()))
    }

    pub fn vdrop(&self) -> Result<VDropConfig> {
        let cfg = VDropConfig {
            rho: self.parsed("vdrop.rho")?,
            strategy: Strategy::parse(self.get("vdrop.strategy"))?,
            scope: Scope::parse(self.get("vdrop.scope"))?,
            s_w: self.parsed("vdrop.s_w")?,
            s_a: self.parsed("vdrop.s_a")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let vt_type = VtType::parse(self.get("train.vt_type"))?;
        let clip: f64 = self.parsed("train.clip_norm")?;
        let cfg = TrainConfig {
            dataset: None,
            vt_type,
            vdrop: if self.parsed::<bool>("train.vdrop")? {
                Some(self.vdrop()?)
            } else {
                None
            },
            layers: self.parsed("train.layers")?,
            heads: self.parsed("train.heads")?,
            dim: self.parsed("train.dim")?,
            steps: self.parsed("train.steps")?,
            batch: self.parsed("train.batch")?,
            lr: self.parsed("train.lr")?,
            lr_warmup: self.parsed("train.lr_warmup")?,
            min_lr_ratio: self.parsed("train.min_lr_ratio")?,
            clip_norm: (clip > 0.0).then_some(clip),
            seed: self.seed()?,
            checkpoint_every: self.parsed("train.checkpoint_every")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
