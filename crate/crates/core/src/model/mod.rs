//! Small pre-norm decoder-only transformer over the unified vocabulary.
//!
//! Two execution paths share one parameter set: [`Model::forward_tape`]
//! records a differentiable forward pass for training and gradient checks, and
//! [`Decoder`] runs cached incremental inference for generation and probes.
//! Both take a per-sample additive attention mask.

mod decode;
mod forward;

pub use decode::{generate, AnswerOutput, Decoder, Generation, Session};
pub use forward::{attention_json, supervised_targets, ForwardOutput};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{Checkpoint, ParamStore, Tensor};
use crate::sequence::{Role, OPTION_SLOTS};
use crate::{Error, Result};

/// Row/column embedding slots: index 0 means "no coordinate", grids are at most 11 wide.
pub const COORD_SLOTS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab: usize) -> Self {
        Self {
            layers: 4,
            heads: 4,
            dim: 128,
            vocab,
            max_len: 160,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.dim == 0
            || self.vocab == 0
            || self.max_len == 0
        {
            return Err(Error::Config(format!("degenerate model config {self:?}")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.dim
    }

    fn to_meta(self) -> [(String, String); 6] {
        [
            ("model.layers".into(), self.layers.to_string()),
            ("model.heads".into(), self.heads.to_string()),
            ("model.dim".into(), self.dim.to_string()),
            ("model.vocab".into(), self.vocab.to_string()),
            ("model.max_len".into(), self.max_len.to_string()),
            ("model.seed".into(), self.seed.to_string()),
        ]
    }

    fn from_meta(meta: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<u64> {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad {k}")))
        };
        Ok(Self {
            layers: get("model.layers")? as usize,
            heads: get("model.heads")? as usize,
            dim: get("model.dim")? as usize,
            vocab: get("model.vocab")? as usize,
            max_len: get("model.max_len")? as usize,
            seed: get("model.seed")?,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerIndex {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Positions of each named parameter inside the [`ParamStore`].
#[derive(Clone, Debug)]
pub(crate) struct ParamIndex {
    pub tok: usize,
    pub pos: usize,
    pub seg: usize,
    pub row: usize,
    pub col: usize,
    pub slot: usize,
    pub layers: Vec<LayerIndex>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head: usize,
    pub head_b: usize,
}

fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dim;
    let mut out = vec![
        ("tok_emb".to_string(), vec![cfg.vocab, d]),
        ("pos_emb".into(), vec![cfg.max_len, d]),
        ("seg_emb".into(), vec![Role::COUNT, d]),
        ("row_emb".into(), vec![COORD_SLOTS, d]),
        ("col_emb".into(), vec![COORD_SLOTS, d]),
        ("slot_emb".into(), vec![OPTION_SLOTS, d]),
    ];
    for l in 0..cfg.layers {
        let p = |n: &str| format!("layer{l}.{n}");
        out.extend([
            (p("ln1.g"), vec![1, d]),
            (p("ln1.b"), vec![1, d]),
            (p("wq"), vec![d, d]),
            (p("wk"), vec![d, d]),
            (p("wv"), vec![d, d]),
            (p("wo"), vec![d, d]),
            (p("ln2.g"), vec![1, d]),
            (p("ln2.b"), vec![1, d]),
            (p("w1"), vec![d, cfg.mlp_dim()]),
            (p("b1"), vec![1, cfg.mlp_dim()]),
            (p("w2"), vec![cfg.mlp_dim(), d]),
            (p("b2"), vec![1, d]),
        ]);
    }
    out.extend([
        ("lnf.g".to_string(), vec![1, d]),
        ("lnf.b".into(), vec![1, d]),
        ("head".into(), vec![d, cfg.vocab]),
        ("head.b".into(), vec![1, cfg.vocab]),
    ]);
    out
}

fn build_index(cfg: &ModelConfig, params: &ParamStore) -> Result<ParamIndex> {
    for (name, shape) in param_shapes(cfg) {
        let t = params
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
    }
    let at = |n: &str| params.index_of(n).expect("checked above");
    Ok(ParamIndex {
        tok: at("tok_emb"),
        pos: at("pos_emb"),
        seg: at("seg_emb"),
        row: at("row_emb"),
        col: at("col_emb"),
        slot: at("slot_emb"),
        layers: (0..cfg.layers)
            .map(|l| {
                let p = |n: &str| at(&format!("layer{l}.{n}"));
                LayerIndex {
                    ln1_g: p("ln1.g"),
                    ln1_b: p("ln1.b"),
                    wq: p("wq"),
                    wk: p("wk"),
                    wv: p("wv"),
                    wo: p("wo"),
                    ln2_g: p("ln2.g"),
                    ln2_b: p("ln2.b"),
                    w1: p("w1"),
                    b1: p("b1"),
                    w2: p("w2"),
                    b2: p("b2"),
                }
            })
            .collect(),
        lnf_g: at("lnf.g"),
        lnf_b: at("lnf.b"),
        head: at("head"),
        head_b: at("head.b"),
    })
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub(crate) idx: ParamIndex,
}

impl Model {
    /// Gaussian init. Token embeddings have unit std and the positional,
    /// segment, coordinate and slot embeddings std 0.1, so token identity
    /// dominates the first layer's input. Weight matrices use std
    /// 1/sqrt(fan_in); each `wk` starts as a copy of its `wq`, so attention
    /// initially favours keys that carry the query's own token. Layer-norm
    /// gains 1, biases 0.
    pub fn init(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        for (name, shape) in param_shapes(&cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".g") {
                vec![1.0; n]
            } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                vec![0.0; n]
            } else if let Some(wq) = name
                .strip_suffix(".wk")
                .and_then(|l| params.get(&format!("{l}.wq")))
            {
                wq.data().to_vec()
            } else {
                let std = match name.as_str() {
                    "tok_emb" => 1.0,
                    n if n.ends_with("_emb") => 0.1,
                    _ => 1.0 / (shape[0] as f64).sqrt(),
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Self::from_params(cfg, params)
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let idx = build_index(&cfg, &params)?;
        Ok(Self { cfg, params, idx })
    }

    pub fn to_checkpoint(&self, extra: impl IntoIterator<Item = (String, String)>) -> Checkpoint {
        let mut meta: std::collections::BTreeMap<String, String> =
            self.cfg.to_meta().into_iter().collect();
        meta.extend(extra);
        Checkpoint {
            meta,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_params(ModelConfig::from_meta(&ck.meta)?, ck.params.clone())
    }

    pub(crate) fn p(&self, i: usize) -> &Tensor {
        self.params.tensor(i)
    }
}
