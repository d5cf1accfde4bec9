use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::TokenGrid;
use super::questions::{make_questions, AnswerOption, Provenance, QAItem, QType, Query};
use super::render::{render_panorama, render_point_matching, render_topdown, render_view};
use super::scene::{generate_scene, SceneParams, Split};
use super::types::Scene;
use crate::error::{Error, Result};
use crate::sequence::{TokenId, Vocabulary};

/// Training mix over (anchor, counting, rel_distance, rel_direction).
pub const TRAIN_MIX: [f64; 4] = [0.10, 0.15, 0.375, 0.375];
pub const BALANCED_MIX: [f64; 4] = [0.25; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub split: Split,
    pub count: usize,
    pub seed: u64,
    pub mix: [f64; 4],
}

/// One trace: both views, every thinking-image render, and the question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub scene_seed: u64,
    pub split: Split,
    pub qtype: QType,
    pub query: Query,
    pub question: String,
    pub question_tokens: Vec<TokenId>,
    pub options: Vec<AnswerOption>,
    pub gold_index: usize,
    pub provenance: Provenance,
    pub v1: TokenGrid,
    pub v2: TokenGrid,
    pub panorama: TokenGrid,
    pub topdown: TokenGrid,
    pub point_matching: TokenGrid,
    pub rationale_tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl TraceRecord {
    pub fn build(scene: &Scene, split: Split, item: &QAItem, vocab: &Vocabulary) -> Result<Self> {
        let mut shared: Vec<_> = scene.covisible();
        shared.sort_by_key(|o| o.id);
        let shared: Vec<_> = shared.iter().map(|o| o.kind).collect();
        Ok(Self {
            scene_seed: scene.seed,
            split,
            qtype: item.qtype,
            query: item.query,
            question: item.text.clone(),
            question_tokens: vocab.question_tokens(item)?,
            options: item.options.clone(),
            gold_index: item.gold,
            provenance: item.provenance.clone(),
            v1: render_view(scene, 0),
            v2: render_view(scene, 1),
            panorama: render_panorama(scene),
            topdown: render_topdown(scene),
            point_matching: render_point_matching(scene),
            rationale_tokens: vocab.rationale_tokens(&shared, scene.objects.len())?,
            manifest: None,
        })
    }

    pub fn item(&self) -> QAItem {
        QAItem {
            qtype: self.qtype,
            query: self.query,
            text: self.question.clone(),
            options: self.options.clone(),
            gold: self.gold_index,
            provenance: self.provenance.clone(),
        }
    }

    /// Stable identity used to derive per-item random streams.
    pub fn key(&self) -> u64 {
        self.scene_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.qtype.index() as u64)
    }

    /// Character-art rendering of every grid, for debugging.
    pub fn ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "seed {} [{}] {} (gold {})",
            self.scene_seed,
            self.qtype,
            self.question,
            ["A", "B", "C", "D"][self.gold_index]
        );
        for (i, o) in self.options.iter().enumerate() {
            let _ = writeln!(s, "  {}. {o}", ["A", "B", "C", "D"][i]);
        }
        for (name, g) in [
            ("view 1", &self.v1),
            ("view 2", &self.v2),
            ("panorama", &self.panorama),
            ("top-down", &self.topdown),
            ("point matching", &self.point_matching),
        ] {
            let _ = writeln!(s, "{name}:");
            s.push_str(&g.ascii());
        }
        s
    }
}

/// Scene seeds are drawn from the dataset stream; each trace takes the first
/// scene whose question set contains the drawn question type.
pub fn generate_dataset(cfg: &DatasetConfig, vocab: &Vocabulary) -> Result<Vec<TraceRecord>> {
    if cfg.mix.iter().any(|w| *w < 0.0) || cfg.mix.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("question mix {:?}", cfg.mix)));
    }
    let weights = WeightedIndex::new(cfg.mix).map_err(|e| Error::Config(e.to_string()))?;
    let params = SceneParams::for_split(cfg.split);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    while out.len() < cfg.count {
        let qtype = QType::ALL[weights.sample(&mut rng)];
        for _ in 0..10_000 {
            let scene_seed: u64 = rng.gen();
            let scene = generate_scene(scene_seed, &params)?;
            let mut qrng = ChaCha8Rng::seed_from_u64(scene_seed ^ 0x5151_5151);
            let set = make_questions(&scene, &mut qrng);
            if let Some(item) = set.get(qtype) {
                out.push(TraceRecord::build(&scene, cfg.split, item, vocab)?);
                break;
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::harness::io::write_atomic(path, &buf)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn ascii_sidecar(records: &[TraceRecord]) -> String {
    records.iter().map(|r| r.ascii() + "\n").collect()
}
