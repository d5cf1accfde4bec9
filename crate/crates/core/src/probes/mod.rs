//! Measurement instruments over trained models and ground-truth renders:
//! the generate-then-blind probe, the answer-row attention share, and the
//! learnability / informativeness harness with its rule-based reader.

mod ablation;
mod reader;

pub use ablation::{
    ablation_cells, ablation_csv, evaluate_cell, run_ablation_grid, AblationCell, AblationRow,
    CellMetrics,
};
pub use reader::oracle_reader;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gridworld::{GridKind, QType, TokenGrid, TraceRecord, VisualToken};
use crate::model::{Model, Session};
use crate::sequence::{base_causal_mask, SpanLayout, TokenId, Vocabulary, VtType};
use crate::training::{encode_examples, Example};
use crate::vdrop::blind_vt;
use crate::{Error, Result};

/// Tolerance of the per-layer attention mass bookkeeping check.
pub const MASS_TOLERANCE: f64 = 1e-5;

fn token_hash(tokens: &[TokenId]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.0.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Answers of one item with and without access to its own generated
/// thinking-image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindPair {
    pub key: u64,
    pub qtype: QType,
    pub gold: usize,
    pub unblinded: usize,
    pub blinded: usize,
    /// Hash of the cached sequence both answers were read from.
    pub context_hash: String,
}

/// Generated thinking-image plus the paired answers and the unblinded
/// answer row's attention.
#[derive(Clone, Debug)]
pub struct ProbeItem {
    pub pair: BlindPair,
    pub vt: Vec<TokenId>,
    /// `[layer][head][key]`.
    pub attention: Vec<Vec<Vec<f64>>>,
}

/// Generates the thinking-image greedily, then answers twice from the same
/// cache: once normally and once with the answer row blinded to the
/// thinking-image span.
pub fn generate_then_blind(model: &Model, vocab: &Vocabulary, ex: &Example) -> Result<ProbeItem> {
    let l = &ex.layout;
    let mut s = Session::prefill(model, vocab, &ex.tokens[..l.prompt_len()], l)?;
    let vt = s.decode_vt()?;
    let before = token_hash(s.decoder().tokens());
    let open = s.answer(None, true)?;
    let after = token_hash(s.decoder().tokens());
    let mask = blind_vt(&base_causal_mask(l, l.len), l);
    let blind = s.answer(Some(&mask), false)?;
    if before != after || after != token_hash(s.decoder().tokens()) {
        return Err(Error::Probe(
            "answer decodes did not share one cached context".into(),
        ));
    }
    Ok(ProbeItem {
        pair: BlindPair {
            key: ex.key,
            qtype: ex.qtype,
            gold: ex.gold,
            unblinded: open.letter,
            blinded: blind.letter,
            context_hash: before,
        },
        vt,
        attention: open.attention.unwrap_or_default(),
    })
}

/// Paired accuracy difference, unblinded minus blinded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindSummary {
    pub n: usize,
    pub acc_unblinded: f64,
    pub acc_blinded: f64,
    pub drop: f64,
    pub stderr: f64,
}

/// Mean and standard error of paired per-item deltas.
pub fn paired_delta(deltas: &[f64]) -> (f64, f64) {
    let n = deltas.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = deltas.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn blind_summary(pairs: &[BlindPair]) -> BlindSummary {
    let hit = |a: usize, g: usize| if a == g { 1.0 } else { 0.0 };
    let deltas: Vec<f64> = pairs
        .iter()
        .map(|p| hit(p.unblinded, p.gold) - hit(p.blinded, p.gold))
        .collect();
    let n = pairs.len().max(1) as f64;
    let (drop, stderr) = paired_delta(&deltas);
    BlindSummary {
        n: pairs.len(),
        acc_unblinded: pairs.iter().map(|p| hit(p.unblinded, p.gold)).sum::<f64>() / n,
        acc_blinded: pairs.iter().map(|p| hit(p.blinded, p.gold)).sum::<f64>() / n,
        drop,
        stderr,
    }
}

/// Attention mass of one answer row split by span.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpanMass {
    pub v1: f64,
    pub v2: f64,
    pub vt: f64,
    pub other: f64,
}

impl SpanMass {
    pub fn of(weights: &[f64], layout: &SpanLayout) -> Self {
        let sum =
            |r: &std::ops::Range<usize>| weights.get(r.clone()).map_or(0.0, |w| w.iter().sum());
        let total: f64 = weights.iter().sum();
        let (v1, v2, vt) = (sum(&layout.v1), sum(&layout.v2), sum(&layout.vt));
        Self {
            v1,
            v2,
            vt,
            other: total - v1 - v2 - vt,
        }
    }

    pub fn total(&self) -> f64 {
        self.v1 + self.v2 + self.vt + self.other
    }

    /// Thinking-image share of the visual mass; `None` when there is none.
    pub fn share(&self) -> Option<f64> {
        let visual = self.v1 + self.v2 + self.vt;
        (visual > 0.0).then(|| self.vt / visual)
    }
}

/// Per-layer shares of one item: masses averaged over heads first.
pub fn item_shares(attention: &[Vec<Vec<f64>>], layout: &SpanLayout) -> Result<Vec<Option<f64>>> {
    attention
        .iter()
        .enumerate()
        .map(|(layer, heads)| {
            let mut avg = SpanMass::default();
            for w in heads {
                let m = SpanMass::of(w, layout);
                let total: f64 = w.iter().sum();
                if (m.total() - total).abs() > MASS_TOLERANCE
                    || (total - 1.0).abs() > MASS_TOLERANCE
                {
                    return Err(Error::Probe(format!(
                        "attention mass at layer {layer} sums to {total}"
                    )));
                }
                avg.v1 += m.v1;
                avg.v2 += m.v2;
                avg.vt += m.vt;
                avg.other += m.other;
            }
            let h = heads.len().max(1) as f64;
            avg.v1 /= h;
            avg.v2 /= h;
            avg.vt /= h;
            avg.other /= h;
            Ok(avg.share())
        })
        .collect()
}

/// Mean and interquartile band of one layer's share over items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShare {
    pub layer: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub n: usize,
    /// Items with no visual attention mass at this layer.
    pub excluded: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub layers: Vec<LayerShare>,
    /// Mean over layers of the per-layer mean share.
    pub mean_share: f64,
}

/// Aggregates per-item shares (`[item][layer]`).
pub fn attention_profile(per_item: &[Vec<Option<f64>>]) -> AttentionProfile {
    let n_layers = per_item.iter().map(Vec::len).max().unwrap_or(0);
    let layers: Vec<LayerShare> = (0..n_layers)
        .map(|layer| {
            let mut vals: Vec<f64> = per_item
                .iter()
                .filter_map(|s| s.get(layer).copied().flatten())
                .collect();
            vals.sort_by(f64::total_cmp);
            let n = vals.len();
            LayerShare {
                layer,
                mean: if n == 0 {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / n as f64
                },
                q1: quantile(&vals, 0.25),
                median: quantile(&vals, 0.5),
                q3: quantile(&vals, 0.75),
                n,
                excluded: per_item.len() - n,
            }
        })
        .collect();
    let valid: Vec<f64> = layers
        .iter()
        .map(|l| l.mean)
        .filter(|m| m.is_finite())
        .collect();
    let mean_share = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    AttentionProfile { layers, mean_share }
}

/// Blind probe and attention profile of one model over one item set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProbe {
    pub blind: BlindSummary,
    pub attention: AttentionProfile,
    pub pairs: Vec<BlindPair>,
}

pub fn probe_model(model: &Model, vocab: &Vocabulary, examples: &[Example]) -> Result<ModelProbe> {
    let mut pairs = Vec::with_capacity(examples.len());
    let mut shares = Vec::with_capacity(examples.len());
    for ex in examples {
        let item = generate_then_blind(model, vocab, ex)?;
        shares.push(item_shares(&item.attention, &ex.layout)?);
        pairs.push(item.pair);
    }
    Ok(ModelProbe {
        blind: blind_summary(&pairs),
        attention: attention_profile(&shares),
        pairs,
    })
}

/// The ground-truth thinking-image a reader receives for `vt`, if any.
pub fn thinking_image(rec: &TraceRecord, vt: VtType) -> Result<Option<(&TokenGrid, GridKind)>> {
    Ok(match vt {
        VtType::None => None,
        VtType::Panoramic => Some((&rec.panorama, GridKind::Panorama)),
        VtType::Topdown => Some((&rec.topdown, GridKind::TopDown)),
        VtType::PointMatching => Some((&rec.point_matching, GridKind::PointMatching)),
        VtType::TextStub => {
            return Err(Error::Config(
                "the reader takes images; text_stub has no image form".into(),
            ))
        }
    })
}

/// Reader accuracy with and without a third image, for one question type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeUplift {
    pub n: usize,
    pub base: f64,
    pub with_image: f64,
    pub delta: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpliftTable {
    pub vt_type: VtType,
    pub per_type: BTreeMap<String, TypeUplift>,
    /// Item-weighted mean of the per-type deltas.
    pub overall: f64,
}

impl UpliftTable {
    pub fn delta(&self, q: QType) -> Option<f64> {
        self.per_type.get(q.name()).map(|t| t.delta)
    }
}

fn uplift_table(
    records: &[TraceRecord],
    vt: VtType,
    images: &[Option<(&TokenGrid, GridKind)>],
    seed: u64,
) -> Result<UpliftTable> {
    let mut deltas: BTreeMap<QType, Vec<(f64, f64)>> = BTreeMap::new();
    for (rec, img) in records.iter().zip(images) {
        let base = oracle_reader(rec, None, seed)? == rec.gold_index;
        let with = oracle_reader(rec, *img, seed)? == rec.gold_index;
        deltas
            .entry(rec.qtype)
            .or_default()
            .push((f64::from(u8::from(base)), f64::from(u8::from(with))));
    }
    let mut per_type = BTreeMap::new();
    let mut weighted = 0.0;
    for (q, v) in &deltas {
        let n = v.len() as f64;
        let d: Vec<f64> = v.iter().map(|(b, w)| w - b).collect();
        let (delta, stderr) = paired_delta(&d);
        weighted += delta * n;
        per_type.insert(
            q.name().to_string(),
            TypeUplift {
                n: v.len(),
                base: v.iter().map(|p| p.0).sum::<f64>() / n,
                with_image: v.iter().map(|p| p.1).sum::<f64>() / n,
                delta,
                stderr,
            },
        );
    }
    Ok(UpliftTable {
        vt_type: vt,
        per_type,
        overall: weighted / records.len().max(1) as f64,
    })
}

/// Reader uplift from ground-truth thinking-images of type `vt`.
pub fn measure_informativeness(
    records: &[TraceRecord],
    vt: VtType,
    seed: u64,
) -> Result<UpliftTable> {
    let images = records
        .iter()
        .map(|r| thinking_image(r, vt))
        .collect::<Result<Vec<_>>>()?;
    uplift_table(records, vt, &images, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learnability {
    pub vt_type: VtType,
    pub token_match_rate: f64,
    pub uplift: UpliftTable,
}

/// Learnability from already-generated thinking-images (one per record).
pub fn measure_learnability_from_grids(
    records: &[TraceRecord],
    vt: VtType,
    generated: &[TokenGrid],
    seed: u64,
) -> Result<Learnability> {
    if generated.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} generated images for {} records",
            generated.len(),
            records.len()
        )));
    }
    let kind = vt
        .grid_kind()
        .ok_or_else(|| Error::Config(format!("{} has no thinking-image grid", vt.name())))?;
    let (mut cells, mut matches) = (0usize, 0usize);
    let mut images = Vec::with_capacity(records.len());
    for (rec, g) in records.iter().zip(generated) {
        g.check_kind(kind)?;
        let truth = thinking_image(rec, vt)?.expect("grid kind checked").0;
        cells += g.cells.len();
        matches += g
            .cells
            .iter()
            .zip(&truth.cells)
            .filter(|(a, b)| a == b)
            .count();
        images.push(Some((g, kind)));
    }
    Ok(Learnability {
        vt_type: vt,
        token_match_rate: matches as f64 / cells.max(1) as f64,
        uplift: uplift_table(records, vt, &images, seed)?,
    })
}

/// Thinking-images greedily generated by `model`, as grids.
pub fn generated_grids(
    model: &Model,
    vocab: &Vocabulary,
    records: &[TraceRecord],
    vt: VtType,
) -> Result<Vec<TokenGrid>> {
    let kind = vt
        .grid_kind()
        .ok_or_else(|| Error::Config(format!("{} has no thinking-image grid", vt.name())))?;
    let (rows, cols) = kind.shape();
    encode_examples(records, vt, vocab)?
        .iter()
        .map(|ex| {
            let l = &ex.layout;
            let mut s = Session::prefill(model, vocab, &ex.tokens[..l.prompt_len()], l)?;
            let cells = s
                .decode_vt()?
                .into_iter()
                .map(|t| vocab.as_visual(t).unwrap_or(VisualToken::EMPTY))
                .collect();
            TokenGrid::new(rows, cols, cells)
        })
        .collect()
}

pub fn measure_learnability(
    model: &Model,
    vocab: &Vocabulary,
    records: &[TraceRecord],
    vt: VtType,
    seed: u64,
) -> Result<Learnability> {
    let grids = generated_grids(model, vocab, records, vt)?;
    measure_learnability_from_grids(records, vt, &grids, seed)
}

/// Everything the `probe` and `li` stages emit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    /// Blind probe per evaluation set (e.g. `id`, `ood_analogue`).
    pub blind: BTreeMap<String, BlindSummary>,
    pub attention: Option<AttentionProfile>,
    pub informativeness: Vec<UpliftTable>,
    pub learnability: Vec<Learnability>,
}

impl ProbeReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Blind-drop per benchmark.
pub fn blind_csv(report: &ProbeReport) -> String {
    let mut s = String::from("benchmark,n,acc_unblinded,acc_blinded,drop,stderr\n");
    for (name, b) in &report.blind {
        s += &format!(
            "{name},{},{:.6},{:.6},{:.6},{:.6}\n",
            b.n, b.acc_unblinded, b.acc_blinded, b.drop, b.stderr
        );
    }
    s
}

/// Per-layer shares with interquartile bands.
pub fn attention_csv(profile: &AttentionProfile) -> String {
    let mut s = String::from("layer,mean,q1,median,q3,n,excluded\n");
    for l in &profile.layers {
        s += &format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            l.layer, l.mean, l.q1, l.median, l.q3, l.n, l.excluded
        );
    }
    s
}

/// Informativeness: one row per (type, question type), plus `overall`.
pub fn informativeness_csv(tables: &[UpliftTable]) -> String {
    let mut s = String::from("vt_type,qtype,n,base_acc,with_image_acc,delta,stderr\n");
    for t in tables {
        for (q, u) in &t.per_type {
            s += &format!(
                "{},{q},{},{:.6},{:.6},{:.6},{:.6}\n",
                t.vt_type.name(),
                u.n,
                u.base,
                u.with_image,
                u.delta,
                u.stderr
            );
        }
        s += &format!("{},overall,,,,{:.6},\n", t.vt_type.name(), t.overall);
    }
    s
}

/// Learnability: token match rate and generated-image uplift per type.
pub fn learnability_csv(rows: &[Learnability]) -> String {
    let mut s = String::from("vt_type,token_match_rate,qtype,delta\n");
    for r in rows {
        for (q, u) in &r.uplift.per_type {
            s += &format!(
                "{},{:.6},{q},{:.6}\n",
                r.vt_type.name(),
                r.token_match_rate,
                u.delta
            );
        }
        s += &format!(
            "{},{:.6},overall,{:.6}\n",
            r.vt_type.name(),
            r.token_match_rate,
            r.uplift.overall
        );
    }
    s
}

#[cfg(test)]
mod tests;
