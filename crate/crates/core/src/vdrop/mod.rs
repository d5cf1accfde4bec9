//! View Dropout: answer-side attention mask edits, drop-region sampling, and
//! the masking curriculum.
//!
//! VDrop blocks attention from the answer query rows to a region of one input
//! view (or both). Thinking-image rows keep full access, so the only path from
//! the hidden cells to the answer runs through the generated thinking-image.

mod region;

pub use region::{rectangles, sample_drop_region, DropRegion, Rect, ViewDrop};

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sequence::{AttnMask, SpanLayout};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Contiguous axis-aligned rectangle.
    Region,
    /// I.i.d. subset of cells of the same size.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    OneView,
    TwoViews,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "region" => Ok(Self::Region),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown drop strategy `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Region => "region",
            Self::Random => "random",
        }
    }
}

impl Scope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one_view" => Ok(Self::OneView),
            "two_views" => Ok(Self::TwoViews),
            _ => Err(Error::Config(format!("unknown drop scope `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::OneView => "one_view",
            Self::TwoViews => "two_views",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VDropConfig {
    pub rho: f64,
    pub strategy: Strategy,
    pub scope: Scope,
    /// Warmup steps with no masking.
    pub s_w: u64,
    /// Steps over which the masking probability ramps from 0 to 1.
    pub s_a: u64,
    pub seed: u64,
}

impl Default for VDropConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            strategy: Strategy::Region,
            scope: Scope::OneView,
            s_w: 500,
            s_a: 1500,
            seed: 0,
        }
    }
}

impl VDropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!(
                "rho must be in (0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Masking probability at step `s`. With `s_a == 0` this is a step function at `s_w`.
pub fn p_mask(s: u64, cfg: &VDropConfig) -> f64 {
    if s < cfg.s_w {
        0.0
    } else if s < cfg.s_w + cfg.s_a {
        (s - cfg.s_w) as f64 / cfg.s_a as f64
    } else {
        1.0
    }
}

fn region_positions(layout: &SpanLayout, region: &DropRegion) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for vd in &region.views {
        for &(r, c) in &vd.cells {
            let pos = layout
                .view_position(vd.view, r, c)
                .ok_or(Error::RegionOutOfView {
                    row: r,
                    col: c,
                    rows: 4,
                    cols: 5,
                })?;
            out.push(pos);
        }
    }
    Ok(out)
}

/// Blocks every answer-row × dropped-position entry; nothing else changes.
pub fn apply_vdrop(mask: &AttnMask, layout: &SpanLayout, region: &DropRegion) -> Result<AttnMask> {
    let keys = region_positions(layout, region)?;
    let mut out = mask.clone();
    for q in layout.answer_rows() {
        if q >= out.size() {
            continue;
        }
        for &k in &keys {
            out.block(q, k);
        }
    }
    Ok(out)
}

/// Blocks the answer rows on the whole thinking-image span.
pub fn blind_vt(mask: &AttnMask, layout: &SpanLayout) -> AttnMask {
    let mut out = mask.clone();
    let rows = layout.answer_rows();
    let rows = rows.start..rows.end.min(out.size());
    let vt = layout.vt.start..layout.vt.end.min(out.size());
    out.block_rect(rows, vt);
    out
}

/// One per-sample masking decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub step: u64,
    pub sample: usize,
    pub p_mask: f64,
    pub masked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<DropRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

/// Bernoulli(p_mask) decision, then a region when it fires.
pub fn draw_for_sample<R: Rng>(
    step: u64,
    sample: usize,
    cfg: &VDropConfig,
    view_shape: (usize, usize),
    rng: &mut R,
) -> Result<AuditRecord> {
    let p = p_mask(step, cfg);
    let masked = rng.gen::<f64>() < p;
    let region = if masked {
        Some(sample_drop_region(view_shape, cfg, rng)?)
    } else {
        None
    };
    Ok(AuditRecord {
        step,
        sample,
        p_mask: p,
        masked,
        region,
        manifest: None,
    })
}

/// Appends audit records to a JSON-lines file.
pub fn append_audit(path: &Path, records: &[AuditRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests;
