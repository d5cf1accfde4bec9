//! VDrop ablation grid: strategy × scope × drop ratio × warmup, plus the
//! no-VDrop reference, each over several seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::probe_model;
use crate::harness::derive_seed;
use crate::model::Model;
use crate::sequence::Vocabulary;
use crate::training::{evaluate, train, Condition, Example, RunDir, TrainConfig};
use crate::vdrop::{Scope, Strategy, VDropConfig};
use crate::Result;

pub const ABLATION_RHOS: [f64; 3] = [0.3, 0.5, 0.8];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub strategy: Strategy,
    pub scope: Scope,
    pub rho: f64,
    pub warmup: bool,
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!(
            "{}-{}-rho{}-{}",
            self.strategy.name(),
            self.scope.name(),
            self.rho,
            if self.warmup { "warmup" } else { "nowarmup" }
        )
    }

    /// `base` with this cell's settings; no warmup means masking at full
    /// probability from step 0.
    pub fn vdrop(&self, base: &VDropConfig) -> VDropConfig {
        let (s_w, s_a) = if self.warmup {
            (base.s_w, base.s_a)
        } else {
            (0, 0)
        };
        VDropConfig {
            rho: self.rho,
            strategy: self.strategy,
            scope: self.scope,
            s_w,
            s_a,
            seed: base.seed,
        }
    }
}

/// The 24 grid cells.
pub fn ablation_cells() -> Vec<AblationCell> {
    let mut out = Vec::with_capacity(24);
    for strategy in [Strategy::Region, Strategy::Random] {
        for scope in [Scope::OneView, Scope::TwoViews] {
            for rho in ABLATION_RHOS {
                for warmup in [true, false] {
                    out.push(AblationCell {
                        strategy,
                        scope,
                        rho,
                        warmup,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub id_acc: f64,
    pub masked_acc: f64,
    pub blind_drop: f64,
    /// Layer-averaged thinking-image attention share.
    pub rho_vt: f64,
}

pub fn evaluate_cell(
    model: &Model,
    vocab: &Vocabulary,
    test: &[Example],
    seed: u64,
) -> Result<CellMetrics> {
    let probe = probe_model(model, vocab, test)?;
    let masked = evaluate(
        model,
        vocab,
        test,
        Condition::MaskedInput,
        derive_seed(seed, "eval"),
    )?;
    Ok(CellMetrics {
        id_acc: probe.blind.acc_unblinded,
        masked_acc: masked.accuracy(),
        blind_drop: probe.blind.drop,
        rho_vt: probe.attention.mean_share,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` for the no-VDrop reference.
    pub cell: Option<AblationCell>,
    pub seed: u64,
    pub metrics: CellMetrics,
}

impl AblationRow {
    pub fn label(&self) -> String {
        self.cell
            .map_or_else(|| "no_vdrop".to_string(), |c| c.label())
    }
}

/// Trains and evaluates every cell (and the reference when asked) for
/// every seed. Run artifacts go under `out/<label>/seed<k>` when given.
pub fn run_ablation_grid(
    base: &TrainConfig,
    cells: &[AblationCell],
    reference: bool,
    seeds: &[u64],
    train_set: &[Example],
    test_set: &[Example],
    vocab: &Vocabulary,
    out: Option<&RunDir>,
) -> Result<Vec<AblationRow>> {
    let base_vdrop = base.vdrop.unwrap_or_default();
    let mut plan: Vec<Option<AblationCell>> = Vec::new();
    if reference {
        plan.push(None);
    }
    plan.extend(cells.iter().copied().map(Some));
    let mut rows = Vec::new();
    for cell in plan {
        for &seed in seeds {
            let cfg = TrainConfig {
                vdrop: cell.map(|c| c.vdrop(&base_vdrop)),
                seed,
                ..base.clone()
            };
            let label = cell.map_or_else(|| "no_vdrop".to_string(), |c| c.label());
            let dir = out
                .map(|o| o.child(&label)?.child(&format!("seed{seed}")))
                .transpose()?;
            let run = train(&cfg, train_set, vocab, None, dir.as_ref())?;
            let metrics = evaluate_cell(&run.model, vocab, test_set, seed)?;
            rows.push(AblationRow {
                cell,
                seed,
                metrics,
            });
        }
    }
    Ok(rows)
}

/// One line per configuration with metrics averaged over its seeds; the
/// reference row reports rho 0.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut groups: BTreeMap<String, (Option<AblationCell>, Vec<&CellMetrics>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let label = r.label();
        if !groups.contains_key(&label) {
            order.push(label.clone());
        }
        groups
            .entry(label)
            .or_insert((r.cell, Vec::new()))
            .1
            .push(&r.metrics);
    }
    let mut s = String::from(
        "config,strategy,scope,rho,warmup,seeds,id_acc,masked_acc,blind_drop,rho_vt\n",
    );
    for label in order {
        let (cell, ms) = &groups[&label];
        let n = ms.len() as f64;
        let mean = |f: fn(&CellMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
        let (strategy, scope, rho, warmup) = match cell {
            Some(c) => (
                c.strategy.name().to_string(),
                c.scope.name().to_string(),
                c.rho,
                c.warmup.to_string(),
            ),
            None => ("-".into(), "-".into(), 0.0, "-".into()),
        };
        s += &format!(
            "{label},{strategy},{scope},{rho},{warmup},{},{:.6},{:.6},{:.6},{:.6}\n",
            ms.len(),
            mean(|m| m.id_acc),
            mean(|m| m.masked_acc),
            mean(|m| m.blind_drop),
            mean(|m| m.rho_vt)
        );
    }
    s
}
