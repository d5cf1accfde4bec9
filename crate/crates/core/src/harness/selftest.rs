//! In-process property checks behind the `selftest` subcommand. These are
//! fast versions of the invariants the test suites cover in depth.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{generate_dataset, DatasetConfig, GridKind, QType, Split, BALANCED_MIX};
use crate::model::{supervised_targets, Model, ModelConfig};
use crate::numerics::{grad_check_many, Tape, Var};
use crate::probes::oracle_reader;
use crate::sequence::{base_causal_mask, encode_trace, SpanLayout, Trace, Vocabulary, VtType};
use crate::vdrop::{apply_vdrop, p_mask, sample_drop_region, VDropConfig};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
    pub seconds: f64,
}

fn fail(msg: String) -> Error {
    Error::Probe(msg)
}

fn mask_edit(rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..1000 {
        let vt = VtType::ALL[rng.gen_range(0..VtType::ALL.len())];
        let layout = SpanLayout::new(vt, rng.gen_range(5..20));
        let cfg = VDropConfig {
            rho: rng.gen_range(0.05..=1.0),
            ..VDropConfig::default()
        };
        let region = sample_drop_region((4, 5), &cfg, rng)?;
        let base = base_causal_mask(&layout, layout.len);
        let edited = apply_vdrop(&base, &layout, &region)?;
        let mut want = Vec::new();
        for q in layout.answer_rows() {
            for v in &region.views {
                for &(r, c) in &v.cells {
                    want.push((q, layout.view_position(v.view, r, c).expect("cell in view")));
                }
            }
        }
        want.sort();
        if base.diff(&edited) != want {
            return Err(fail(format!("mask edit mismatch for {vt:?}")));
        }
    }
    Ok(())
}

fn curriculum(rng: &mut ChaCha8Rng) -> Result<()> {
    for _ in 0..10_000 {
        let cfg = VDropConfig {
            s_w: rng.gen_range(0..2000),
            s_a: rng.gen_range(0..2000),
            ..VDropConfig::default()
        };
        let s = rng.gen_range(0..5000);
        let want = if s < cfg.s_w {
            0.0
        } else if s >= cfg.s_w + cfg.s_a {
            1.0
        } else {
            (s - cfg.s_w) as f64 / cfg.s_a as f64
        };
        if p_mask(s, &cfg) != want {
            return Err(fail(format!(
                "p_mask({s}) with s_w {} s_a {}",
                cfg.s_w, cfg.s_a
            )));
        }
    }
    Ok(())
}

fn gradients() -> Result<()> {
    let vocab = Vocabulary::standard();
    let rec = &generate_dataset(
        &DatasetConfig {
            split: Split::Id,
            count: 1,
            seed: 1,
            mix: BALANCED_MIX,
        },
        &vocab,
    )?[0];
    let (toks, layout) = encode_trace(
        &Trace::from_record(rec, VtType::TextStub),
        VtType::TextStub,
        &vocab,
    )?;
    let model = Model::init(ModelConfig {
        layers: 1,
        heads: 2,
        dim: 8,
        vocab: vocab.len(),
        max_len: layout.len,
        seed: 3,
    })?;
    let mask = base_causal_mask(&layout, layout.len);
    let (rows, targets) = supervised_targets(&toks, &layout);
    let inputs: Vec<_> = model.params.tensors().cloned().collect();
    let report = grad_check_many(
        |tape: &mut Tape, vars: &[Var]| {
            let (logits, _) = model.forward_tape(tape, vars, &toks, &layout, &mask, false)?;
            let sel = tape.select_rows(logits, &rows)?;
            tape.cross_entropy(sel, &targets)
        },
        &inputs,
        1e-4,
    )?;
    if !report.passed() {
        return Err(fail(format!(
            "max relative error {:.3e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn reader() -> Result<()> {
    let vocab = Vocabulary::standard();
    let recs = generate_dataset(
        &DatasetConfig {
            split: Split::Id,
            count: 300,
            seed: 2,
            mix: BALANCED_MIX,
        },
        &vocab,
    )?;
    for r in &recs {
        let top = oracle_reader(r, Some((&r.topdown, GridKind::TopDown)), 0)?;
        if matches!(
            r.qtype,
            QType::Anchor | QType::RelDistance | QType::RelDirection
        ) && top != r.gold_index
        {
            return Err(fail(format!(
                "top-down reader missed {:?} on scene {}",
                r.qtype, r.scene_seed
            )));
        }
        if oracle_reader(r, None, 4)? != oracle_reader(r, None, 4)? {
            return Err(fail("reader is not deterministic".into()));
        }
    }
    Ok(())
}

fn determinism() -> Result<()> {
    let vocab = Vocabulary::standard();
    let cfg = DatasetConfig {
        split: Split::Ood,
        count: 50,
        seed: 9,
        mix: BALANCED_MIX,
    };
    if generate_dataset(&cfg, &vocab)? != generate_dataset(&cfg, &vocab)? {
        return Err(fail("dataset generation is not deterministic".into()));
    }
    Ok(())
}

/// Runs every check; never panics.
pub fn run_selftest() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let checks: Vec<(&'static str, Box<dyn FnOnce() -> Result<()> + '_>)> = vec![
        ("mask_edit_exactness", Box::new(|| mask_edit(&mut rng))),
        (
            "curriculum_piecewise",
            Box::new(|| curriculum(&mut ChaCha8Rng::seed_from_u64(1))),
        ),
        ("gradient_fidelity", Box::new(gradients)),
        ("reader_soundness", Box::new(reader)),
        ("generation_determinism", Box::new(determinism)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let outcome = f().map_err(|e| e.to_string());
            CheckResult {
                name,
                outcome,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}
