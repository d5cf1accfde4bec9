//! Supervised fine-tuning over encoded traces with the view-dropout curriculum.

mod eval;

pub use eval::{evaluate, Condition, EvalReport, MetricsRecord};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{QType, TraceRecord};
use crate::harness::derive_seed;
use crate::harness::io::write_atomic;
use crate::model::{supervised_targets, Model, ModelConfig};
use crate::numerics::{row_cross_entropy, Adam, AdamConfig, CosineSchedule, Tape};
use crate::sequence::{
    base_causal_mask, encode_trace, SpanLayout, TokenId, Trace, Vocabulary, VtType,
};
use crate::vdrop::{append_audit, apply_vdrop, draw_for_sample, AuditRecord, VDropConfig};
use crate::{Error, Result};

/// One encoded trace.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: usize,
    pub key: u64,
    pub qtype: QType,
    pub gold: usize,
    pub tokens: Vec<TokenId>,
    pub layout: SpanLayout,
}

pub fn encode_examples(
    records: &[TraceRecord],
    vt_type: VtType,
    vocab: &Vocabulary,
) -> Result<Vec<Example>> {
    records
        .iter()
        .enumerate()
        .map(|(id, r)| {
            let (tokens, layout) = encode_trace(&Trace::from_record(r, vt_type), vt_type, vocab)?;
            Ok(Example {
                id,
                key: r.key(),
                qtype: r.qtype,
                gold: r.gold_index,
                tokens,
                layout,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub vt_type: VtType,
    pub vdrop: Option<VDropConfig>,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    /// Linear learning-rate warmup steps before cosine decay.
    pub lr_warmup: u64,
    pub min_lr_ratio: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            vt_type: VtType::Panoramic,
            vdrop: None,
            layers: 2,
            heads: 4,
            dim: 64,
            steps: 3000,
            batch: 16,
            lr: 3e-3,
            lr_warmup: 100,
            min_lr_ratio: 0.1,
            clip_norm: Some(1.0),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vt_type == VtType::None && self.vdrop.is_some() {
            return Err(Error::Config(
                "vt_type none has no thinking-image to route through; vdrop must be off".into(),
            ));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(v) = &self.vdrop {
            v.validate()?;
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            vocab,
            max_len: 160,
            seed: derive_seed(self.seed, "model-init"),
        }
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            base: self.lr,
            warmup: self.lr_warmup as usize,
            total: self.steps as usize,
            min_ratio: self.min_lr_ratio,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    /// Mean cross-entropy over every supervised row of the batch.
    pub loss: f64,
    pub vt_loss: Option<f64>,
    pub answer_loss: f64,
    pub masked: usize,
    #[serde(skip)]
    pub audit: Vec<AuditRecord>,
}

fn diverged(step: u64, batch: &[&Example]) -> Error {
    Error::Diverged {
        step: step as usize,
        samples: batch.iter().map(|e| e.id).collect(),
    }
}

/// One optimizer update on `batch`. When `vdrop` is set, each sample draws
/// its own Bernoulli(p_mask) decision and drop region.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&Example],
    step: u64,
    lr: f64,
    vdrop: Option<&VDropConfig>,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    let nonfinite = |e: Error| match e {
        Error::NonFinite(_) => diverged(step, batch),
        other => other,
    };
    let mut tape = Tape::new();
    let pv = model.leaf_params(&mut tape, true).map_err(nonfinite)?;
    let total_rows: usize = batch.iter().map(|e| e.layout.loss_rows().len()).sum();
    let mut loss = None;
    let mut audit = Vec::new();
    let (mut vt_sum, mut vt_n, mut ans_sum) = (0.0, 0usize, 0.0);
    for ex in batch {
        let mut mask = base_causal_mask(&ex.layout, ex.layout.len);
        if let Some(cfg) = vdrop {
            let rec = draw_for_sample(step, ex.id, cfg, (4, 5), rng)?;
            if let Some(region) = &rec.region {
                mask = apply_vdrop(&mask, &ex.layout, region)?;
            }
            audit.push(rec);
        }
        // VT rows precede the answer row, so the answer-row edit leaves their
        // (causal) computation identical to the unmasked pass.
        let (logits, _) = model
            .forward_tape(&mut tape, &pv, &ex.tokens, &ex.layout, &mask, false)
            .map_err(nonfinite)?;
        let (rows, targets) = supervised_targets(&ex.tokens, &ex.layout);
        let sel = tape.select_rows(logits, &rows)?;
        let ce = tape.cross_entropy(sel, &targets).map_err(nonfinite)?;
        let per_row = row_cross_entropy(tape.value(sel), &targets)?;
        let (ans, vt) = per_row
            .split_last()
            .expect("answer row is always supervised");
        ans_sum += ans;
        vt_sum += vt.iter().sum::<f64>();
        vt_n += vt.len();
        let weighted = tape.scale(ce, rows.len() as f64 / total_rows as f64)?;
        loss = Some(match loss {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let loss = loss.ok_or_else(|| Error::Config("empty batch".into()))?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(diverged(step, batch));
    }
    let mut grads = tape.backward(loss).map_err(nonfinite)?;
    let grads: Vec<Vec<f64>> = pv.iter().map(|&v| grads.take(v)).collect();
    drop(tape);
    adam.step(&mut model.params, &grads, lr)
        .map_err(nonfinite)?;
    Ok(StepReport {
        step,
        lr,
        loss: value,
        vt_loss: (vt_n > 0).then(|| vt_sum / vt_n as f64),
        answer_loss: ans_sum / batch.len() as f64,
        masked: audit.iter().filter(|r| r.masked).count(),
        audit,
    })
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    /// Manifest hash stamped into every file written here.
    pub manifest: Option<String>,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            manifest: None,
        })
    }

    pub fn with_manifest(self, hash: &str) -> Self {
        Self {
            manifest: Some(hash.to_string()),
            ..self
        }
    }

    /// Subdirectory carrying the same manifest.
    pub fn child(&self, name: &str) -> Result<Self> {
        let mut d = Self::new(self.root.join(name))?;
        d.manifest = self.manifest.clone();
        Ok(d)
    }

    fn stamp_csv(&self, body: String) -> String {
        match &self.manifest {
            Some(h) => format!("# manifest={h}\n{body}"),
            None => body,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

pub struct RunOutcome {
    pub model: Model,
    pub history: Vec<StepReport>,
    pub evals: Vec<MetricsRecord>,
    /// sha256 of the final checkpoint bytes.
    pub checkpoint_sha256: String,
}

/// Optional periodic evaluation during a run.
pub struct EvalPlan<'a> {
    pub examples: &'a [Example],
    pub every: u64,
    pub conditions: Vec<Condition>,
}

/// Full training run: deterministic in (config, data).
pub fn train(
    cfg: &TrainConfig,
    data: &[Example],
    vocab: &Vocabulary,
    eval_plan: Option<&EvalPlan<'_>>,
    out: Option<&RunDir>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if let Some(e) = data.iter().find(|e| e.layout.vt_type != cfg.vt_type) {
        return Err(Error::Config(format!(
            "example {} encoded as {}, run expects {}",
            e.id,
            e.layout.vt_type.name(),
            cfg.vt_type.name()
        )));
    }
    let mut model = Model::init(cfg.model_config(vocab.len()))?;
    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        },
    );
    let schedule = cfg.schedule();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batches"));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.vdrop.map_or(cfg.seed, |v| v.seed ^ cfg.seed),
        "vdrop",
    ));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps as usize);
    let mut evals = Vec::new();

    let audit_path = out.map(|d| d.path("audit.jsonl"));
    let metrics_path = out.map(|d| d.path("metrics.jsonl"));
    for p in audit_path.iter().chain(&metrics_path) {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }

    let run_eval = |model: &Model, step: u64, evals: &mut Vec<MetricsRecord>| -> Result<()> {
        if let Some(plan) = eval_plan {
            for &c in &plan.conditions {
                let rep = evaluate(
                    model,
                    vocab,
                    plan.examples,
                    c,
                    derive_seed(cfg.seed, "eval"),
                )?;
                let mut rec = MetricsRecord::new(step, &rep);
                rec.manifest = out.and_then(|d| d.manifest.clone());
                if let Some(p) = &metrics_path {
                    append_line(p, &serde_json::to_string(&rec)?)?;
                }
                evals.push(rec);
            }
        }
        Ok(())
    };

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut batch_rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let lr = schedule.lr(step as usize);
        let rep = train_step(
            &mut model,
            &mut adam,
            &batch,
            step,
            lr,
            cfg.vdrop.as_ref(),
            &mut drop_rng,
        )?;
        if let Some(p) = &audit_path {
            if !rep.audit.is_empty() {
                let mut audit = rep.audit.clone();
                for a in &mut audit {
                    a.manifest = out.and_then(|d| d.manifest.clone());
                }
                append_audit(p, &audit)?;
            }
        }
        history.push(rep);
        let done = step + 1;
        if let Some(d) = out {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                model
                    .to_checkpoint(checkpoint_meta(cfg, done, d.manifest.as_deref()))
                    .save(&d.path(&format!("ckpt_{done:06}.vtck")))?;
            }
        }
        if let Some(plan) = eval_plan {
            if plan.every > 0 && done % plan.every == 0 && done < cfg.steps {
                run_eval(&model, done, &mut evals)?;
            }
        }
    }
    run_eval(&model, cfg.steps, &mut evals)?;

    let ck = model.to_checkpoint(checkpoint_meta(
        cfg,
        cfg.steps,
        out.and_then(|d| d.manifest.as_deref()),
    ));
    let checkpoint_sha256 = ck.sha256();
    if let Some(d) = out {
        ck.save(&d.path("final.vtck"))?;
        write_atomic(
            &d.path("loss.csv"),
            d.stamp_csv(loss_csv(&history)).as_bytes(),
        )?;
        write_atomic(
            &d.path("report.csv"),
            d.stamp_csv(report_csv(cfg, &evals)).as_bytes(),
        )?;
    }
    Ok(RunOutcome {
        model,
        history,
        evals,
        checkpoint_sha256,
    })
}

fn checkpoint_meta(cfg: &TrainConfig, step: u64, manifest: Option<&str>) -> Vec<(String, String)> {
    let mut meta = vec![
        ("train.step".into(), step.to_string()),
        ("train.vt_type".into(), cfg.vt_type.name().into()),
        (
            "train.config".into(),
            serde_json::to_string(cfg).expect("config serializes"),
        ),
    ];
    if let Some(h) = manifest {
        meta.push(("manifest".into(), h.into()));
    }
    meta
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn loss_csv(history: &[StepReport]) -> String {
    let mut s = String::from("step,lr,loss,vt_loss,answer_loss,masked\n");
    for r in history {
        let vt = r.vt_loss.map_or(String::new(), |v| format!("{v:.6}"));
        s.push_str(&format!(
            "{},{:.6e},{:.6},{},{:.6},{}\n",
            r.step, r.lr, r.loss, vt, r.answer_loss, r.masked
        ));
    }
    s
}

/// Final-evaluation table: one row per condition.
pub fn report_csv(cfg: &TrainConfig, evals: &[MetricsRecord]) -> String {
    let mut s = String::from(
        "vt_type,vdrop,condition,step,n,overall,anchor,counting,rel_distance,rel_direction\n",
    );
    let last = evals.iter().map(|e| e.step).max();
    for e in evals.iter().filter(|e| Some(e.step) == last) {
        let cell = |q: QType| {
            e.per_type
                .get(q.name())
                .map_or(String::new(), |v| format!("{v:.4}"))
        };
        s.push_str(&format!(
            "{},{},{},{},{},{:.4},{},{},{},{}\n",
            cfg.vt_type.name(),
            cfg.vdrop.is_some(),
            e.condition,
            e.step,
            e.n,
            e.overall,
            cell(QType::Anchor),
            cell(QType::Counting),
            cell(QType::RelDistance),
            cell(QType::RelDirection),
        ));
    }
    s
}

#[cfg(test)]
mod tests;
