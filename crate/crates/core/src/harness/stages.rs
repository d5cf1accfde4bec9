//! Pipeline stages. Each stage writes into a temporary directory under the
//! output root and is renamed into place only after it succeeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::io::{file_sha256, write_atomic};
use super::manifest::ExperimentManifest;
use crate::gridworld::{
    ascii_sidecar, generate_dataset, read_jsonl, write_jsonl, DatasetConfig, QType, Split,
    TraceRecord, BALANCED_MIX,
};
use crate::model::Model;
use crate::numerics::Checkpoint;
use crate::probes::{
    ablation_cells, ablation_csv, attention_csv, blind_csv, informativeness_csv, learnability_csv,
    measure_informativeness, measure_learnability, probe_model, run_ablation_grid, AblationCell,
    ProbeReport,
};
use crate::sequence::{Vocabulary, VtType};
use crate::training::{encode_examples, evaluate, train, Condition, EvalReport, RunDir};
use crate::{Error, Result};

/// Name of the completion marker inside a promoted stage directory.
pub const DONE: &str = "DONE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gen,
    Train,
    Eval,
    Probe,
    Li,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Gen,
        Stage::Train,
        Stage::Eval,
        Stage::Probe,
        Stage::Li,
        Stage::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Probe => "probe",
            Stage::Li => "li",
            Stage::Ablate => "ablate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    /// Stages whose outputs this one reads.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Gen => &[],
            Stage::Train | Stage::Ablate => &[Stage::Gen],
            Stage::Eval | Stage::Probe => &[Stage::Gen, Stage::Train],
            Stage::Li => &[Stage::Gen],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Already complete for this manifest.
    Skipped,
}

/// Resolves paths of one experiment.
pub struct Experiment {
    pub manifest: ExperimentManifest,
    pub root: PathBuf,
    hash: String,
}

impl Experiment {
    pub fn new(manifest: ExperimentManifest) -> Self {
        let root = manifest.out_dir();
        let hash = manifest.hash();
        Self {
            manifest,
            root,
            hash,
        }
    }

    pub fn manifest_hash(&self) -> &str {
        &self.hash
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        std::fs::read_to_string(self.stage_dir(stage).join(DONE))
            .is_ok_and(|s| s.trim() == self.marker())
    }

    fn marker(&self) -> String {
        format!("manifest={}", self.hash)
    }

    /// Runs `stage` unless it is already complete for this manifest.
    pub fn run(&self, stage: Stage, force: bool) -> Result<StageOutcome> {
        if !force && self.is_done(stage) {
            return Ok(StageOutcome::Skipped);
        }
        for &dep in stage.inputs() {
            let done = self.stage_dir(dep).join(DONE);
            if !self.is_done(dep) {
                return Err(Error::MissingInput(done));
            }
        }
        std::fs::create_dir_all(&self.root)?;
        let tmp = tempfile::Builder::new()
            .prefix(&format!(".{}-", stage.name()))
            .tempdir_in(&self.root)?;
        let work = tmp.path().to_path_buf();
        match stage {
            Stage::Gen => self.gen(&work)?,
            Stage::Train => self.train(&work)?,
            Stage::Eval => self.eval(&work)?,
            Stage::Probe => self.probe(&work)?,
            Stage::Li => self.li(&work)?,
            Stage::Ablate => self.ablate(&work)?,
        }
        write_atomic(&work.join(DONE), format!("{}\n", self.marker()).as_bytes())?;
        let dest = self.stage_dir(stage);
        if dest.exists() {
            std::fs::remove_dir_all(&dest)?;
        }
        let work = tmp.keep();
        std::fs::rename(&work, &dest)?;
        Ok(StageOutcome::Ran)
    }

    fn stamp_csv(&self, body: &str) -> String {
        format!("# manifest={}\n{body}", self.hash)
    }

    fn dataset(
        &self,
        split: Split,
        count: usize,
        label: &str,
        mix: [f64; 4],
    ) -> Result<Vec<TraceRecord>> {
        let vocab = Vocabulary::standard();
        let mut recs = generate_dataset(
            &DatasetConfig {
                split,
                count,
                seed: derive_seed(self.manifest.seed()?, label),
                mix,
            },
            &vocab,
        )?;
        for r in &mut recs {
            r.manifest = Some(self.hash.clone());
        }
        Ok(recs)
    }

    fn gen(&self, work: &Path) -> Result<()> {
        let m = &self.manifest;
        let sets = [
            ("train", Split::Id, m.count("gen.train_count")?, m.mix()?),
            (
                "test_id",
                Split::Id,
                m.count("gen.test_count")?,
                BALANCED_MIX,
            ),
            (
                "test_ood",
                Split::Ood,
                m.count("gen.ood_count")?,
                BALANCED_MIX,
            ),
            ("li", Split::Id, m.count("li.items")?, BALANCED_MIX),
        ];
        for (name, split, count, mix) in sets {
            let recs = self.dataset(split, count, &format!("data/{name}"), mix)?;
            write_jsonl(&work.join(format!("{name}.jsonl")), &recs)?;
            if name == "test_id" {
                let sample = ascii_sidecar(&recs[..recs.len().min(20)]);
                write_atomic(
                    &work.join("test_id.txt"),
                    self.stamp_csv(&sample).as_bytes(),
                )?;
            }
        }
        let vocab = Vocabulary::standard().to_manifest();
        write_atomic(&work.join("vocab.tsv"), self.stamp_csv(&vocab).as_bytes())
    }

    fn records(&self, name: &str) -> Result<Vec<TraceRecord>> {
        let path = self.stage_dir(Stage::Gen).join(format!("{name}.jsonl"));
        if !path.exists() {
            return Err(Error::MissingInput(path));
        }
        read_jsonl(&path)
    }

    fn train(&self, work: &Path) -> Result<()> {
        let cfg = self.manifest.train_config()?;
        let vocab = Vocabulary::standard();
        let data = encode_examples(&self.records("train")?, cfg.vt_type, &vocab)?;
        let dir = RunDir::new(work)?.with_manifest(&self.hash);
        train(&cfg, &data, &vocab, None, Some(&dir))?;
        Ok(())
    }

    fn model(&self) -> Result<Model> {
        let ck = Checkpoint::load(&self.stage_dir(Stage::Train).join("final.vtck"))?;
        Model::from_checkpoint(&ck)
    }

    fn eval(&self, work: &Path) -> Result<()> {
        let vt = self.manifest.train_config()?.vt_type;
        let vocab = Vocabulary::standard();
        let model = self.model()?;
        let seed = derive_seed(self.manifest.seed()?, "eval");
        let mut csv = String::from("benchmark,condition,n,overall,anchor,counting,rel_distance,rel_direction,malformed,vt_match_rate\n");
        for (bench, name) in [("id", "test_id"), ("ood_analogue", "test_ood")] {
            let exs = encode_examples(&self.records(name)?, vt, &vocab)?;
            for c in [Condition::Standard, Condition::MaskedInput] {
                let r = evaluate(&model, &vocab, &exs, c, seed)?;
                csv += &eval_row(bench, &r);
            }
        }
        write_atomic(&work.join("eval.csv"), self.stamp_csv(&csv).as_bytes())
    }

    fn probe(&self, work: &Path) -> Result<()> {
        let vt = self.manifest.train_config()?.vt_type;
        let n = self.manifest.count("probe.items")?;
        let vocab = Vocabulary::standard();
        let model = self.model()?;
        let mut report = ProbeReport {
            manifest: Some(self.hash.clone()),
            ..ProbeReport::default()
        };
        for (bench, name) in [("id", "test_id"), ("ood_analogue", "test_ood")] {
            let recs = self.records(name)?;
            let exs = encode_examples(&recs[..recs.len().min(n)], vt, &vocab)?;
            let p = probe_model(&model, &vocab, &exs)?;
            report.blind.insert(bench.to_string(), p.blind);
            if bench == "id" {
                report.attention = Some(p.attention);
            }
        }
        write_atomic(&work.join("probe.json"), report.to_json()?.as_bytes())?;
        write_atomic(
            &work.join("blind.csv"),
            self.stamp_csv(&blind_csv(&report)).as_bytes(),
        )?;
        if let Some(a) = &report.attention {
            write_atomic(
                &work.join("attention.csv"),
                self.stamp_csv(&attention_csv(a)).as_bytes(),
            )?;
        }
        Ok(())
    }

    fn li(&self, work: &Path) -> Result<()> {
        let recs = self.records("li")?;
        let seed = derive_seed(self.manifest.seed()?, "reader");
        let mut report = ProbeReport {
            manifest: Some(self.hash.clone()),
            ..ProbeReport::default()
        };
        for vt in [VtType::Panoramic, VtType::Topdown, VtType::PointMatching] {
            report
                .informativeness
                .push(measure_informativeness(&recs, vt, seed)?);
        }
        // learnability needs a trained grid-type model; skipped otherwise
        let vt = self.manifest.train_config()?.vt_type;
        if vt.grid_kind().is_some() && self.is_done(Stage::Train) {
            let n = self.manifest.count("probe.items")?;
            let vocab = Vocabulary::standard();
            report.learnability.push(measure_learnability(
                &self.model()?,
                &vocab,
                &recs[..recs.len().min(n)],
                vt,
                seed,
            )?);
        }
        write_atomic(
            &work.join("informativeness.csv"),
            self.stamp_csv(&informativeness_csv(&report.informativeness))
                .as_bytes(),
        )?;
        write_atomic(
            &work.join("learnability.csv"),
            self.stamp_csv(&learnability_csv(&report.learnability))
                .as_bytes(),
        )?;
        write_atomic(&work.join("li.json"), report.to_json()?.as_bytes())
    }

    fn ablation_plan(&self) -> Result<Vec<AblationCell>> {
        let all = ablation_cells();
        match self.manifest.get("ablate.cells") {
            "all" => Ok(all),
            list => list
                .split(',')
                .map(|label| {
                    let label = label.trim();
                    all.iter()
                        .find(|c| c.label() == label)
                        .copied()
                        .ok_or_else(|| Error::Manifest(format!("unknown ablation cell `{label}`")))
                })
                .collect(),
        }
    }

    fn ablate(&self, work: &Path) -> Result<()> {
        let m = &self.manifest;
        let base = crate::training::TrainConfig {
            steps: m.count("ablate.steps")? as u64,
            vdrop: Some(m.vdrop()?),
            ..m.train_config()?
        };
        let seed = m.seed()?;
        let seeds: Vec<u64> = (0..m.count("ablate.seeds")? as u64)
            .map(|k| seed + k)
            .collect();
        let vocab = Vocabulary::standard();
        let train_set = encode_examples(&self.records("train")?, base.vt_type, &vocab)?;
        let test = self.records("test_id")?;
        let test = encode_examples(
            &test[..test.len().min(m.count("probe.items")?)],
            base.vt_type,
            &vocab,
        )?;
        let runs = RunDir::new(work.join("runs"))?.with_manifest(&self.hash);
        let rows = run_ablation_grid(
            &base,
            &self.ablation_plan()?,
            true,
            &seeds,
            &train_set,
            &test,
            &vocab,
            Some(&runs),
        )?;
        write_atomic(
            &work.join("ablation.csv"),
            self.stamp_csv(&ablation_csv(&rows)).as_bytes(),
        )?;
        let mut per_seed = String::from("config,seed,id_acc,masked_acc,blind_drop,rho_vt\n");
        for r in &rows {
            per_seed += &format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.label(),
                r.seed,
                r.metrics.id_acc,
                r.metrics.masked_acc,
                r.metrics.blind_drop,
                r.metrics.rho_vt
            );
        }
        write_atomic(
            &work.join("ablation_runs.csv"),
            self.stamp_csv(&per_seed).as_bytes(),
        )
    }

    /// sha256 of every file under the promoted stage directories, by
    /// relative path.
    pub fn artifact_hashes(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let dir = self.stage_dir(stage);
            if dir.exists() {
                collect_hashes(&self.root, &dir, &mut out)?;
            }
        }
        out.sort();
        Ok(out)
    }
}

fn collect_hashes(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_hashes(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            out.push((rel, file_sha256(&path)?));
        }
    }
    Ok(())
}

fn eval_row(bench: &str, r: &EvalReport) -> String {
    let cell = |q: QType| {
        r.type_accuracy(q)
            .map_or(String::new(), |v| format!("{v:.6}"))
    };
    format!(
        "{bench},{},{},{:.6},{},{},{},{},{},{}\n",
        r.condition.name(),
        r.n,
        r.accuracy(),
        cell(QType::Anchor),
        cell(QType::Counting),
        cell(QType::RelDistance),
        cell(QType::RelDirection),
        r.malformed,
        r.vt_match_rate()
            .map_or(String::new(), |v| format!("{v:.6}"))
    )
}
