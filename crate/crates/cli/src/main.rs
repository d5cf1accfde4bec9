//! `vtlab` command line: each subcommand runs one pipeline stage from a
//! flat key=value manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vtlab::harness::{run_selftest, Experiment, ExperimentManifest, Stage, StageOutcome};

#[derive(Parser)]
#[command(
    name = "vtlab",
    version,
    about = "Thinking-image and view-dropout experiments on grid-world scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train / test / OOD-analogue datasets and the vocabulary.
    Gen(StageArgs),
    /// Train a model on the generated training set.
    Train(StageArgs),
    /// Per-type accuracy under the standard and masked-input conditions.
    Eval(StageArgs),
    /// Generate-then-blind probe and answer-row attention shares.
    Probe(StageArgs),
    /// Informativeness and learnability tables.
    Li(StageArgs),
    /// VDrop ablation grid.
    Ablate(StageArgs),
    /// Run every stage in order.
    All(StageArgs),
    /// Fast in-process property checks.
    Selftest,
    /// Print the effective manifest.
    Manifest(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Manifest file (key = value lines); defaults apply to missing keys.
    #[arg(long, short)]
    manifest: Option<PathBuf>,
    /// Override a manifest key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root (overrides the manifest's `out` and $VTLAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-run even if the stage already completed for this manifest.
    #[arg(long)]
    force: bool,
}

impl StageArgs {
    fn experiment(&self) -> Result<Experiment> {
        let mut m = match &self.manifest {
            Some(p) => ExperimentManifest::load(p)?,
            None => ExperimentManifest::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            m.set(k.trim(), v.trim())?;
        }
        if let Some(out) = &self.out {
            m.set("out", &out.to_string_lossy())?;
        }
        Ok(Experiment::new(m))
    }
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<()> {
    let exp = args.experiment()?;
    for &stage in stages {
        let outcome = exp
            .run(stage, args.force)
            .with_context(|| format!("stage {}", stage.name()))?;
        let note = match outcome {
            StageOutcome::Ran => "done",
            StageOutcome::Skipped => "up to date",
        };
        println!(
            "{}: {note} ({})",
            stage.name(),
            exp.stage_dir(stage).display()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => run_stages(&a, &[Stage::Gen]),
        Command::Train(a) => run_stages(&a, &[Stage::Train]),
        Command::Eval(a) => run_stages(&a, &[Stage::Eval]),
        Command::Probe(a) => run_stages(&a, &[Stage::Probe]),
        Command::Li(a) => run_stages(&a, &[Stage::Li]),
        Command::Ablate(a) => run_stages(&a, &[Stage::Ablate]),
        Command::All(a) => run_stages(&a, &Stage::ALL),
        Command::Manifest(a) => {
            let exp = a.experiment()?;
            print!("{}", exp.manifest.render());
            println!("# hash {}", exp.manifest_hash());
            Ok(())
        }
        Command::Selftest => {
            let results = run_selftest();
            let mut failed = 0;
            for r in &results {
                match &r.outcome {
                    Ok(()) => println!("PASS {} ({:.2}s)", r.name, r.seconds),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL {} ({:.2}s): {e}", r.name, r.seconds);
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {} self-test checks failed", results.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("vtlab: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vtlab: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
