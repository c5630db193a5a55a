//! Command-line front end: synthetic data, training, ablation and evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use adgkt::data::{load_csv, save_csv};
use adgkt::harness::{
    ablate, evaluate, load_checkpoint, prepare_data, render_ablation_table, save_checkpoint, train,
    write_metric_log, TrainConfig,
};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adgkt",
    version,
    about = "Agreement-disagreement guided knowledge transfer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic source/target pair and the few-shot split as CSV.
    GenData {
        /// JSON training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train once and write the per-step metric log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
        /// Also save the trained model checkpoint here.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the five-row component ladder.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
    },
    /// Score a checkpoint on a labelled target CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn print_scores(label: &str, scores: &adgkt::metrics::Scores) {
    let p = scores.as_percentages();
    println!(
        "{label}OA {:.2}  AA {:.2}  kappa {:.2}",
        p.oa, p.aa, p.kappa
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let (source, split) = prepare_data(&cfg)?;
            let (_, target) = adgkt::data::generate_pair(&cfg.synth)?;
            fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            for (name, ds) in [
                ("source.csv", &source),
                ("target.csv", &target),
                ("target_train.csv", &split.train),
                ("target_eval.csv", &split.eval),
            ] {
                save_csv(ds, out_dir.join(name)).with_context(|| format!("writing {name}"))?;
                println!(
                    "{name}: {} samples, {} bands, {} classes",
                    ds.len(),
                    ds.bands,
                    ds.classes
                );
            }
        }
        Command::Train { config, log, model } => {
            let cfg = load_config(config.as_deref())?;
            let report = train(&cfg)?;
            write_metric_log(&log, &report.records, &report.scores)
                .with_context(|| format!("writing log {}", log.display()))?;
            if let Some(path) = model {
                save_checkpoint(&report.model, &path)
                    .with_context(|| format!("writing model {}", path.display()))?;
            }
            print_scores("target eval: ", &report.scores);
        }
        Command::Ablate { config, log } => {
            let cfg = load_config(config.as_deref())?;
            let rows = ablate(&cfg)?;
            let mut out =
                fs::File::create(&log).with_context(|| format!("creating {}", log.display()))?;
            for r in &rows {
                let p = r.report.scores.as_percentages();
                let line = serde_json::json!({
                    "row": r.label,
                    "use_gradvac": r.use_gradvac,
                    "use_logitnorm": r.use_logitnorm,
                    "use_ensemble": r.use_ensemble,
                    "use_dir": r.use_dir,
                    "oa": p.oa,
                    "aa": p.aa,
                    "kappa": p.kappa,
                });
                writeln!(out, "{line}")?;
            }
            print!("{}", render_ablation_table(&rows));
        }
        Command::Eval { model, data } => {
            let m = load_checkpoint(&model)
                .with_context(|| format!("loading model {}", model.display()))?;
            let ds = load_csv(&data).with_context(|| format!("loading data {}", data.display()))?;
            print_scores("", &evaluate(&m, &ds)?);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
