use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pco_cli::config::{GtSource, RunConfig};
use pco_cli::pipeline::{self, RunReport};
use pco_core::metrics::fmt_metric;

/// PCO segmentation and treatment classification experiments.
#[derive(Parser)]
#[command(name = "pco", version)]
struct Cli {
    /// TOML run configuration. Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset.
    Synth,
    /// Compute GT2 masks (k-means, dilation, closing).
    Gt2,
    /// Train one fold on one ground truth.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        gt: u8,
        #[arg(long)]
        fold: usize,
    },
    /// Score test predictions and compute areas.
    Evaluate,
    /// Sweep area cutoffs and pick each model's operating point.
    SelectCutoff,
    /// Classify all cases at the selected cutoffs.
    Classify,
    /// Assemble tables, plots and report.json.
    Report,
    /// Every stage in order.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn print_report(r: &RunReport) {
    for s in &r.segmentation_summary {
        println!(
            "{}: {} folds, mean valid dice {:.4} iou {:.4} acc {:.4}; mean test dice {:.4}",
            s.gt,
            s.folds,
            s.mean_valid.dice,
            s.mean_valid.iou,
            s.mean_valid.accuracy,
            s.mean_test.dice
        );
    }
    for c in &r.classification {
        println!(
            "{}: cutoff {:.4}% tp {} fp {} fn {} tn {} recall {} precision {} fpr {} f1 {} f{} {}",
            c.model,
            c.cutoff,
            c.counts.tp,
            c.counts.fp,
            c.counts.fn_,
            c.counts.tn,
            fmt_metric(c.recall),
            fmt_metric(c.precision),
            fmt_metric(c.fpr),
            fmt_metric(c.f1),
            c.beta,
            fmt_metric(c.f_beta)
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
        Command::Synth => {
            let m = pipeline::synth(&cfg).context("stage synth")?;
            let c = m.label_counts();
            println!(
                "{} positive, {} negative eyes in {}",
                c.positive,
                c.negative,
                m.root().display()
            );
        }
        Command::Gt2 => {
            let prep = pipeline::prepare(&cfg).context("stage prepare")?;
            let dir = pipeline::write_gt2(&cfg, &prep).context("stage gt2")?;
            println!("{} GT2 masks in {}", prep.cases.len(), dir.display());
        }
        Command::Train { gt, fold } => {
            let gt = GtSource::from_number(gt)?;
            let prep = pipeline::prepare(&cfg).context("stage prepare")?;
            let s = pipeline::train_fold(&cfg, &prep, gt, fold)
                .with_context(|| format!("stage train ({gt}, fold {fold})"))?;
            println!(
                "{gt} fold {fold}: best epoch {} of {}, valid dice {:.4}",
                s.best_epoch, s.epochs_run, s.valid_scores.dice
            );
        }
        Command::Evaluate => {
            let prep = pipeline::prepare(&cfg).context("stage prepare")?;
            let e = pipeline::evaluate(&cfg, &prep).context("stage evaluate")?;
            for s in &e.summary {
                println!(
                    "{}: mean valid dice {:.4}, mean test dice {:.4}",
                    s.gt, s.mean_valid.dice, s.mean_test.dice
                );
            }
        }
        Command::SelectCutoff => {
            for r in pipeline::select_cutoffs(&cfg).context("stage select-cutoff")? {
                println!(
                    "{}: cutoff {:.4}% recall {} fpr {} precision {}",
                    r.model,
                    r.cutoff,
                    fmt_metric(r.recall),
                    fmt_metric(r.fpr),
                    fmt_metric(r.precision)
                );
            }
        }
        Command::Classify => {
            for r in pipeline::classify(&cfg).context("stage classify")? {
                println!("{}: f{} {}", r.model, r.beta, fmt_metric(r.f_beta));
            }
        }
        Command::Report => print_report(&pipeline::report(&cfg).context("stage report")?),
        Command::RunAll => print_report(&pipeline::run_pipeline(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
