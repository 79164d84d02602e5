use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use condgen_cli::{
    evaluate, generate, prepare, report, train, ConfigError, EvaluateArgs, ExperimentConfig,
    GenerateArgs, Run, TrainArgs,
};

/// Conditional event-log generation experiments.
///
/// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
#[derive(Parser)]
#[command(name = "condgen", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; other relative paths resolve against it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite the stage's existing outputs.
    #[arg(long)]
    force: bool,
    /// Accept artifacts produced under a different config hash.
    #[arg(long)]
    allow_mixed: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Filter, label and split the dataset; fit the encoding.
    Prepare(Common),
    /// Train the model on the prepared splits.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from this checkpoint (e.g. model/last.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate test-sized logs from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score generated logs against the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directories of logs from other generators, one model each.
        #[arg(long, num_args = 1..)]
        extra_logs: Vec<PathBuf>,
    },
    /// Render box plots and tables from the evaluation results.
    Report(Common),
}

fn load(common: &Common) -> Result<Run> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(Run::new(cfg, common.out.as_deref()))
}

fn under(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Prepare(c) => {
            let run = load(&c)?;
            let out = prepare(&run, c.force)?;
            let s = out.summary;
            println!(
                "{}: {} traces, {} variants, {} activities, avg length {:.1}, avg cycle {:.1}d, ratio {:.1}%",
                run.cfg.name,
                s.traces,
                s.variants,
                s.activities,
                s.avg_length,
                s.avg_cycle_time_days,
                100.0 * s.conditional_ratio.unwrap_or(0.0)
            );
            println!("split sizes {:?} -> {}", out.sizes, run.layout.prepared().display());
        }
        Cmd::Train { common, checkpoint } => {
            let run = load(&common)?;
            let args = TrainArgs {
                checkpoint: checkpoint.map(|p| under(&run.layout.root, &p)),
                force: common.force,
                allow_mixed: common.allow_mixed,
            };
            let ck = train(&run, &args)?;
            println!(
                "best epoch {} (val loss {:.4}) -> {}",
                ck.meta.epoch,
                ck.meta.best_val_loss.unwrap_or(f64::NAN),
                run.layout.checkpoint().display()
            );
        }
        Cmd::Generate { common, checkpoint } => {
            let run = load(&common)?;
            let args = GenerateArgs {
                checkpoint: checkpoint.map(|p| under(&run.layout.root, &p)),
                force: common.force,
                allow_mixed: common.allow_mixed,
            };
            let logs = generate(&run, &args)?;
            println!("{} logs -> {}", logs.len(), run.layout.generated().display());
        }
        Cmd::Evaluate { common, extra_logs } => {
            let run = load(&common)?;
            let args = EvaluateArgs {
                extra_logs: extra_logs.iter().map(|p| under(&run.layout.root, p)).collect(),
                force: common.force,
                allow_mixed: common.allow_mixed,
            };
            let r = evaluate(&run, &args)?;
            for m in &r.models {
                println!(
                    "{}: {} logs, a-posteriori ratio {}, CONF {}",
                    m.model,
                    m.reports.len(),
                    fmt_opt(m.mean_cond_ratio()),
                    fmt_opt(m.mean_conf())
                );
            }
            println!("-> {}", run.layout.results().display());
        }
        Cmd::Report(c) => {
            let run = load(&c)?;
            let files = report(&run.layout.results(), &run.layout.report(), c.force)?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
