use std::path::PathBuf;
use std::process::ExitCode;

use balsurr_cli::config::ExperimentConfig;
use balsurr_cli::verify::{cmd_verify, Suite};
use balsurr_cli::{report, synth, train, CliError};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "balsurr",
    version,
    about = "Balanced-error surrogate losses: data, training, checks"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the dataset and training seeds of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Parallel training runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write train, validation and test splits.
    Synth,
    /// Train every grid point for every seed.
    Train,
    /// Run a verification suite.
    Verify {
        #[arg(long)]
        suite: Suite,
        /// Suite size; see the README for its meaning per suite.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Build comparison tables from run directories (default: OUT/runs).
    Report { dirs: Vec<PathBuf> },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth => {
            let cfg = load_config(cli)?;
            let meta = synth::cmd_synth(&cfg.dataset, &cli.out)?;
            println!(
                "wrote {} (train {:?}, val {:?}, test {:?})",
                synth::data_dir(&cli.out).display(),
                meta.train_counts,
                meta.val_counts,
                meta.test_counts
            );
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let s = train::cmd_train(&cfg, &cli.out, cli.jobs)?;
            let failed = s.runs.iter().filter(|r| !r.is_ok()).count();
            println!(
                "{} runs ({failed} failed), {} grid points",
                s.runs.len(),
                s.points.len()
            );
            for b in s.best.iter().flatten() {
                let p = &s.points[*b];
                println!(
                    "{} [{}]: test balanced error {:.4} ± {:.4}",
                    p.family,
                    p.params,
                    p.test_mean.unwrap_or(f64::NAN),
                    p.test_sd.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Verify { suite, budget } => {
            let o = cmd_verify(*suite, *budget, cli.seed.unwrap_or(0), &cli.out)?;
            println!("{suite}: {} checks passed", o.checks);
        }
        Command::Report { dirs } => {
            let dirs = if dirs.is_empty() {
                vec![train::runs_dir(&cli.out)]
            } else {
                dirs.clone()
            };
            let r = report::cmd_report(&dirs, &cli.out)?;
            println!(
                "{} runs, {} rows; wrote {}",
                r.runs.len(),
                r.table.rows.len(),
                report::report_dir(&cli.out).display()
            );
            for m in &r.missing {
                eprintln!("missing: {m}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("balsurr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
