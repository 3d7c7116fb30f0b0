use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use camul_cli::commands::{self, Overrides};
use camul_cli::config::ExperimentConfig;
use camul_cli::{exit_code, UserError};

#[derive(Parser)]
#[command(name = "camul", version, about = "Multi-view probabilistic time-series forecasting")]
struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, env = "CAMUL_NUM_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to a single forecast horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset described by the config.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        force: bool,
    },
    /// Train one model per horizon.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score held-out cells with trained checkpoints.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Forecast past the end of the data.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        /// Series to forecast (repeatable); defaults to all.
        #[arg(long)]
        series: Vec<String>,
    },
    /// Render evaluation and forecast files as SVG charts.
    Plot {
        /// Files to render; defaults to every output under `--out`.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Chart directory when `--input` is given, otherwise the run directory to scan.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common, extra: Overrides) -> Result<commands::Resolved> {
    let config = ExperimentConfig::load(&common.config)?;
    let overrides = Overrides { seed: common.seed, out: common.out.clone(), horizon: common.horizon, ..extra };
    commands::resolve(config, &overrides)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if !camul_core::exec::configure_workers(n) {
            log::warn!("worker cap {n} ignored");
        }
    }
    match cli.command {
        Command::Generate { common, force } => {
            let r = resolve(&common, Overrides { force, ..Default::default() })?;
            let g = commands::generate(&r)?;
            println!(
                "wrote {} files to {}: N={} T={} K={} reference sizes {:?}",
                g.files.len(),
                r.out.display(),
                g.n_series,
                g.length,
                g.views,
                g.reference_sizes
            );
        }
        Command::Train { common, force, epochs } => {
            let r = resolve(&common, Overrides { force, epochs, ..Default::default() })?;
            for t in commands::train_models(&r)? {
                println!(
                    "horizon {}: {} epochs, final loss {}, validation CRPS {} -> {}",
                    t.horizon,
                    t.epochs,
                    t.final_loss.map_or("-".into(), |v| format!("{v:.4}")),
                    t.final_val_crps.map_or("-".into(), |v| format!("{v:.4}")),
                    t.checkpoint.display()
                );
            }
        }
        Command::Evaluate { common, checkpoint, samples } => {
            let r = resolve(&common, Overrides { checkpoint, samples, ..Default::default() })?;
            for e in commands::evaluate(&r)? {
                let m = &e.metrics;
                println!(
                    "horizon {}: CRPS {:.4}  IS {:.4}  CS {:.4}  ({} cells, {} samples)",
                    e.horizon, m.crps, m.interval_score, m.calibration_score, m.cells, e.samples
                );
            }
        }
        Command::Forecast { common, checkpoint, samples, series } => {
            let r = resolve(&common, Overrides { checkpoint, samples, series, ..Default::default() })?;
            for f in commands::forecast(&r)? {
                for rec in &f.forecasts {
                    let s = &rec.summary;
                    println!(
                        "h{} {} t={}: median {:.4} mean {:.4} std {:.4}",
                        f.horizon, s.series_id, s.target_index, s.median, s.mean, s.std
                    );
                }
            }
        }
        Command::Plot { input, out } => {
            let written = if input.is_empty() {
                let Some(dir) = &out else {
                    bail!(UserError("plot needs --input files or an --out directory to scan".into()));
                };
                commands::plot_files(&commands::discover_outputs(dir)?, None)?
            } else {
                commands::plot_files(&input, out.as_deref())?
            };
            if written.is_empty() {
                log::warn!("no charts written");
            }
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
