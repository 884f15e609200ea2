use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nbeats_star::cli::{self, RunConfig, SweepGrid};
use nbeats_star::synth::SynthSpec;
use nbeats_star::{DmLoss, Error, YearMonth};

#[derive(Parser)]
#[command(name = "nbeats-star", version, about = "Monthly demand forecasting with N-BEATS*")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Absolute,
    Squared,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model pool and write checkpoints plus a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Forecast selected series with a trained pool.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the pool inside the config's output directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated series ids; all series when omitted.
        #[arg(long, value_delimiter = ',')]
        series: Vec<String>,
        /// Last observed month, YYYY-MM.
        #[arg(long)]
        anchor: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a pool on the test block with repeated ensemble trials.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Full model against each single-component ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Diebold-Mariano test on two aligned errors files.
    DmTest {
        errors_a: PathBuf,
        errors_b: PathBuf,
        #[arg(long, value_enum, default_value = "absolute")]
        loss: LossArg,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Hyperparameter grid search on the validation block.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Write a synthetic seasonal dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        series: usize,
        #[arg(long, default_value_t = 60)]
        length: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn parse_month(s: &str) -> nbeats_star::Result<YearMonth> {
    let bad = || Error::config("anchor", format!("'{s}' is not YYYY-MM"));
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    YearMonth::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?).map_err(|_| bad())
}

fn run(args: Args) -> nbeats_star::Result<()> {
    match args.command {
        Command::Train { config, seed, pool_size, output_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.schedule.seed = s;
            }
            if let Some(n) = pool_size {
                cfg.schedule.pool_size = n;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let out = cli::cmd_train(&cfg)?;
            println!("{}", out.manifest.display());
        }
        Command::Forecast { config, manifest, series, anchor, out } => {
            let cfg = RunConfig::load(&config)?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path());
            let anchor = anchor.as_deref().map(parse_month).transpose()?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("forecast"));
            let res = cli::cmd_forecast(&cfg, &manifest, &series, anchor, &out)?;
            println!("{}", res.forecast_csv.display());
        }
        Command::Evaluate { config, manifest } => {
            let cfg = RunConfig::load(&config)?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path());
            let res = cli::cmd_evaluate(&cfg, &manifest)?;
            let m = res.payload.report.averaged.aggregate;
            println!("MedAPE {:.3}  MAPE {:.3}  IQR {:.3}  RMSE {:.3}  MPE {:.3}", m.medape, m.mape, m.iqr_ape, m.rmse, m.mpe);
            println!("{}", res.metrics_json.display());
        }
        Command::Ablate { config } => {
            let cfg = RunConfig::load(&config)?;
            for r in cli::cmd_ablate(&cfg)?.rows {
                println!("{:<8} MAPE {:.3}  RMSE {:.3}", r.variant, r.mape, r.rmse);
            }
        }
        Command::DmTest { errors_a, errors_b, loss, horizon, alpha } => {
            let loss = match loss {
                LossArg::Absolute => DmLoss::Absolute,
                LossArg::Squared => DmLoss::Squared,
            };
            let rep = cli::cmd_dm_test(&errors_a, &errors_b, loss, horizon, alpha)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Sweep { config, grid } => {
            let cfg = RunConfig::load(&config)?;
            let grid = SweepGrid::load(&grid)?;
            for r in cli::cmd_sweep(&cfg, &grid)? {
                let mark = if r.best { "*" } else { " " };
                println!("{mark} MAPE {:.3}  {}", r.metrics.mape, serde_json::to_string(&r.params)?);
            }
        }
        Command::Synth { out, series, length, seed } => {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::uniform(series, length)
            };
            cli::cmd_synth(&spec, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
