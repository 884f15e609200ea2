//! Train a small pool on synthetic seasonal series and compare the bootstrap
//! ensemble against the seasonal naive forecast on the test year.
//!
//! cargo run --release --example synthetic_benchmark -- [pool_size] [fc_width]

use std::time::Instant;

use nbeats_star::cli::{holdout_windows, seasonal_naive_report, Holdout};
use nbeats_star::ensemble::run_trials;
use nbeats_star::synth::{generate, SynthSpec};
use nbeats_star::{build_pool, EnsembleSpec, MemberForecasts, ModelConfig, SplitSpec, TrainSchedule, TrainingData};

fn main() -> nbeats_star::Result<()> {
    let mut args = std::env::args().skip(1);
    let pool_size = args.next().and_then(|a| a.parse().ok()).unwrap_or(16);
    let fc_width = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);

    let series = generate(&SynthSpec::uniform(8, 60))?;
    let config = ModelConfig { fc_width, ..Default::default() };
    let schedule = TrainSchedule { pool_size, seed: 7, ..Default::default() };
    let split = SplitSpec::default();

    let t = Instant::now();
    let data = TrainingData::from_series(&series, &split.merged(), config.lookback, config.horizon)?;
    let pool = build_pool(&data, &config, &schedule, None)?;
    println!("trained {} members in {:.1}s", pool.len(), t.elapsed().as_secs_f64());

    let windows = holdout_windows(&series, &split, &config, Holdout::Test)?;
    let forecasts = MemberForecasts::compute(&pool, &windows)?;
    let spec = EnsembleSpec { ensemble_size: 8, trials: 10, ..Default::default() };
    let report = run_trials(&forecasts, &spec)?;
    let naive = seasonal_naive_report(&series, &windows)?;
    println!(
        "ensemble MAPE {:.3}% (trial std {:.3})  seasonal naive MAPE {:.3}%",
        report.averaged.aggregate.mape, report.spread_std.mape, naive.aggregate.mape
    );
    Ok(())
}
