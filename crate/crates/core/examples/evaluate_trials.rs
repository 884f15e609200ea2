//! Full command flow on disk: synth, train, evaluate with repeated bootstrap
//! trials, then forecast from the same pool.
//!
//! cargo run --release --example evaluate_trials

use nbeats_star::cli::{cmd_evaluate, cmd_forecast, cmd_synth, cmd_train, RunConfig};
use nbeats_star::synth::SynthSpec;
use nbeats_star::{EnsembleSpec, ModelConfig, TrainSchedule};

fn main() -> nbeats_star::Result<()> {
    let root = std::env::temp_dir().join("nbeats-star-evaluate-example");
    let dataset = root.join("synth.csv");
    cmd_synth(&SynthSpec::uniform(5, 60), &dataset)?;
    let cfg = RunConfig {
        dataset,
        output_dir: root.join("run"),
        model: ModelConfig { fc_width: 32, ..Default::default() },
        schedule: TrainSchedule { epochs: 6, batches_per_epoch: 50, batch_size: 128, pool_size: 6, seed: 1, ..Default::default() },
        ensemble: EnsembleSpec { ensemble_size: 4, trials: 20, ..Default::default() },
        ..Default::default()
    };
    let trained = cmd_train(&cfg)?;
    let eval = cmd_evaluate(&cfg, &trained.manifest)?;
    let r = &eval.payload.report;
    println!("{:<8}{:>8}{:>8}{:>8}{:>10}{:>8}", "series", "MedAPE", "MAPE", "IQR", "RMSE", "MPE");
    for s in &r.averaged.per_series {
        let m = s.metrics;
        println!("{:<8}{:>8.2}{:>8.2}{:>8.2}{:>10.1}{:>8.2}", s.series_id, m.medape, m.mape, m.iqr_ape, m.rmse, m.mpe);
    }
    let m = r.averaged.aggregate;
    println!("{:<8}{:>8.2}{:>8.2}{:>8.2}{:>10.1}{:>8.2}", "mean", m.medape, m.mape, m.iqr_ape, m.rmse, m.mpe);
    println!("trial spread of MAPE: std {:.3}, IQR {:.3}", r.spread_std.mape, r.spread_iqr.mape);
    println!("seasonal naive MAPE {:.2}", eval.payload.seasonal_naive.aggregate.mape);
    println!("reports in {}", eval.metrics_json.parent().unwrap().display());

    let fc = cmd_forecast(&cfg, &trained.manifest, &["S00".into()], None, &root.join("forecast"))?;
    println!("next-year forecast written to {}", fc.forecast_csv.display());
    Ok(())
}
