//! Grid search over the pinball quantile and the nMSE weight, scored on the
//! validation year.
//!
//! cargo run --release --example sweep

use nbeats_star::cli::{cmd_sweep, cmd_synth, RunConfig, SweepGrid};
use nbeats_star::synth::SynthSpec;
use nbeats_star::{EnsembleSpec, ModelConfig, TrainSchedule};

fn main() -> nbeats_star::Result<()> {
    let root = std::env::temp_dir().join("nbeats-star-sweep-example");
    let dataset = root.join("synth.csv");
    cmd_synth(&SynthSpec::uniform(6, 72), &dataset)?;
    let cfg = RunConfig {
        dataset,
        output_dir: root,
        model: ModelConfig { fc_width: 32, ..Default::default() },
        schedule: TrainSchedule { epochs: 4, batches_per_epoch: 40, batch_size: 128, pool_size: 2, seed: 5, ..Default::default() },
        ensemble: EnsembleSpec { ensemble_size: 2, trials: 4, ..Default::default() },
        ..Default::default()
    };
    let grid = SweepGrid { tau: Some(vec![0.3, 0.35, 0.45]), lambda: Some(vec![0.0, 0.35]), ..Default::default() };
    for row in cmd_sweep(&cfg, &grid)? {
        println!(
            "{} tau {:<5} lambda {:<5} validation MAPE {:.3}",
            if row.best { "*" } else { " " },
            row.params["tau"],
            row.params["lambda"],
            row.metrics.mape
        );
    }
    Ok(())
}
