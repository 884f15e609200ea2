//! Train the full model and each single-component ablation with shared seeds.
//!
//! cargo run --release --example ablation

use nbeats_star::cli::{cmd_ablate, cmd_synth, RunConfig};
use nbeats_star::synth::SynthSpec;
use nbeats_star::{EnsembleSpec, ModelConfig, TrainSchedule};

fn main() -> nbeats_star::Result<()> {
    let root = std::env::temp_dir().join("nbeats-star-ablation-example");
    let dataset = root.join("synth.csv");
    cmd_synth(&SynthSpec::uniform(6, 60), &dataset)?;
    let cfg = RunConfig {
        dataset,
        output_dir: root,
        model: ModelConfig { fc_width: 32, ..Default::default() },
        schedule: TrainSchedule { epochs: 5, batches_per_epoch: 40, batch_size: 128, pool_size: 3, seed: 2, ..Default::default() },
        ensemble: EnsembleSpec { ensemble_size: 3, trials: 10, ..Default::default() },
        ..Default::default()
    };
    let table = cmd_ablate(&cfg)?;
    println!("{:<9}{:>8}{:>9}{:>13}", "variant", "MAPE", "RMSE", "final nMSE");
    for r in &table.rows {
        println!("{:<9}{:>8.2}{:>9.1}{:>13.5}", r.variant, r.mape, r.rmse, r.final_nmse_term);
    }
    Ok(())
}
