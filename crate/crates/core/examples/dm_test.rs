//! Compare two pools trained with different loss settings using the
//! Diebold-Mariano test on their paired test errors.
//!
//! cargo run --release --example dm_test

use nbeats_star::cli::{cmd_dm_test, cmd_evaluate, cmd_synth, cmd_train, RunConfig};
use nbeats_star::synth::SynthSpec;
use nbeats_star::{Ablation, DmLoss, EnsembleSpec, ModelConfig, TrainSchedule};

fn main() -> nbeats_star::Result<()> {
    let root = std::env::temp_dir().join("nbeats-star-dm-example");
    let dataset = root.join("synth.csv");
    cmd_synth(&SynthSpec::uniform(8, 60), &dataset)?;
    let base = RunConfig {
        dataset,
        output_dir: root.join("full"),
        model: ModelConfig { fc_width: 32, ..Default::default() },
        schedule: TrainSchedule { epochs: 5, batches_per_epoch: 40, batch_size: 128, pool_size: 3, seed: 4, ..Default::default() },
        ensemble: EnsembleSpec { ensemble_size: 3, trials: 5, ..Default::default() },
        ..Default::default()
    };
    let reduced = RunConfig {
        output_dir: root.join("noDestd"),
        model: base.model.clone().with_ablation(Ablation::NoDestd),
        ..base.clone()
    };
    let mut files = Vec::new();
    for cfg in [&base, &reduced] {
        let trained = cmd_train(cfg)?;
        let eval = cmd_evaluate(cfg, &trained.manifest)?;
        files.push(eval.metrics_json.with_file_name("errors.csv"));
    }
    for loss in [DmLoss::Absolute, DmLoss::Squared] {
        let rep = cmd_dm_test(&files[0], &files[1], loss, 1, 0.01)?;
        match (rep.result.statistic, rep.decision) {
            (Some(s), Some(d)) => println!(
                "{loss:?}: DM {s:.3}, p {:.4}, critical {:.3}, reject equal accuracy: {}",
                rep.result.p_value.unwrap(),
                d.critical_value,
                d.reject_equal_accuracy
            ),
            _ => println!("{loss:?}: degenerate loss differential"),
        }
    }
    Ok(())
}
