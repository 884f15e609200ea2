//! Train a small pool with checkpoints on disk, then rerun to show that
//! finished members are picked up instead of retrained.
//!
//! cargo run --release --example train_pool

use std::time::Instant;

use nbeats_star::synth::{generate, SynthSpec};
use nbeats_star::{build_pool, ModelConfig, Pool, SplitSpec, TrainSchedule, TrainingData};

fn main() -> nbeats_star::Result<()> {
    let series = generate(&SynthSpec::uniform(6, 72))?;
    let config = ModelConfig { fc_width: 32, ..Default::default() };
    let schedule = TrainSchedule { epochs: 5, batches_per_epoch: 50, batch_size: 128, pool_size: 4, seed: 11, ..Default::default() };
    let data = TrainingData::from_series(&series, &SplitSpec::default().merged(), config.lookback, config.horizon)?;
    println!("{} series, {} training windows", data.groups.len(), data.num_windows());

    let dir = std::env::temp_dir().join("nbeats-star-pool-example");
    let t = Instant::now();
    let pool = build_pool(&data, &config, &schedule, Some(&dir))?;
    println!("trained in {:.1}s, config hash {}", t.elapsed().as_secs_f64(), pool.config_hash);
    for m in &pool.members {
        let first = m.trace.first_step.total;
        println!("member {} seed {:#018x}: loss {first:.4} -> {:.4}", m.index, m.seed, m.trace.final_loss());
    }

    let t = Instant::now();
    let again = build_pool(&data, &config, &schedule, Some(&dir))?;
    println!("resumed {} members in {:.2}s", again.len(), t.elapsed().as_secs_f64());

    let loaded = Pool::load(&dir.join(nbeats_star::train::MANIFEST_FILE))?;
    println!("manifest reloads with {} members", loaded.len());
    Ok(())
}
