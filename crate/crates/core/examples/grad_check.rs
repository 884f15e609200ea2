//! Finite-difference check of the full model gradient for every ablation,
//! with and without weight sharing.
//!
//! cargo run --example grad_check

use ndarray::Array2;
use nbeats_star::nn::grad_check;
use nbeats_star::{Ablation, ModelConfig, NBeats};

fn main() -> nbeats_star::Result<()> {
    let x = Array2::from_shape_fn((2, 6), |(i, j)| 80.0 + 10.0 * ((i * 6 + j) as f64).sin());
    let y = Array2::from_shape_fn((2, 3), |(i, j)| 90.0 + 7.0 * ((i * 3 + j) as f64).cos());
    let mut flags = vec![None];
    flags.extend(Ablation::ALL.map(Some));
    for sharing in [true, false] {
        for flag in &flags {
            let mut config = ModelConfig { lookback: 6, horizon: 3, blocks: 2, fc_width: 8, sharing, ..Default::default() };
            config.ablation.extend(*flag);
            let model = NBeats::new(config, 3)?;
            let report = grad_check(&model.params, |p| model.record_loss(p, &x, &y).map(|(t, l, _)| (t, l)), 1e-4)?;
            let skipped: usize = report.blocks.iter().map(|b| b.skipped_near_kink).sum();
            println!(
                "sharing={sharing:<5} {:<8} max rel error {:.2e}  skipped {skipped}  {}",
                flag.map_or("full", |a| a.label()),
                report.max_rel_error(),
                if report.passed() { "ok" } else { "FAILED" }
            );
        }
    }
    Ok(())
}
