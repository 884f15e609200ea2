//! Forecast one series and print how much each block contributes.
//!
//! cargo run --release --example forecast_decomposition

use nbeats_star::data::Window;
use nbeats_star::model::decompose;
use nbeats_star::synth::{generate, SynthSpec};
use nbeats_star::{train_one, ModelConfig, SplitSpec, TrainSchedule, TrainingData};

fn main() -> nbeats_star::Result<()> {
    let series = generate(&SynthSpec::uniform(4, 84))?;
    let config = ModelConfig { fc_width: 32, blocks: 4, ..Default::default() };
    let schedule = TrainSchedule { epochs: 8, batches_per_epoch: 50, batch_size: 128, ..Default::default() };
    let data = TrainingData::from_series(&series, &SplitSpec::default().merged(), 12, 12)?;
    let member = train_one(&data, &config, &schedule, schedule.member_seed(0))?;
    let model = member.model(&config)?;

    let s = &series[0];
    let anchor = s.len() - 13;
    let window = Window::at(s, anchor, 12, 12)?;
    let (forecast, diag) = model.forward(&window.x)?;
    let parts = decompose(&diag);

    println!("series {} forecast after {}", s.id, s.month_at(anchor));
    print!("{:>8}", "month");
    for b in 0..parts.len() {
        print!("{:>10}", format!("block{}", b + 1));
    }
    println!("{:>11}{:>11}", "forecast", "actual");
    for j in 0..12 {
        print!("{:>8}", s.month_at(anchor + 1 + j).to_string());
        for p in &parts {
            print!("{:>10.1}", p[j]);
        }
        println!("{:>11.1}{:>11.1}", forecast[j], window.y[j]);
    }
    Ok(())
}
