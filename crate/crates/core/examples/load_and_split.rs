//! Write a synthetic dataset, load it back, split it and draw a stratified
//! batch.
//!
//! cargo run --example load_and_split

use nbeats_star::data::{make_windows, write_csv, StratifiedSampler};
use nbeats_star::synth::{generate, SynthSpec};
use nbeats_star::{load_dataset, split, DatasetFormat, LoadOptions, SplitSpec};

fn main() -> nbeats_star::Result<()> {
    let spec = SynthSpec { lengths: vec![288, 144, 60], ..Default::default() };
    let dir = std::env::temp_dir().join("nbeats-star-load-example");
    std::fs::create_dir_all(&dir).map_err(|e| nbeats_star::Error::Empty(e.to_string()))?;
    let path = dir.join("demand.csv");
    write_csv(&generate(&spec)?, &path)?;

    let series = load_dataset(&path, DatasetFormat::Csv, LoadOptions { min_length: Some(36), drop_short: false })?;
    let mut groups = Vec::new();
    for s in &series {
        let sp = split(s, &SplitSpec::default(), 12, 12)?;
        let windows = make_windows(s, sp.train, 12, 12);
        println!(
            "{}: {} months from {}, train {} / val {} / test {}, {} training windows",
            s.id,
            s.len(),
            s.start,
            sp.train.len(),
            sp.val.len(),
            sp.test.len(),
            windows.len()
        );
        groups.push(windows);
    }

    let mut sampler = StratifiedSampler::new(&groups, 1)?;
    let mut counts = vec![0; groups.len()];
    for _ in 0..3000 {
        counts[sampler.draw().0] += 1;
    }
    println!("draws per series out of 3000: {counts:?}");
    Ok(())
}
