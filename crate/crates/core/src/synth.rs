//! Seeded synthetic monthly demand: level x linear trend x sinusoidal
//! seasonality x multiplicative Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeries, YearMonth};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// One entry per series. All series end in the same month.
    pub lengths: Vec<usize>,
    /// Seasonal amplitude as a fraction of the level.
    pub amplitude: f64,
    /// Linear trend as a fraction of the initial level per year.
    pub trend_per_year: f64,
    /// Standard deviation of the multiplicative noise.
    pub noise: f64,
    pub seed: u64,
    pub end: YearMonth,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            lengths: vec![60; 8],
            amplitude: 0.2,
            trend_per_year: 0.02,
            noise: 0.01,
            seed: 2024,
            end: YearMonth { year: 2014, month: 12 },
        }
    }
}

impl SynthSpec {
    pub fn uniform(count: usize, length: usize) -> Self {
        Self {
            lengths: vec![length; count],
            ..Default::default()
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<TimeSeries>> {
    if spec.lengths.is_empty() {
        return Err(Error::config("lengths", "at least one series"));
    }
    if !(spec.amplitude >= 0.0 && spec.amplitude < 0.9) {
        return Err(Error::config("amplitude", "must be in [0, 0.9)"));
    }
    let width = spec.lengths.len().to_string().len().max(2);
    spec.lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            if len == 0 {
                return Err(Error::config("lengths", "series length must be >= 1"));
            }
            let mut rng = rng_from(derive_seed(spec.seed, stream::SYNTH, i as u64));
            let level: f64 = rng.random_range(1_000.0..30_000.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let start = spec.end.plus(1 - len as i64);
            let values = (0..len)
                .map(|t| {
                    let years = t as f64 / 12.0;
                    let month = start.plus(t as i64).month as f64 - 1.0;
                    let season = 1.0 + spec.amplitude * (std::f64::consts::TAU * month / 12.0 + phase).sin();
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let noise = 1.0 + spec.noise * eps.clamp(-4.0, 4.0);
                    level * (1.0 + spec.trend_per_year * years) * season * noise
                })
                .collect();
            TimeSeries::new(format!("S{i:0width$}"), start, values)
        })
        .collect()
}
