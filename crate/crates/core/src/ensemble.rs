//! Bootstrap ensembles drawn from a trained pool, forecast aggregation and
//! multi-trial evaluation.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::eval::{aggregate_metrics, iqr, mean, point_errors, Metrics, MetricsReport, SeriesMetrics};
use crate::model::stack_rows;
use crate::seed::{derive_seed, rng_from, stream};
use crate::train::Pool;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub ensemble_size: usize,
    pub trials: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            ensemble_size: 64,
            trials: 100,
            aggregation: Aggregation::Median,
            seed: 0,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 1 {
            return Err(Error::config("ensemble_size", "must be >= 1"));
        }
        if self.trials < 1 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        Ok(())
    }
}

/// Member indices drawn with replacement, reproducible from
/// `(spec.seed, trial_index)`.
pub fn draw_ensemble(pool_size: usize, spec: &EnsembleSpec, trial_index: usize) -> Result<Vec<usize>> {
    if pool_size == 0 {
        return Err(Error::Empty("pool".into()));
    }
    let mut rng = rng_from(derive_seed(spec.seed, stream::TRIAL, trial_index as u64));
    Ok((0..spec.ensemble_size).map(|_| rng.random_range(0..pool_size)).collect())
}

/// Elementwise median or mean of equally long forecasts.
pub fn aggregate_forecasts<F: AsRef<[f64]>>(forecasts: &[F], aggregation: Aggregation) -> Result<Vec<f64>> {
    let first = forecasts.first().ok_or_else(|| Error::Empty("no forecasts to aggregate".into()))?;
    let h = first.as_ref().len();
    if let Some(bad) = forecasts.iter().find(|f| f.as_ref().len() != h) {
        return Err(Error::shape("aggregate_forecasts", h, bad.as_ref().len()));
    }
    let mut column = vec![0.0; forecasts.len()];
    Ok((0..h)
        .map(|j| {
            for (c, f) in column.iter_mut().zip(forecasts) {
                *c = f.as_ref()[j];
            }
            match aggregation {
                Aggregation::Mean => mean(&column),
                Aggregation::Median => crate::eval::median(&column),
            }
        })
        .collect())
}

/// Every pool member's forecasts on a fixed set of evaluation windows.
#[derive(Clone, Debug)]
pub struct MemberForecasts {
    pub windows: Vec<Window>,
    /// One `windows x horizon` matrix per member.
    pub forecasts: Vec<Array2<f64>>,
}

impl MemberForecasts {
    pub fn compute(pool: &Pool, windows: &[Window]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Empty("evaluation windows".into()));
        }
        let x = stack_rows(windows.iter().map(|w| w.x.as_slice()), pool.config.lookback)?;
        let forecasts = pool
            .members
            .par_iter()
            .map(|m| m.model(&pool.config)?.forecast_batch(&x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            windows: windows.to_vec(),
            forecasts,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.forecasts.len()
    }

    /// Aggregated forecast of the given members for window `w`.
    pub fn ensemble_forecast(&self, members: &[usize], w: usize, aggregation: Aggregation) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = members.iter().map(|&m| self.forecasts[m].row(w).to_vec()).collect();
        aggregate_forecasts(&rows, aggregation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub members: Vec<usize>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub spec: EnsembleSpec,
    pub trials: Vec<TrialResult>,
    /// Per-series and aggregate metrics averaged over trials.
    pub averaged: MetricsReport,
    pub spread_std: Metrics,
    pub spread_iqr: Metrics,
}

fn population_std(v: &[f64]) -> f64 {
    let mu = mean(v);
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Evaluate one ensemble (given member indices) on every window.
pub fn evaluate_members(forecasts: &MemberForecasts, members: &[usize], aggregation: Aggregation) -> Result<MetricsReport> {
    // windows of the same series are pooled into one group, in first-seen order
    let mut groups: Vec<(String, crate::eval::PointErrors)> = Vec::new();
    for (w, window) in forecasts.windows.iter().enumerate() {
        let f = forecasts.ensemble_forecast(members, w, aggregation)?;
        let e = point_errors(&window.y, &f)?;
        match groups.iter_mut().find(|(id, _)| *id == window.series_id) {
            Some((_, acc)) => acc.extend(&e),
            None => groups.push((window.series_id.clone(), e)),
        }
    }
    aggregate_metrics(&groups)
}

/// Draw `spec.trials` bootstrap ensembles, evaluate each and average.
pub fn run_trials(forecasts: &MemberForecasts, spec: &EnsembleSpec) -> Result<TrialReport> {
    spec.validate()?;
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let members = draw_ensemble(forecasts.pool_size(), spec, t)?;
            let report = evaluate_members(forecasts, &members, spec.aggregation)?;
            Ok(TrialResult { trial: t, members, report })
        })
        .collect::<Result<Vec<_>>>()?;

    let aggregates: Vec<Metrics> = trials.iter().map(|t| t.report.aggregate).collect();
    let first = &trials[0].report;
    let per_series = first
        .per_series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ms: Vec<Metrics> = trials.iter().map(|t| t.report.per_series[i].metrics).collect();
            SeriesMetrics {
                series_id: s.series_id.clone(),
                points: s.points,
                metrics: Metrics::mean_of(&ms),
            }
        })
        .collect();
    let mean_opt = |f: fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = trials.iter().map(|t| f(&t.report)).collect();
        vals.map(|v| mean(&v))
    };
    let averaged = MetricsReport {
        per_series,
        aggregate: Metrics::mean_of(&aggregates),
        mpe_skewness: mean_opt(|r| r.mpe_skewness),
        mpe_kurtosis: mean_opt(|r| r.mpe_kurtosis),
        series_count: first.series_count,
        point_count: first.point_count,
    };
    Ok(TrialReport {
        spec: spec.clone(),
        spread_std: Metrics::fieldwise(&aggregates, population_std),
        spread_iqr: Metrics::fieldwise(&aggregates, iqr),
        averaged,
        trials,
    })
}
