//! Forecast accuracy metrics and the Diebold-Mariano test.
//!
//! Percentage errors use `PE = 100 (y - y_hat) / y`, so a positive MPE means
//! the model under-predicts. Quartiles use linear interpolation between
//! order statistics. Aggregates are unweighted means of per-series values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointErrors {
    pub ape: Vec<f64>,
    pub pe: Vec<f64>,
    pub se: Vec<f64>,
}

impl PointErrors {
    pub fn len(&self) -> usize {
        self.ape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ape.is_empty()
    }

    pub fn extend(&mut self, other: &PointErrors) {
        self.ape.extend_from_slice(&other.ape);
        self.pe.extend_from_slice(&other.pe);
        self.se.extend_from_slice(&other.se);
    }
}

pub fn point_errors(y: &[f64], y_hat: &[f64]) -> Result<PointErrors> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("point_errors", y.len(), y_hat.len()));
    }
    let mut out = PointErrors::default();
    for (row, (&a, &f)) in y.iter().zip(y_hat).enumerate() {
        if !(a > 0.0) {
            return Err(Error::NonPositiveTarget { row, col: 0, value: a });
        }
        let pe = 100.0 * (a - f) / a;
        out.pe.push(pe);
        out.ape.push(pe.abs());
        out.se.push((a - f) * (a - f));
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    quantile_sorted(&sorted(v), 0.5)
}

pub fn iqr(v: &[f64]) -> f64 {
    let s = sorted(v);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

/// Moment skewness `m3 / m2^1.5`; `None` for fewer than two points or zero spread.
pub fn skewness(v: &[f64]) -> Option<f64> {
    let (m2, m3, _) = central_moments(v)?;
    Some(m3 / m2.powf(1.5))
}

/// Moment kurtosis `m4 / m2^2` (non-excess, 3 for a Gaussian).
pub fn kurtosis(v: &[f64]) -> Option<f64> {
    let (m2, _, m4) = central_moments(v)?;
    Some(m4 / (m2 * m2))
}

fn central_moments(v: &[f64]) -> Option<(f64, f64, f64)> {
    if v.len() < 2 {
        return None;
    }
    let mu = mean(v);
    let n = v.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in v {
        let d = x - mu;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    (m2 > 0.0).then_some((m2, m3, m4))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub medape: f64,
    pub mape: f64,
    pub iqr_ape: f64,
    pub rmse: f64,
    pub mpe: f64,
}

impl Metrics {
    pub fn from_errors(e: &PointErrors) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::Empty("error group".into()));
        }
        Ok(Self {
            medape: median(&e.ape),
            mape: mean(&e.ape),
            iqr_ape: iqr(&e.ape),
            rmse: mean(&e.se).sqrt(),
            mpe: mean(&e.pe),
        })
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.medape, self.mape, self.iqr_ape, self.rmse, self.mpe]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            medape: a[0],
            mape: a[1],
            iqr_ape: a[2],
            rmse: a[3],
            mpe: a[4],
        }
    }

    /// Field-wise mean.
    pub fn mean_of(items: &[Metrics]) -> Self {
        Self::fieldwise(items, mean)
    }

    pub fn fieldwise(items: &[Metrics], f: impl Fn(&[f64]) -> f64) -> Self {
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            let col: Vec<f64> = items.iter().map(|m| m.as_array()[k]).collect();
            *o = f(&col);
        }
        Self::from_array(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub series_id: String,
    pub points: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_series: Vec<SeriesMetrics>,
    pub aggregate: Metrics,
    /// Over the per-series MPE values.
    pub mpe_skewness: Option<f64>,
    pub mpe_kurtosis: Option<f64>,
    pub series_count: usize,
    pub point_count: usize,
}

/// Per-series metrics and their unweighted mean.
pub fn aggregate_metrics(groups: &[(String, PointErrors)]) -> Result<MetricsReport> {
    if groups.is_empty() {
        return Err(Error::Empty("no series to evaluate".into()));
    }
    let per_series = groups
        .iter()
        .map(|(id, e)| {
            Ok(SeriesMetrics {
                series_id: id.clone(),
                points: e.len(),
                metrics: Metrics::from_errors(e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metrics> = per_series.iter().map(|s| s.metrics).collect();
    let mpes: Vec<f64> = metrics.iter().map(|m| m.mpe).collect();
    Ok(MetricsReport {
        aggregate: Metrics::mean_of(&metrics),
        mpe_skewness: skewness(&mpes),
        mpe_kurtosis: kurtosis(&mpes),
        series_count: per_series.len(),
        point_count: groups.iter().map(|(_, e)| e.len()).sum(),
        per_series,
    })
}

/// Loss applied to each forecast error before differencing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmLoss {
    #[default]
    Absolute,
    Squared,
}

impl DmLoss {
    fn apply(self, e: f64) -> f64 {
        match self {
            DmLoss::Absolute => e.abs(),
            DmLoss::Squared => e * e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub n: usize,
    pub mean_differential: f64,
    pub long_run_variance: f64,
    /// `None` when the differential has zero long-run variance.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

pub const DM_MIN_LEN: usize = 8;

/// Diebold-Mariano statistic for `d_t = g(e1_t) - g(e2_t)`. The long-run
/// variance sums autocovariances up to lag `horizon - 1`. Positive values
/// mean model A has larger loss.
pub fn diebold_mariano(e1: &[f64], e2: &[f64], loss: DmLoss, horizon: usize) -> Result<DmResult> {
    if e1.len() != e2.len() {
        return Err(Error::Misaligned(format!("{} vs {} errors", e1.len(), e2.len())));
    }
    if e1.len() < DM_MIN_LEN {
        return Err(Error::config("errors", format!("need at least {DM_MIN_LEN} paired errors, got {}", e1.len())));
    }
    if horizon < 1 {
        return Err(Error::config("horizon", "must be >= 1"));
    }
    let d: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| loss.apply(*a) - loss.apply(*b)).collect();
    let n = d.len();
    let d_bar = mean(&d);
    let autocov = |k: usize| -> f64 {
        (k..n).map(|t| (d[t] - d_bar) * (d[t - k] - d_bar)).sum::<f64>() / n as f64
    };
    let mut lrv = autocov(0);
    for k in 1..horizon.min(n) {
        lrv += 2.0 * autocov(k);
    }
    let all_equal = d.iter().all(|&x| x == d[0]);
    if all_equal || !(lrv > 0.0) {
        return Ok(DmResult {
            n,
            mean_differential: d_bar,
            long_run_variance: lrv,
            statistic: None,
            p_value: None,
            degenerate: true,
        });
    }
    let stat = d_bar / (lrv / n as f64).sqrt();
    Ok(DmResult {
        n,
        mean_differential: d_bar,
        long_run_variance: lrv,
        statistic: Some(stat),
        p_value: Some(two_sided_p(stat)),
        degenerate: false,
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn two_sided_p(z: f64) -> f64 {
    2.0 * (1.0 - std_normal().cdf(z.abs()))
}

/// Two-sided critical value `z_{1 - alpha/2}`.
pub fn critical_value(alpha: f64) -> f64 {
    std_normal().inverse_cdf(1.0 - alpha / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmDecision {
    pub alpha: f64,
    pub critical_value: f64,
    pub reject_equal_accuracy: bool,
}

pub fn dm_decision(statistic: f64, alpha: f64) -> DmDecision {
    let critical = critical_value(alpha);
    DmDecision {
        alpha,
        critical_value: critical,
        reject_equal_accuracy: statistic.abs() > critical,
    }
}
