//! Seasonal-naive reference forecast.

use crate::error::{Error, Result};

pub const MONTHS_PER_YEAR: usize = 12;

/// Repeat the value observed one season earlier: the forecast for step `j`
/// is `history[n - period + (j mod period)]`.
pub fn seasonal_naive(history: &[f64], horizon: usize, period: usize) -> Result<Vec<f64>> {
    if period == 0 || history.len() < period {
        return Err(Error::config(
            "history",
            format!("seasonal naive needs {period} observations, got {}", history.len()),
        ));
    }
    let last_season = &history[history.len() - period..];
    Ok((0..horizon).map(|j| last_season[j % period]).collect())
}
