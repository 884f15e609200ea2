//! Pinball-MAPE, variance-normalised MSE and their weighted sum.
//!
//! All functions take `N x H` batches of targets and forecasts in the
//! original data scale.

use ndarray::{Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    /// Drop the nMSE term entirely.
    pub no_l2: bool,
    /// Do not divide the squared error by the target variance.
    pub no_var: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.35,
            lambda: 0.35,
            no_l2: false,
            no_var: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("tau", format!("{} is not in (0, 1)", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("{} must be >= 0", self.lambda)));
        }
        Ok(())
    }

    /// Whether the nMSE term takes part in the loss at all.
    pub fn uses_nmse(&self) -> bool {
        !self.no_l2 && self.lambda != 0.0
    }

    /// Whether targets must have nonzero variance.
    pub fn needs_variance(&self) -> bool {
        self.uses_nmse() && !self.no_var
    }
}

/// Loss value split into its logged components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pmape: f64,
    /// `lambda * nMSE`; exactly zero when the term is disabled.
    pub nmse_term: f64,
    pub total: f64,
}

fn check_inputs(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<()> {
    if y.dim() != y_hat.dim() {
        return Err(Error::shape("loss", format!("{:?}", y.dim()), format!("{:?}", y_hat.dim())));
    }
    if y.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    for ((row, col), &v) in y.indexed_iter() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveTarget { row, col, value: v });
        }
    }
    Ok(())
}

/// Population variance of one target row.
pub fn row_variance(row: ArrayView1<f64>) -> f64 {
    let n = row.len() as f64;
    let mean = row.sum() / n;
    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn row_divisors(y: &Array2<f64>, no_var: bool) -> Result<Vec<f64>> {
    y.outer_iter()
        .enumerate()
        .map(|(i, row)| {
            if no_var {
                return Ok(1.0);
            }
            let var = row_variance(row);
            if var > 0.0 {
                Ok(var)
            } else {
                Err(Error::ZeroVariance { row: i })
            }
        })
        .collect()
}

pub fn pmape(y: &Array2<f64>, y_hat: &Array2<f64>, tau: f64) -> Result<f64> {
    check_inputs(y, y_hat)?;
    let n = y.len() as f64;
    let mut sum = 0.0;
    Zip::from(y).and(y_hat).for_each(|&a, &f| {
        sum += if a >= f {
            tau * (a - f) / a
        } else {
            (1.0 - tau) * (f - a) / a
        };
    });
    Ok(sum / n)
}

/// Squared error normalised by each target row's population variance
/// (or by 1 when `no_var` is set).
pub fn nmse(y: &Array2<f64>, y_hat: &Array2<f64>, no_var: bool) -> Result<f64> {
    if y.dim() != y_hat.dim() {
        return Err(Error::shape("nmse", format!("{:?}", y.dim()), format!("{:?}", y_hat.dim())));
    }
    if y.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let div = row_divisors(y, no_var)?;
    let n = y.len() as f64;
    let mut sum = 0.0;
    for ((ya, yf), d) in y.outer_iter().zip(y_hat.outer_iter()).zip(&div) {
        sum += ya.iter().zip(yf.iter()).map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / d;
    }
    Ok(sum / n)
}

pub fn combined_loss(y: &Array2<f64>, y_hat: &Array2<f64>, config: &LossConfig) -> Result<LossBreakdown> {
    let p = pmape(y, y_hat, config.tau)?;
    if !config.uses_nmse() {
        return Ok(LossBreakdown {
            pmape: p,
            nmse_term: 0.0,
            total: p,
        });
    }
    let term = config.lambda * nmse(y, y_hat, config.no_var)?;
    Ok(LossBreakdown {
        pmape: p,
        nmse_term: term,
        total: p + term,
    })
}

/// d(combined_loss)/d(y_hat). At `y == y_hat` the pinball term takes the
/// `y >= y_hat` branch.
pub fn loss_gradients(y: &Array2<f64>, y_hat: &Array2<f64>, config: &LossConfig) -> Result<Array2<f64>> {
    check_inputs(y, y_hat)?;
    let n = y.len() as f64;
    let tau = config.tau;
    let mut grad = Array2::zeros(y.raw_dim());
    Zip::from(&mut grad).and(y).and(y_hat).for_each(|g, &a, &f| {
        *g = if a >= f { -tau / (n * a) } else { (1.0 - tau) / (n * a) };
    });
    if config.uses_nmse() {
        let div = row_divisors(y, config.no_var)?;
        let lambda = config.lambda;
        for (((mut g, ya), yf), d) in grad.outer_iter_mut().zip(y.outer_iter()).zip(y_hat.outer_iter()).zip(&div) {
            for ((gi, a), f) in g.iter_mut().zip(ya.iter()).zip(yf.iter()) {
                *gi += lambda * -2.0 * (a - f) / (n * d);
            }
        }
    }
    Ok(grad)
}

/// Which pinball branch each element takes (`true` for `y >= y_hat`).
pub fn pinball_branches(y: &Array2<f64>, y_hat: &Array2<f64>) -> Vec<bool> {
    y.iter().zip(y_hat.iter()).map(|(a, f)| a >= f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pmape_fixtures() {
        let y = array![[100.0, 120.0], [80.0, 95.0]];
        assert_eq!(pmape(&y, &y, 0.35).unwrap(), 0.0);
        assert!((pmape(&array![[100.0]], &array![[90.0]], 0.5).unwrap() - 0.05).abs() < 1e-15);
        assert!((pmape(&array![[100.0]], &array![[110.0]], 0.35).unwrap() - 0.065).abs() < 1e-15);
    }

    #[test]
    fn pmape_rejects_nonpositive_target() {
        let err = pmape(&array![[1.0, 0.0]], &array![[1.0, 1.0]], 0.5).unwrap_err();
        assert!(matches!(err, Error::NonPositiveTarget { row: 0, col: 1, .. }));
    }

    #[test]
    fn nmse_fixtures() {
        let y = array![[1.0, 3.0]];
        assert_eq!(nmse(&y, &array![[2.0, 2.0]], false).unwrap(), 1.0);
        assert_eq!(nmse(&y, &y, false).unwrap(), 0.0);
        let err = nmse(&array![[1.0, 2.0], [5.0, 5.0]], &array![[1.0, 2.0], [5.0, 5.0]], false).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance { row: 1 }));
        assert_eq!(nmse(&array![[5.0, 5.0]], &array![[4.0, 7.0]], true).unwrap(), 2.5);
    }

    #[test]
    fn combined_fixtures() {
        let cfg = LossConfig::default();
        let y = array![[100.0, 100.0]];
        let f = array![[90.0, 110.0]];
        assert!((pmape(&y, &f, 0.35).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(combined_loss(&y, &f, &cfg), Err(Error::ZeroVariance { row: 0 })));

        // y = (100, 200): var = 2500, nMSE = (100 + 100) / 2 / 2500 = 0.04
        // pMAPE = (0.35 * 10/100 + 0.65 * 10/200) / 2 = 0.03375
        let y = array![[100.0, 200.0]];
        let f = array![[90.0, 210.0]];
        let out = combined_loss(&y, &f, &cfg).unwrap();
        assert!((out.pmape - 0.03375).abs() < 1e-15);
        assert!((out.nmse_term - 0.35 * 0.04).abs() < 1e-15);
        assert!((out.total - (0.03375 + 0.014)).abs() < 1e-15);

        let no_l2 = LossConfig { no_l2: true, ..cfg };
        let out = combined_loss(&y, &f, &no_l2).unwrap();
        assert_eq!(out.total, pmape(&y, &f, 0.35).unwrap());
        assert_eq!(out.nmse_term, 0.0);
    }

    #[test]
    fn gradient_at_kink_and_dominance() {
        let y = array![[100.0, 50.0], [20.0, 10.0]];
        let cfg = LossConfig {
            tau: 0.5,
            lambda: 0.0,
            ..Default::default()
        };
        let g = loss_gradients(&y, &y, &cfg).unwrap();
        for (gi, yi) in g.iter().zip(y.iter()) {
            assert!((gi + 0.5 / (4.0 * yi)).abs() < 1e-18);
        }

        let f = array![[110.0, 40.0], [25.0, 12.0]];
        let big = LossConfig {
            tau: 0.35,
            lambda: 1e6,
            ..Default::default()
        };
        let l2_only = LossConfig {
            tau: 0.35,
            lambda: 1.0,
            ..Default::default()
        };
        let pm_only = LossConfig { no_l2: true, ..big };
        let gb = loss_gradients(&y, &f, &big).unwrap();
        let gp = loss_gradients(&y, &f, &pm_only).unwrap();
        let gn = loss_gradients(&y, &f, &l2_only).unwrap() - &gp;
        for ((b, p), n) in gb.iter().zip(gp.iter()).zip(gn.iter()) {
            assert!(((b - p) / (1e6 * n) - 1.0).abs() < 1e-9);
            assert!(b.abs() > 1e3 * p.abs());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = array![[100.0, 130.0, 90.0], [40.0, 55.0, 35.0]];
        let f = array![[97.0, 137.0, 91.5], [44.0, 51.0, 35.5]];
        for cfg in [
            LossConfig::default(),
            LossConfig { no_var: true, ..Default::default() },
            LossConfig { no_l2: true, ..Default::default() },
        ] {
            let g = loss_gradients(&y, &f, &cfg).unwrap();
            for idx in 0..f.len() {
                let h = 1e-5 * f.as_slice().unwrap()[idx].abs().max(1.0);
                let mut fp = f.clone();
                fp.as_slice_mut().unwrap()[idx] += h;
                let mut fm = f.clone();
                fm.as_slice_mut().unwrap()[idx] -= h;
                let numeric =
                    (combined_loss(&y, &fp, &cfg).unwrap().total - combined_loss(&y, &fm, &cfg).unwrap().total) / (2.0 * h);
                let a = g.as_slice().unwrap()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                assert!(rel < 1e-6, "{cfg:?} idx {idx}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig { tau: 1.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { lambda: -0.1, ..Default::default() }.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
