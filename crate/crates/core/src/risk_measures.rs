//! Student-t VaR/ES from a variance forecast, and the historical-simulation
//! benchmark. VaR and ES are negative return thresholds in percent.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, gamma::gamma_ur, gamma::ln_gamma};

use crate::error::{Error, Result};
use crate::hybrid_vcv::PortfolioWeights;

/// Standard Student-t density.
pub fn student_t_pdf(t: f64, nu: f64) -> f64 {
    let ln_norm =
        ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_norm - (nu + 1.0) / 2.0 * (1.0 + t * t / nu).ln()).exp()
}

/// Standard Student-t distribution function.
pub fn student_t_cdf(t: f64, nu: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + t * t));
    if t < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Inverse of [`student_t_cdf`] by safeguarded Newton iteration on a bracket.
pub fn student_t_quantile(p: f64, nu: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {nu}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return student_t_quantile(1.0 - p, nu).map(|q| -q);
    }
    // Lower tail: bracket [lo, hi] with cdf(lo) <= p < cdf(hi).
    let mut hi = 0.0;
    let mut lo = -1.0;
    while student_t_cdf(lo, nu) > p {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Numerical(format!(
                "t quantile bracket overflow at p={p}"
            )));
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = student_t_cdf(t, nu) - p;
        if f == 0.0 {
            return Ok(t);
        }
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - f / student_t_pdf(t, nu);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-15 * t.abs().max(1.0) {
            return Ok(next);
        }
        t = next;
    }
    Ok(t)
}

/// Survival function of the χ² distribution.
pub fn chi2_sf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    match df {
        2 => (-x / 2.0).exp(),
        _ => gamma_ur(f64::from(df) / 2.0, x / 2.0),
    }
}

/// How forecast quantiles relate to the model's σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TScaling {
    /// Rescale by `√((ν−2)/ν)` so the forecast distribution has variance σ².
    #[default]
    Variance,
    /// Use the standard t directly as a location-scale family with scale σ.
    Raw,
}

impl TScaling {
    pub fn factor(self, nu: f64) -> f64 {
        match self {
            TScaling::Variance => ((nu - 2.0) / nu).sqrt(),
            TScaling::Raw => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskForecast {
    pub date: NaiveDate,
    /// Confidence level, e.g. 0.99.
    pub var_level: f64,
    pub var_t: f64,
    pub es_t: f64,
}

/// `(VaR, ES)` for a one-day return with stdev `sigma_p`, tail probability
/// `alpha` and `nu` degrees of freedom.
pub fn t_var_es(sigma_p: f64, alpha: f64, nu: f64, scaling: TScaling) -> Result<(f64, f64)> {
    if !(nu > 2.0) {
        return Err(Error::Domain(format!("t engine needs nu > 2, got {nu}")));
    }
    if !(sigma_p > 0.0 && sigma_p.is_finite()) {
        return Err(Error::Domain(format!(
            "portfolio stdev must be positive, got {sigma_p}"
        )));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Domain(format!(
            "tail probability must lie in (0, 0.5), got {alpha}"
        )));
    }
    let q = student_t_quantile(alpha, nu)?;
    let scale = sigma_p * scaling.factor(nu);
    let es_std = student_t_pdf(q.abs(), nu) / alpha * (nu + q * q) / (nu - 1.0);
    Ok((scale * q, -scale * es_std))
}

/// Empirical quantile rule for the historical benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// Linear interpolation between order statistics (`h = (n−1)p`).
    #[default]
    Linear,
    /// The order statistic at `floor((n−1)p)`.
    Lower,
}

pub fn empirical_quantile(sorted: &[f64], p: f64, rule: QuantileRule) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    match rule {
        QuantileRule::Lower => sorted[lo],
        QuantileRule::Linear => {
            let hi = (lo + 1).min(sorted.len() - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRisk {
    pub var: f64,
    pub es: f64,
    pub warning: Option<String>,
}

/// Minimum training length for the historical benchmark.
pub const MIN_HISTORY: usize = 100;

/// Empirical α-quantile of the training returns and the mean of the returns
/// at or below it.
pub fn historical_var_es(
    train_returns: &[f64],
    alpha: f64,
    rule: QuantileRule,
) -> Result<HistoricalRisk> {
    if train_returns.len() < MIN_HISTORY {
        return Err(Error::InsufficientData {
            required: MIN_HISTORY,
            available: train_returns.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "tail probability must lie in (0, 1), got {alpha}"
        )));
    }
    let mut sorted = train_returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let var = empirical_quantile(&sorted, alpha, rule);
    let tail: Vec<f64> = sorted.iter().copied().take_while(|r| *r <= var).collect();
    if tail.len() < 2 {
        let msg = format!(
            "historical ES uses VaR: only {} training return(s) at or below VaR",
            tail.len()
        );
        log::warn!("{msg}");
        return Ok(HistoricalRisk {
            var,
            es: var,
            warning: Some(msg),
        });
    }
    let es = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(HistoricalRisk {
        var,
        es,
        warning: None,
    })
}

/// `r_p[t] = Σ_i w_i r[t][i]`
pub fn portfolio_series(returns: &[Vec<f64>], w: &PortfolioWeights) -> Result<Vec<f64>> {
    returns
        .iter()
        .map(|row| {
            if row.len() != w.len() {
                return Err(Error::LengthMismatch {
                    left: row.len(),
                    right: w.len(),
                });
            }
            Ok(row.iter().zip(w.as_slice()).map(|(r, wi)| r * wi).sum())
        })
        .collect()
}
