//! Hybrid volatility-covariance assembly: GP variance forecasts on the
//! diagonal, training-window historical covariances off the diagonal.

use chrono::NaiveDate;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, to_rows, CholeskyFactor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "portfolio weights must be finite and non-empty".into(),
            ));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "portfolio weights sum to {total}, not 1"
            )));
        }
        Ok(PortfolioWeights(w))
    }

    pub fn equal(n: usize) -> Self {
        // Put the rounding residue on the last weight so the sum is exact.
        let mut w = vec![1.0 / n as f64; n];
        let head: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - head;
        PortfolioWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct HistoricalCov {
    pub matrix: Mat<f64>,
    pub window: Option<(NaiveDate, NaiveDate)>,
}

/// Unbiased (divisor `T−1`) sample covariance of `T × N` training returns.
pub fn historical_cov(train_returns: &[Vec<f64>]) -> Result<HistoricalCov> {
    let t = train_returns.len();
    let n = train_returns.first().map_or(0, Vec::len);
    if n == 0 || t < n + 2 {
        return Err(Error::InsufficientData {
            required: n + 2,
            available: t,
        });
    }
    if let Some(bad) = train_returns.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch {
            left: bad.len(),
            right: n,
        });
    }
    let means: Vec<f64> = (0..n)
        .map(|i| train_returns.iter().map(|r| r[i]).sum::<f64>() / t as f64)
        .collect();
    let mut m = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = train_returns
                .iter()
                .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
                .sum();
            let v = s / (t - 1) as f64;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(HistoricalCov {
        matrix: m,
        window: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    /// Copy the historical matrix and overwrite its diagonal.
    #[default]
    Literal,
    /// `D R D` with `R` the historical correlation and `D = diag(√gp_vars)`.
    CorrScaled,
}

impl std::str::FromStr for AssemblyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(AssemblyMode::Literal),
            "corr_scaled" => Ok(AssemblyMode::CorrScaled),
            other => Err(Error::Config(format!("unknown assembly mode `{other}`"))),
        }
    }
}

pub fn assemble(hist: &HistoricalCov, gp_vars: &[f64], mode: AssemblyMode) -> Result<Mat<f64>> {
    let n = hist.matrix.nrows();
    if gp_vars.len() != n {
        return Err(Error::LengthMismatch {
            left: gp_vars.len(),
            right: n,
        });
    }
    if gp_vars.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(
            "GP variance forecasts must be positive".into(),
        ));
    }
    let h = &hist.matrix;
    Ok(match mode {
        AssemblyMode::Literal => {
            Mat::from_fn(n, n, |i, j| if i == j { gp_vars[i] } else { h[(i, j)] })
        }
        AssemblyMode::CorrScaled => {
            let sd: Vec<f64> = gp_vars.iter().map(|v| v.sqrt()).collect();
            let hsd: Vec<f64> = (0..n).map(|i| h[(i, i)].sqrt()).collect();
            Mat::from_fn(n, n, |i, j| {
                if i == j {
                    gp_vars[i]
                } else {
                    // Symmetric by construction: the product is commutative
                    // only up to rounding, so order the factors by index.
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    let corr = h[(a, b)] / (hsd[a] * hsd[b]);
                    sd[a] * corr * sd[b]
                }
            })
        }
    })
}

#[derive(Debug, Clone)]
pub struct PdRepair {
    pub matrix: Mat<f64>,
    pub repaired: bool,
    /// Largest amount by which an eigenvalue was raised.
    pub shift: f64,
}

/// Absolute eigenvalue floor used when the matrix has no positive spectrum.
pub const ABSOLUTE_FLOOR: f64 = 1e-12;
/// Eigenvalue floor relative to the largest eigenvalue.
pub const RELATIVE_FLOOR: f64 = 1e-10;

/// Raises eigenvalues below `max(1e-10·λ_max, 1e-12)` to that floor and
/// rebuilds a symmetric matrix. PD input with no small eigenvalues is returned
/// unchanged.
pub fn ensure_pd(sigma: &Mat<f64>) -> Result<PdRepair> {
    let n = sigma.nrows();
    let (values, vectors) = symmetric_eigen(sigma.as_ref())?;
    let lmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut floor = (RELATIVE_FLOOR * lmax).max(ABSOLUTE_FLOOR);
    if values.iter().all(|v| *v >= floor) && CholeskyFactor::new(sigma.as_ref()).is_some() {
        return Ok(PdRepair {
            matrix: sigma.clone(),
            repaired: false,
            shift: 0.0,
        });
    }
    for _ in 0..8 {
        let clipped: Vec<f64> = values.iter().map(|v| v.max(floor)).collect();
        let shift = values
            .iter()
            .zip(&clipped)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max);
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n)
                    .map(|k| vectors[(i, k)] * clipped[k] * vectors[(j, k)])
                    .sum();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        if CholeskyFactor::new(m.as_ref()).is_some() {
            return Ok(PdRepair {
                matrix: m,
                repaired: true,
                shift,
            });
        }
        floor *= 10.0;
    }
    Err(Error::Numerical(
        "eigenvalue clipping did not yield a factorisable matrix".into(),
    ))
}

/// `wᵀ Σ w`
pub fn portfolio_variance(sigma: &Mat<f64>, w: &PortfolioWeights) -> f64 {
    let w = w.as_slice();
    (0..w.len())
        .map(|i| w[i] * (0..w.len()).map(|j| sigma[(i, j)] * w[j]).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcvForecast {
    pub date: NaiveDate,
    pub sigma: Vec<Vec<f64>>,
    pub repaired: bool,
    pub shift: f64,
    /// Largest relative change of a diagonal entry caused by repair.
    pub max_diag_deviation: f64,
    pub portfolio_variance: f64,
}

/// Assembles, repairs and aggregates one date.
pub fn forecast_date(
    date: NaiveDate,
    hist: &HistoricalCov,
    gp_vars: &[f64],
    mode: AssemblyMode,
    w: &PortfolioWeights,
) -> Result<VcvForecast> {
    let raw = assemble(hist, gp_vars, mode)?;
    let fixed = ensure_pd(&raw)?;
    let max_diag_deviation = gp_vars
        .iter()
        .enumerate()
        .map(|(i, v)| (fixed.matrix[(i, i)] - v).abs() / v)
        .fold(0.0, f64::max);
    let pv = portfolio_variance(&fixed.matrix, w);
    if !(pv > 0.0) {
        return Err(Error::Numerical(format!(
            "non-positive portfolio variance {pv} on {date}"
        )));
    }
    Ok(VcvForecast {
        date,
        sigma: to_rows(fixed.matrix.as_ref()),
        repaired: fixed.repaired,
        shift: fixed.shift,
        max_diag_deviation,
        portfolio_variance: pv,
    })
}
