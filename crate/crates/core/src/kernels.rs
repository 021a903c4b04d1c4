//! Matern 5/2 + white-noise covariance, Gram matrices and their derivatives
//! with respect to the log-hyperparameters.
//!
//! Inputs are day ordinals relative to the first training date, so the
//! lengthscale is measured in calendar days.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, CholeskyFactor};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// Matern signal variance σ_f² (return-%²).
    pub signal_variance: f64,
    /// Matern lengthscale ℓ in days.
    pub lengthscale: f64,
    /// White-noise variance σ_n² (return-%²).
    pub noise_variance: f64,
}

impl KernelHyperparams {
    pub fn new(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        KernelHyperparams {
            signal_variance,
            lengthscale,
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.signal_variance) && ok(self.lengthscale) && ok(self.noise_variance) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "kernel hyperparameters must be positive and finite, got {self:?}"
            )))
        }
    }

    /// `[ln σ_f², ln ℓ, ln σ_n²]`
    pub fn to_log(&self) -> [f64; 3] {
        [
            self.signal_variance.ln(),
            self.lengthscale.ln(),
            self.noise_variance.ln(),
        ]
    }

    pub fn from_log(theta: &[f64]) -> Self {
        KernelHyperparams::new(theta[0].exp(), theta[1].exp(), theta[2].exp())
    }
}

/// Matern 5/2 covariance as a function of distance, no argument checks.
#[inline]
pub(crate) fn matern52_at(d: f64, signal_variance: f64, lengthscale: f64) -> f64 {
    let a = SQRT5 * d.abs() / lengthscale;
    signal_variance * (1.0 + a + a * a / 3.0) * (-a).exp()
}

/// `k(d) = σ_f² (1 + √5 d/ℓ + 5d²/(3ℓ²)) exp(−√5 d/ℓ)` with `d = |x_i − x_j|`.
pub fn matern52(x_i: f64, x_j: f64, signal_variance: f64, lengthscale: f64) -> Result<f64> {
    if !(signal_variance > 0.0 && lengthscale > 0.0) {
        return Err(Error::Domain(format!(
            "matern52 needs positive signal variance and lengthscale, got {signal_variance}, {lengthscale}"
        )));
    }
    Ok(matern52_at(x_i - x_j, signal_variance, lengthscale))
}

/// White-noise covariance between training points `i` and `j`.
pub fn white(i: usize, j: usize, noise_variance: f64) -> f64 {
    if i == j {
        noise_variance
    } else {
        0.0
    }
}

/// Diagonal jitter applied when a Gram matrix fails to factorise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterPolicy {
    /// Fail immediately.
    None,
    /// Add `start · mean(diag)`, multiplying by `factor` up to `max · mean(diag)`.
    Escalating { start: f64, max: f64, factor: f64 },
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy::Escalating {
            start: 1e-10,
            max: 1e-4,
            factor: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: Mat<f64>,
    /// Absolute amount added to the diagonal beyond σ_n².
    pub jitter_applied: f64,
    pub factor: CholeskyFactor,
}

/// Matern part only (no noise on the diagonal).
pub(crate) fn matern_matrix(xs: &[f64], params: &KernelHyperparams) -> Mat<f64> {
    let n = xs.len();
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = params.signal_variance;
        for i in (j + 1)..n {
            let v = matern52_at(xs[i] - xs[j], params.signal_variance, params.lengthscale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn noisy_gram(xs: &[f64], params: &KernelHyperparams) -> Mat<f64> {
    let mut k = matern_matrix(xs, params);
    for i in 0..xs.len() {
        k[(i, i)] += white(i, i, params.noise_variance);
    }
    k
}

fn check_inputs(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: xs.len(),
        });
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain(
            "kernel inputs must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn condition_estimate(k: &Mat<f64>) -> f64 {
    match symmetric_eigenvalues(k.as_ref()) {
        Ok(ev) => {
            let lo = ev.first().copied().unwrap_or(0.0);
            let hi = ev.last().copied().unwrap_or(0.0);
            if lo > 0.0 {
                hi / lo
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::NAN,
    }
}

/// `K_ij = k_matern(x_i, x_j) + δ_ij σ_n²`, factorised. Jitter is added only
/// if the plain matrix fails to factorise.
pub fn gram(xs: &[f64], params: &KernelHyperparams, jitter: JitterPolicy) -> Result<GramMatrix> {
    check_inputs(xs)?;
    params.validate()?;
    let mut values = noisy_gram(xs, params);
    if let Some(factor) = CholeskyFactor::new(values.as_ref()) {
        return Ok(GramMatrix {
            values,
            jitter_applied: 0.0,
            factor,
        });
    }
    let n = xs.len();
    let (start, max, step) = match jitter {
        JitterPolicy::None => {
            return Err(Error::NotPositiveDefinite {
                jitter: 0.0,
                condition: condition_estimate(&values),
            })
        }
        JitterPolicy::Escalating { start, max, factor } => (start, max, factor),
    };
    let mean_diag = (0..n).map(|i| values[(i, i)]).sum::<f64>() / n as f64;
    let mut added = 0.0;
    let mut rel = start;
    while rel <= max * (1.0 + 1e-12) {
        let target = rel * mean_diag;
        for i in 0..n {
            values[(i, i)] += target - added;
        }
        added = target;
        if let Some(factor) = CholeskyFactor::new(values.as_ref()) {
            log::warn!("gram matrix needed diagonal jitter {added:.3e}");
            return Ok(GramMatrix {
                values,
                jitter_applied: added,
                factor,
            });
        }
        rel *= step;
    }
    Err(Error::NotPositiveDefinite {
        jitter: added,
        condition: condition_estimate(&values),
    })
}

/// `a²(1+a) / (3 + 3a + a²)`: ratio of ∂k/∂ln ℓ to k at scaled distance `a`.
#[inline]
pub(crate) fn lengthscale_ratio(a: f64) -> f64 {
    a * a * (1.0 + a) / (3.0 + 3.0 * a + a * a)
}

/// `[∂K/∂ln σ_f², ∂K/∂ln ℓ, ∂K/∂ln σ_n²]`.
pub fn gram_gradients(xs: &[f64], params: &KernelHyperparams) -> Result<[Mat<f64>; 3]> {
    check_inputs(xs)?;
    params.validate()?;
    let n = xs.len();
    let d_signal = matern_matrix(xs, params);
    let mut d_length = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let a = SQRT5 * (xs[i] - xs[j]).abs() / params.lengthscale;
            let v = d_signal[(i, j)] * lengthscale_ratio(a);
            d_length[(i, j)] = v;
            d_length[(j, i)] = v;
        }
    }
    let d_noise = Mat::from_fn(n, n, |i, j| white(i, j, params.noise_variance));
    Ok([d_signal, d_length, d_noise])
}

pub(crate) const SQRT_5: f64 = SQRT5;
