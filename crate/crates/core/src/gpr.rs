//! Univariate zero-mean GP regression of percent returns on day ordinals.
//!
//! Hyperparameters start from the aggressive-noise point (noise variance equal
//! to the empirical variance of the training returns) and are refined by
//! maximising the log-marginal likelihood in log-space with [`BoxLbfgs`],
//! plus a few seeded random restarts.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    gram, lengthscale_ratio, matern52_at, matern_matrix, JitterPolicy, KernelHyperparams, SQRT_5,
};
use crate::linalg::CholeskyFactor;
use crate::optim::{BoxLbfgs, Termination};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Minimum training length accepted by [`ani_init`].
pub const MIN_TRAIN: usize = 30;

/// Initial lengthscale in days (about one trading month).
pub const ANI_LENGTHSCALE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lower: KernelHyperparams,
    pub upper: KernelHyperparams,
}

impl HyperBounds {
    pub fn contains(&self, p: &KernelHyperparams) -> bool {
        let within = |v: f64, lo: f64, hi: f64| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        within(
            p.signal_variance,
            self.lower.signal_variance,
            self.upper.signal_variance,
        ) && within(
            p.lengthscale,
            self.lower.lengthscale,
            self.upper.lengthscale,
        ) && within(
            p.noise_variance,
            self.lower.noise_variance,
            self.upper.noise_variance,
        )
    }

    fn log_box(&self) -> ([f64; 3], [f64; 3]) {
        (self.lower.to_log(), self.upper.to_log())
    }

    fn clamp(&self, p: KernelHyperparams) -> KernelHyperparams {
        KernelHyperparams::new(
            p.signal_variance
                .clamp(self.lower.signal_variance, self.upper.signal_variance),
            p.lengthscale
                .clamp(self.lower.lengthscale, self.upper.lengthscale),
            p.noise_variance
                .clamp(self.lower.noise_variance, self.upper.noise_variance),
        )
    }
}

/// Population variance (divisor `T`).
pub fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Aggressive noise initialisation: `σ_n² = σ_f² = Var(y)`, `ℓ = 30` days,
/// with bounds `σ_f² ∈ [1e-6, 1e4]`, `ℓ ∈ [1, 1e5]`,
/// `σ_n² ∈ [1e-5·Var(y), 10·Var(y)]`.
pub fn ani_init(y: &[f64]) -> Result<(KernelHyperparams, HyperBounds)> {
    if y.len() < MIN_TRAIN {
        return Err(Error::InsufficientData {
            required: MIN_TRAIN,
            available: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("training returns must be finite".into()));
    }
    let var = population_variance(y);
    let constant = y.iter().all(|v| *v == y[0]);
    if constant || !(var > 0.0) {
        return Err(Error::Degenerate(
            "training returns have zero variance".into(),
        ));
    }
    let bounds = HyperBounds {
        lower: KernelHyperparams::new(1e-6, 1.0, 1e-5 * var),
        upper: KernelHyperparams::new(1e4, 1e5, 10.0 * var),
    };
    let start = bounds.clamp(KernelHyperparams::new(var, ANI_LENGTHSCALE, var));
    Ok((start, bounds))
}

fn check_xy(xs: &[f64], y: &[f64]) -> Result<()> {
    if xs.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: y.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: xs.len(),
        });
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain(
            "training inputs must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Evaluates `(LML, ∂LML/∂[ln σ_f², ln ℓ, ln σ_n²])` without jitter, or
/// `None` if the Gram matrix does not factorise.
fn lml_with_gradient(xs: &[f64], y: &[f64], p: &KernelHyperparams) -> Option<(f64, [f64; 3])> {
    let n = xs.len();
    let mut k = matern_matrix(xs, p);
    for i in 0..n {
        k[(i, i)] += p.noise_variance;
    }
    let chol = CholeskyFactor::new(k.as_ref())?;
    let alpha = chol.solve(y);
    let fit_term: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let lml = -0.5 * fit_term - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;

    // ∂LML/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ), using symmetry of both factors.
    let kinv = chol.inverse();
    let mut g = [0.0f64; 3];
    for j in 0..n {
        let w = alpha[j] * alpha[j] - kinv[(j, j)];
        g[0] += w * p.signal_variance;
        g[2] += w * p.noise_variance;
        for i in (j + 1)..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let kij = k[(i, j)];
            let a = SQRT_5 * (xs[i] - xs[j]).abs() / p.lengthscale;
            g[0] += 2.0 * w * kij;
            g[1] += 2.0 * w * kij * lengthscale_ratio(a);
        }
    }
    for gi in &mut g {
        *gi *= 0.5;
    }
    if lml.is_finite() && g.iter().all(|v| v.is_finite()) {
        Some((lml, g))
    } else {
        None
    }
}

/// `LML = −½ yᵀK⁻¹y − ½ ln|K| − (T/2) ln 2π` and its gradient with respect
/// to the log-hyperparameters.
pub fn log_marginal_likelihood(
    xs: &[f64],
    y: &[f64],
    params: &KernelHyperparams,
) -> Result<(f64, [f64; 3])> {
    check_xy(xs, y)?;
    params.validate()?;
    match lml_with_gradient(xs, y, params) {
        Some(v) => Ok(v),
        None => {
            // Surface the factorisation error with its condition estimate.
            gram(xs, params, JitterPolicy::None)?;
            Err(Error::Numerical(
                "log-marginal likelihood is not finite".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartPoint {
    /// Aggressive noise initialisation.
    Ani,
    /// Explicit start (clamped into the ANI bounds).
    Fixed(KernelHyperparams),
}

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub optimizer: BoxLbfgs,
    /// Random restarts drawn log-uniformly within the bounds.
    pub restarts: usize,
    pub seed: u64,
    pub start: StartPoint,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimizer: BoxLbfgs::default(),
            restarts: 2,
            seed: 0,
            start: StartPoint::Ani,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub start: KernelHyperparams,
    /// `None` when the start point did not factorise.
    pub lml: Option<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// LML at the primary start point.
    pub start_lml: f64,
    pub runs: Vec<RestartOutcome>,
}

#[derive(Debug, Clone)]
pub struct GprModel {
    pub xs_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub params: KernelHyperparams,
    pub bounds: HyperBounds,
    /// Lower Cholesky factor of the training Gram matrix.
    pub chol: CholeskyFactor,
    /// `K⁻¹ y`
    pub dual_weights: Vec<f64>,
    pub jitter_applied: f64,
    pub lml: f64,
    pub trace: OptimizerTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolForecast {
    pub xs: Vec<f64>,
    /// Predictive variance (return-%²).
    pub variance: Vec<f64>,
    /// Square root of `variance` (return-%).
    pub stdev: Vec<f64>,
}

fn sample_log_uniform(rng: &mut ChaCha8Rng, bounds: &HyperBounds) -> KernelHyperparams {
    let (lo, hi) = bounds.log_box();
    let theta: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| rng.random_range(*l..=*h))
        .collect();
    bounds.clamp(KernelHyperparams::from_log(&theta))
}

/// Fits hyperparameters by maximising the LML from the configured start and
/// `restarts` random starts; the best LML wins.
pub fn fit(xs: &[f64], y: &[f64], config: &FitConfig) -> Result<GprModel> {
    check_xy(xs, y)?;
    let (ani, bounds) = ani_init(y)?;
    let primary = match config.start {
        StartPoint::Ani => ani,
        StartPoint::Fixed(p) => {
            p.validate()?;
            bounds.clamp(p)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![primary];
    starts.extend((0..config.restarts).map(|_| sample_log_uniform(&mut rng, &bounds)));

    let (lo, hi) = bounds.log_box();
    let objective = |theta: &[f64]| {
        let p = KernelHyperparams::from_log(theta);
        lml_with_gradient(xs, y, &p).map(|(l, g)| (-l, g.iter().map(|v| -v).collect()))
    };

    let start_lml = lml_with_gradient(xs, y, &primary).map(|(l, _)| l);
    let mut runs = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, crate::optim::Minimum)> = None;
    let mut evaluations = 0;
    for (idx, start) in starts.iter().enumerate() {
        let result = config
            .optimizer
            .minimize(objective, &start.to_log(), &lo, &hi);
        match result {
            Some(m) => {
                evaluations += m.evaluations;
                runs.push(RestartOutcome {
                    start: *start,
                    lml: Some(-m.f),
                    iterations: m.iterations,
                    termination: Some(m.termination),
                });
                if best.as_ref().is_none_or(|(_, b)| m.f < b.f) {
                    best = Some((idx, m));
                }
            }
            None => runs.push(RestartOutcome {
                start: *start,
                lml: None,
                iterations: 0,
                termination: None,
            }),
        }
    }
    let Some((_, best)) = best else {
        gram(xs, &primary, JitterPolicy::None)?;
        return Err(Error::Numerical(
            "no restart produced a factorisable gram matrix".into(),
        ));
    };

    let params = bounds.clamp(KernelHyperparams::from_log(&best.x));
    if !best.converged() {
        log::warn!(
            "GP optimiser stopped without converging ({:?} after {} iterations)",
            best.termination,
            best.iterations
        );
    }
    let g = gram(xs, &params, JitterPolicy::default())?;
    let dual_weights = g.factor.solve(y);
    let fit_term: f64 = y.iter().zip(&dual_weights).map(|(a, b)| a * b).sum();
    let lml = -0.5 * fit_term - 0.5 * g.factor.log_det() - 0.5 * xs.len() as f64 * LN_2PI;

    Ok(GprModel {
        xs_train: xs.to_vec(),
        y_train: y.to_vec(),
        params,
        bounds,
        chol: g.factor,
        dual_weights,
        jitter_applied: g.jitter_applied,
        lml,
        trace: OptimizerTrace {
            iterations: best.iterations,
            evaluations,
            converged: best.converged(),
            termination: best.termination,
            start_lml: start_lml.unwrap_or(f64::NEG_INFINITY),
            runs,
        },
    })
}

impl GprModel {
    /// Conditions on `(xs, y)` at fixed hyperparameters without optimising.
    /// The Gram matrix must factorise without jitter.
    pub fn condition(xs: &[f64], y: &[f64], params: KernelHyperparams) -> Result<GprModel> {
        check_xy(xs, y)?;
        let g = gram(xs, &params, JitterPolicy::None)?;
        let dual_weights = g.factor.solve(y);
        let fit_term: f64 = y.iter().zip(&dual_weights).map(|(a, b)| a * b).sum();
        let lml = -0.5 * fit_term - 0.5 * g.factor.log_det() - 0.5 * xs.len() as f64 * LN_2PI;
        Ok(GprModel {
            xs_train: xs.to_vec(),
            y_train: y.to_vec(),
            params,
            bounds: HyperBounds {
                lower: params,
                upper: params,
            },
            chol: g.factor,
            dual_weights,
            jitter_applied: 0.0,
            lml,
            trace: OptimizerTrace {
                iterations: 0,
                evaluations: 0,
                converged: true,
                termination: Termination::ProjectedGradient,
                start_lml: lml,
                runs: Vec::new(),
            },
        })
    }

    /// Posterior predictive variance
    /// `k(x*,x*) − k*ᵀK⁻¹k* (+ σ_n² when `include_noise`)`.
    /// Cross-covariances use the Matern term only.
    pub fn predict_variance(&self, xs_test: &[f64], include_noise: bool) -> VolForecast {
        let n = self.xs_train.len();
        let m = xs_test.len();
        let p = &self.params;
        let mut kstar = Mat::from_fn(n, m, |i, j| {
            matern52_at(
                self.xs_train[i] - xs_test[j],
                p.signal_variance,
                p.lengthscale,
            )
        });
        self.chol.forward_solve(&mut kstar);
        let prior = p.signal_variance + if include_noise { p.noise_variance } else { 0.0 };
        let variance: Vec<f64> = (0..m)
            .map(|j| {
                let explained: f64 = (0..n).map(|i| kstar[(i, j)] * kstar[(i, j)]).sum();
                (prior - explained).max(0.0)
            })
            .collect();
        let stdev = variance.iter().map(|v| v.sqrt()).collect();
        VolForecast {
            xs: xs_test.to_vec(),
            variance,
            stdev,
        }
    }

    /// Posterior mean `k*ᵀ α`.
    pub fn predict_mean(&self, xs_test: &[f64]) -> Vec<f64> {
        let p = &self.params;
        xs_test
            .iter()
            .map(|x| {
                self.xs_train
                    .iter()
                    .zip(&self.dual_weights)
                    .map(|(xt, a)| a * matern52_at(xt - x, p.signal_variance, p.lengthscale))
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_series(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn ani_sets_noise_to_empirical_variance() {
        let y: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 1.2 } else { -1.2 })
            .collect();
        let (p, b) = ani_init(&y).unwrap();
        assert!((p.noise_variance - 1.44).abs() < 1e-12);
        assert!((p.signal_variance - 1.44).abs() < 1e-12);
        assert_eq!(p.lengthscale, 30.0);
        assert!(b.contains(&p));
        assert!((b.upper.noise_variance - 14.4).abs() < 1e-12);
    }

    #[test]
    fn ani_rejects_degenerate_input() {
        assert!(matches!(ani_init(&[0.3; 50]), Err(Error::Degenerate(_))));
        assert!(matches!(
            ani_init(&[0.3, 0.1]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn ani_on_standard_normal_sample() {
        let y = normal_series(5, 500);
        let (p, _) = ani_init(&y).unwrap();
        let direct = {
            let m = y.iter().sum::<f64>() / 500.0;
            y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 500.0
        };
        assert!((p.noise_variance - direct).abs() < 1e-12);
        // Sampling SE of a variance estimate at T=500 is about 0.063.
        assert!((p.noise_variance - 1.0).abs() < 0.25);
    }

    #[test]
    fn lml_of_zero_targets_is_the_log_det_term() {
        // −½ ln|K| − ln 2π for K = [[2, m], [m, 2]], 30-digit mpmath value.
        let p = KernelHyperparams::new(1.0, 1.0, 1.0);
        let (lml, _) = log_marginal_likelihood(&[0.0, 1.0], &[0.0, 0.0], &p).unwrap();
        assert!((lml + 2.495_468_230_455_655_5).abs() < 1e-13, "{lml}");
    }

    #[test]
    fn lml_scaling_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..25).map(|i| f64::from(i) * 1.5).collect();
            let y = normal_series(rng.random(), 25);
            let p = KernelHyperparams::new(
                rng.random_range(0.1..3.0),
                rng.random_range(1.0..20.0),
                rng.random_range(0.1..3.0),
            );
            let c: f64 = rng.random_range(0.2..5.0);
            let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
            let q = KernelHyperparams::new(
                c * c * p.signal_variance,
                p.lengthscale,
                c * c * p.noise_variance,
            );
            let (a, _) = log_marginal_likelihood(&xs, &y, &p).unwrap();
            let (b, _) = log_marginal_likelihood(&xs, &ys, &q).unwrap();
            assert!((b - (a - 25.0 * c.ln())).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn interpolates_without_noise() {
        let xs: Vec<f64> = (0..12).map(f64::from).collect();
        let y = normal_series(9, 12);
        let model = model_at(&xs, &y, KernelHyperparams::new(1.0, 3.0, 1e-10));
        let v = model.predict_variance(&xs[4..5], false);
        assert!(v.variance[0] < 1e-8, "{:?}", v.variance);
        let far = model.predict_variance(&[1e4], true);
        assert!((far.variance[0] - (1.0 + 1e-10)).abs() < 1e-12);
    }

    fn model_at(xs: &[f64], y: &[f64], p: KernelHyperparams) -> GprModel {
        GprModel::condition(xs, y, p).unwrap()
    }

    #[test]
    fn two_point_predictive_variance() {
        // 2 − k*ᵀK⁻¹k*, k* = [1, m], K = [[2, m], [m, 2]]; mpmath value.
        let model = model_at(
            &[0.0, 1.0],
            &[0.0, 0.0],
            KernelHyperparams::new(1.0, 1.0, 1.0),
        );
        let v = model.predict_variance(&[0.0], true);
        assert!(
            (v.variance[0] - 1.463_149_245_419_581_4).abs() < 1e-13,
            "{:?}",
            v.variance
        );
    }

    #[test]
    fn predictive_variance_grows_beyond_the_data() {
        let xs: Vec<f64> = (0..80).map(|i| f64::from(i) * 7.0 / 5.0).collect();
        let y = normal_series(21, 80);
        let model = model_at(&xs, &y, KernelHyperparams::new(0.8, 15.0, 0.6));
        let last = *xs.last().unwrap();
        let probe: Vec<f64> = (1..200).map(|k| last + f64::from(k)).collect();
        let v = model.predict_variance(&probe, true);
        for w in v.variance.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(v
            .variance
            .iter()
            .all(|x| *x >= 0.6 - 1e-12 && *x <= 1.4 + 1e-12));
    }

    #[test]
    fn fit_invariants_and_determinism() {
        let xs: Vec<f64> = (0..150).map(f64::from).collect();
        let y = normal_series(77, 150);
        let cfg = FitConfig {
            seed: 4,
            ..FitConfig::default()
        };
        let m = fit(&xs, &y, &cfg).unwrap();
        assert!(m.bounds.contains(&m.params));
        assert!(m.lml >= m.trace.start_lml - 1e-9);
        assert_eq!(m.trace.runs.len(), 3);

        let k = gram(&xs, &m.params, JitterPolicy::None).unwrap().values;
        let rebuilt = m.chol.reconstruct();
        let mut worst: f64 = 0.0;
        for i in 0..150 {
            for j in 0..150 {
                worst = worst.max((rebuilt[(i, j)] - k[(i, j)]).abs() / k[(i, i)].max(k[(j, j)]));
            }
        }
        assert!(worst < 1e-8);
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let resid: f64 = (0..150)
            .map(|i| {
                let r: f64 = (0..150).map(|j| k[(i, j)] * m.dual_weights[j]).sum::<f64>() - y[i];
                r * r
            })
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-8 * ynorm);
        let (lml, _) = log_marginal_likelihood(&xs, &y, &m.params).unwrap();
        assert!((lml - m.lml).abs() < 1e-9 * lml.abs());

        let again = fit(&xs, &y, &cfg).unwrap();
        assert_eq!(
            again.params.to_log().map(f64::to_bits),
            m.params.to_log().map(f64::to_bits)
        );
    }

    #[test]
    fn fit_rejects_mismatched_lengths() {
        assert!(matches!(
            fit(&[0.0, 1.0], &[1.0], &FitConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
