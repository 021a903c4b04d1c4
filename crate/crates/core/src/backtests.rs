//! VaR/ES backtests: violation counting, Kupiec unconditional coverage,
//! Christoffersen conditional coverage, the McNeil-Frey exceedance-residual
//! bootstrap, quadratic loss and the Basel traffic light.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_measures::chi2_sf;

/// Every verdict is taken at this significance level.
pub const SIGNIFICANCE: f64 = 0.05;
pub const DEFAULT_BOOTSTRAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub n: usize,
    #[serde(skip)]
    pub hits: Vec<bool>,
    pub x: usize,
    /// Tail probability α.
    pub alpha: f64,
    pub expected: f64,
    pub hit_dates: Vec<NaiveDate>,
}

impl ViolationRecord {
    pub fn hit_indices(&self) -> Vec<usize> {
        self.hits
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.then_some(i))
            .collect()
    }

    pub fn with_dates(mut self, dates: &[NaiveDate]) -> Result<Self> {
        check_len(dates.len(), self.n)?;
        self.hit_dates = self.hit_indices().into_iter().map(|i| dates[i]).collect();
        Ok(self)
    }
}

fn check_len(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left, right })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "tail probability must lie in (0, 1), got {alpha}"
        )))
    }
}

/// A hit is `r_t < var_t`, strictly.
pub fn violations(returns: &[f64], var_series: &[f64], alpha: f64) -> Result<ViolationRecord> {
    check_len(returns.len(), var_series.len())?;
    check_alpha(alpha)?;
    if let Some(v) = var_series.iter().find(|v| !(**v < 0.0)) {
        return Err(Error::Domain(format!(
            "VaR forecasts must be negative returns, got {v}"
        )));
    }
    let hits: Vec<bool> = returns.iter().zip(var_series).map(|(r, v)| r < v).collect();
    let n = hits.len();
    Ok(ViolationRecord {
        n,
        x: hits.iter().filter(|h| **h).count(),
        hits,
        alpha,
        expected: n as f64 * alpha,
        hit_dates: Vec::new(),
    })
}

/// `k·ln(p)` with `0·ln 0 = 0`.
fn xlogy(k: f64, p: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * p.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KupiecResult {
    pub lr: f64,
    pub p: f64,
}

pub fn kupiec_uc(x: usize, n: usize, alpha: f64) -> Result<KupiecResult> {
    check_alpha(alpha)?;
    if n == 0 || x > n {
        return Err(Error::Domain(format!(
            "need 0 <= x <= n and n > 0, got x={x}, n={n}"
        )));
    }
    let (xf, nf) = (x as f64, n as f64);
    let pi = xf / nf;
    let null = xlogy(nf - xf, 1.0 - alpha) + xlogy(xf, alpha);
    let alt = xlogy(nf - xf, 1.0 - pi) + xlogy(xf, pi);
    let lr = (-2.0 * (null - alt)).max(0.0);
    Ok(KupiecResult {
        lr,
        p: chi2_sf(lr, 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChristoffersenResult {
    pub lr_uc: f64,
    pub lr_ind: f64,
    pub lr_cc: f64,
    pub p: f64,
    /// Transition counts `[n00, n01, n10, n11]`.
    pub transitions: [usize; 4],
}

pub fn christoffersen_cc(hits: &[bool], alpha: f64) -> Result<ChristoffersenResult> {
    if hits.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: hits.len(),
        });
    }
    let mut t = [0usize; 4];
    for w in hits.windows(2) {
        t[2 * usize::from(w[0]) + usize::from(w[1])] += 1;
    }
    let [n00, n01, n10, n11] = t.map(|c| c as f64);
    let pi = (n01 + n11) / (n00 + n01 + n10 + n11);
    let pi01 = if n00 + n01 > 0.0 {
        n01 / (n00 + n01)
    } else {
        0.0
    };
    let pi11 = if n10 + n11 > 0.0 {
        n11 / (n10 + n11)
    } else {
        0.0
    };
    let restricted = xlogy(n00 + n10, 1.0 - pi) + xlogy(n01 + n11, pi);
    let unrestricted =
        xlogy(n00, 1.0 - pi01) + xlogy(n01, pi01) + xlogy(n10, 1.0 - pi11) + xlogy(n11, pi11);
    let lr_ind = -2.0 * (restricted - unrestricted);
    debug_assert!(lr_ind >= -1e-9, "LR_ind = {lr_ind}");
    let lr_ind = lr_ind.max(0.0);

    let x = hits.iter().filter(|h| **h).count();
    let lr_uc = kupiec_uc(x, hits.len(), alpha)?.lr;
    let lr_cc = lr_uc + lr_ind;
    Ok(ChristoffersenResult {
        lr_uc,
        lr_ind,
        lr_cc,
        p: chi2_sf(lr_cc, 2),
        transitions: t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsTestResult {
    /// Mean standardized exceedance residual.
    pub statistic: f64,
    pub p: f64,
    pub exceedances: usize,
    pub resamples: usize,
    pub note: Option<String>,
}

/// One-sided McNeil-Frey test on `e_t = (r_t − es_t)/σ_t` over hit days.
/// H1 is `mean(e) < 0`. The mean is bootstrapped from the residuals
/// recentred to zero and `p = (#{m* ≤ m} + 1)/(B + 1)`.
pub fn mcneil_frey_es(
    returns: &[f64],
    var_series: &[f64],
    es_series: &[f64],
    sigma_series: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<EsTestResult> {
    check_len(returns.len(), var_series.len())?;
    check_len(returns.len(), es_series.len())?;
    check_len(returns.len(), sigma_series.len())?;
    if n_boot < 1000 {
        return Err(Error::Domain(format!(
            "need at least 1000 bootstrap resamples, got {n_boot}"
        )));
    }
    let mut residuals = Vec::new();
    for t in 0..returns.len() {
        if returns[t] < var_series[t] {
            let s = sigma_series[t];
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!(
                    "scale on day {t} must be positive, got {s}"
                )));
            }
            residuals.push((returns[t] - es_series[t]) / s);
        }
    }

    let k = residuals.len();
    let statistic = if k == 0 {
        0.0
    } else {
        residuals.iter().sum::<f64>() / k as f64
    };
    let degenerate = |p: f64, note: &str| EsTestResult {
        statistic,
        p,
        exceedances: k,
        resamples: 0,
        note: Some(note.to_string()),
    };
    match k {
        0 => return Ok(degenerate(1.0, "no exceedances; pass by construction")),
        1 => {
            let p = if residuals[0] >= 0.0 { 1.0 } else { 0.5 };
            return Ok(degenerate(
                p,
                "single exceedance; p from the residual's sign",
            ));
        }
        _ => {}
    }

    let centred: Vec<f64> = residuals.iter().map(|e| e - statistic).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at_or_below = 0usize;
    for _ in 0..n_boot {
        let mut sum = 0.0;
        for _ in 0..k {
            sum += centred[rng.random_range(0..k)];
        }
        if sum / k as f64 <= statistic {
            at_or_below += 1;
        }
    }
    Ok(EsTestResult {
        statistic,
        p: (at_or_below + 1) as f64 / (n_boot + 1) as f64,
        exceedances: k,
        resamples: n_boot,
        note: None,
    })
}

/// `Σ_t I_t (var_t − r_t)²`; zero without violations.
pub fn quadratic_loss(returns: &[f64], var_series: &[f64]) -> Result<f64> {
    check_len(returns.len(), var_series.len())?;
    Ok(returns
        .iter()
        .zip(var_series)
        .filter(|(r, v)| r < v)
        .fold(0.0, |acc, (r, v)| acc + (v - r).powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Green,
    Yellow,
    Red,
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Zone::Green => "green",
            Zone::Yellow => "yellow",
            Zone::Red => "red",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub zone: Zone,
    /// Smallest violation count in the yellow zone.
    pub yellow_from: usize,
    /// Smallest violation count in the red zone.
    pub red_from: usize,
}

/// Basel zones per 250 days (green 0–4, yellow 5–9, red 10+), with the
/// thresholds rescaled to `n` days and rounded to the nearest count.
pub fn traffic_light(x: usize, n: usize) -> Result<TrafficLight> {
    if n == 0 {
        return Err(Error::Domain("traffic light needs at least one day".into()));
    }
    let scale = n as f64 / 250.0;
    let yellow_from = ((5.0 * scale).round() as usize).max(1);
    let red_from = ((10.0 * scale).round() as usize).max(yellow_from + 1);
    let zone = if x >= red_from {
        Zone::Red
    } else if x >= yellow_from {
        Zone::Yellow
    } else {
        Zone::Green
    };
    Ok(TrafficLight {
        zone,
        yellow_from,
        red_from,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Rejected while the violation count sits below its expectation.
    ConservativeFail,
}

impl Verdict {
    fn from_p(p: f64, conservative: bool) -> Self {
        if p >= SIGNIFICANCE {
            Verdict::Pass
        } else if conservative {
            Verdict::ConservativeFail
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "Pass",
            Verdict::Fail => "Fail",
            Verdict::ConservativeFail => "Fail*",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub violations: ViolationRecord,
    pub kupiec: KupiecResult,
    pub christoffersen: ChristoffersenResult,
    pub es_test: EsTestResult,
    pub quadratic_loss: f64,
    pub traffic_light: TrafficLight,
    pub uc_verdict: Verdict,
    pub cc_verdict: Verdict,
    pub es_verdict: Verdict,
    /// Some test failed while `x < expected`.
    pub conservative_failure: bool,
}

/// Aligned inputs for a full backtest. `sigma` scales the ES residuals.
#[derive(Debug, Clone, Copy)]
pub struct BacktestInput<'a> {
    pub dates: &'a [NaiveDate],
    pub returns: &'a [f64],
    pub var: &'a [f64],
    pub es: &'a [f64],
    pub sigma: &'a [f64],
    pub alpha: f64,
}

pub fn evaluate(input: &BacktestInput<'_>, n_boot: usize, seed: u64) -> Result<BacktestReport> {
    let v = violations(input.returns, input.var, input.alpha)?.with_dates(input.dates)?;
    let kupiec = kupiec_uc(v.x, v.n, input.alpha)?;
    let christoffersen = christoffersen_cc(&v.hits, input.alpha)?;
    let es_test = mcneil_frey_es(
        input.returns,
        input.var,
        input.es,
        input.sigma,
        n_boot,
        seed,
    )?;
    let quadratic_loss = quadratic_loss(input.returns, input.var)?;
    let traffic_light = traffic_light(v.x, v.n)?;

    let below = (v.x as f64) < v.expected;
    let uc_verdict = Verdict::from_p(kupiec.p, below);
    let cc_verdict = Verdict::from_p(christoffersen.p, below);
    let es_verdict = Verdict::from_p(es_test.p, below);
    let any_fail = [uc_verdict, cc_verdict, es_verdict]
        .iter()
        .any(|v| !v.passed());
    Ok(BacktestReport {
        conservative_failure: any_fail && below,
        violations: v,
        kupiec,
        christoffersen,
        es_test,
        quadratic_loss,
        traffic_light,
        uc_verdict,
        cc_verdict,
        es_verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn isolated(n: usize, at: &[usize]) -> Vec<bool> {
        let mut h = vec![false; n];
        for &i in at {
            h[i] = true;
        }
        h
    }

    #[test]
    fn hit_rule_is_strict() {
        let v = violations(&[-3.0, 0.0, 1.0], &[-2.5; 3], 0.01).unwrap();
        assert_eq!(v.hits, vec![true, false, false]);
        assert_eq!(v.x, 1);
        let tie = violations(&[-2.5], &[-2.5], 0.01).unwrap();
        assert_eq!(tie.x, 0);
        let year = violations(&[0.0; 252], &[-1.0; 252], 0.01).unwrap();
        assert!((year.expected - 2.52).abs() < 1e-12);
    }

    #[test]
    fn violation_input_checks() {
        assert!(matches!(
            violations(&[0.0; 3], &[-1.0; 2], 0.01),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(violations(&[0.0], &[0.5], 0.01).is_err());
    }

    #[test]
    fn hit_dates_follow_hits() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let dates = [d("2024-01-02"), d("2024-01-03"), d("2024-01-04")];
        let v = violations(&[0.0, -5.0, -5.0], &[-1.0; 3], 0.01)
            .unwrap()
            .with_dates(&dates)
            .unwrap();
        assert_eq!(v.hit_dates, vec![dates[1], dates[2]]);
    }

    #[test]
    fn kupiec_reference_values() {
        // mpmath evaluations of the likelihood ratio and χ²(1) survival.
        let k0 = kupiec_uc(0, 252, 0.01).unwrap();
        assert!((k0.lr - 5.065_369_270_164_731).abs() < 1e-12);
        assert!((k0.p - 0.024_408_504_664_068_35).abs() < 1e-12);
        assert!((kupiec_uc(2, 252, 0.01).unwrap().p - 0.732_711_81).abs() < 1e-8);
        assert!((kupiec_uc(4, 252, 0.01).unwrap().p - 0.388_038_11).abs() < 1e-8);
    }

    #[test]
    fn kupiec_exact_rate_gives_zero_statistic() {
        let k = kupiec_uc(2, 200, 0.01).unwrap();
        assert_eq!(k.lr, 0.0);
        assert_eq!(k.p, 1.0);
        assert!(kupiec_uc(3, 2, 0.01).is_err());
    }

    #[test]
    fn christoffersen_reference_values() {
        let two = christoffersen_cc(&isolated(252, &[50, 200]), 0.01).unwrap();
        assert!((two.lr_uc - 0.116_636_22).abs() < 1e-8);
        assert!((two.lr_ind - 0.032_128_86).abs() < 1e-8);
        assert!((two.p - 0.928_316_51).abs() < 1e-8);

        let none = christoffersen_cc(&[false; 252], 0.01).unwrap();
        assert_eq!(none.lr_ind, 0.0);
        assert!((none.lr_cc - 5.065_369_270_164_731).abs() < 1e-12);
        assert!((none.p - 0.079_445_45).abs() < 1e-8);

        let four = christoffersen_cc(&isolated(252, &[30, 90, 150, 210]), 0.01).unwrap();
        assert!((four.lr_ind - 0.129_560_32).abs() < 1e-8);
        assert!((four.p - 0.645_764_34).abs() < 1e-8);
    }

    #[test]
    fn es_test_degenerate_cases() {
        let r = [0.0, 0.0, 0.0];
        let none = mcneil_frey_es(&r, &[-1.0; 3], &[-2.0; 3], &[1.0; 3], 1000, 1).unwrap();
        assert_eq!(none.p, 1.0);
        assert_eq!(none.exceedances, 0);
        assert!(none.note.as_deref().unwrap().contains("no exceedances"));

        let one_bad =
            mcneil_frey_es(&[-3.0, 0.0], &[-1.0; 2], &[-2.0; 2], &[1.0; 2], 1000, 1).unwrap();
        assert_eq!(one_bad.p, 0.5);
        let one_ok =
            mcneil_frey_es(&[-1.5, 0.0], &[-1.0; 2], &[-2.0; 2], &[1.0; 2], 1000, 1).unwrap();
        assert_eq!(one_ok.p, 1.0);
    }

    #[test]
    fn es_test_exact_and_strongly_violated() {
        // Residuals exactly zero: H0 holds, every resample ties the statistic.
        let r = vec![-2.0; 10];
        let exact = mcneil_frey_es(&r, &[-1.0; 10], &[-2.0; 10], &[1.0; 10], 10_000, 7).unwrap();
        assert_eq!(exact.p, 1.0);

        // Ten hits each three scales beyond ES.
        let r = vec![-5.0; 10];
        let bad = mcneil_frey_es(&r, &[-1.0; 10], &[-2.0; 10], &[1.0; 10], 10_000, 7).unwrap();
        assert!((bad.statistic + 3.0).abs() < 1e-15);
        assert!(bad.p < 0.01);
        assert_eq!(bad.p, 1.0 / 10_001.0);
    }

    #[test]
    fn es_test_is_seed_deterministic() {
        let r: Vec<f64> = (0..60)
            .map(|i| {
                if i % 6 == 0 {
                    -2.0 - 0.1 * i as f64
                } else {
                    0.5
                }
            })
            .collect();
        let var = vec![-1.5; 60];
        let es = vec![-2.5; 60];
        let sig = vec![1.0; 60];
        let a = mcneil_frey_es(&r, &var, &es, &sig, 2000, 11).unwrap();
        let b = mcneil_frey_es(&r, &var, &es, &sig, 2000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.p > 0.0 && a.p <= 1.0);
        assert!(mcneil_frey_es(&r, &var, &es, &sig, 999, 11).is_err());
    }

    #[test]
    fn quadratic_loss_cases() {
        let ql = quadratic_loss(&[0.0, 1.0], &[-2.0, -2.0]).unwrap();
        assert!(ql == 0.0 && ql.is_sign_positive());
        assert_eq!(quadratic_loss(&[-4.0, 0.0], &[-2.5, -2.5]).unwrap(), 2.25);
    }

    #[test]
    fn traffic_light_zones() {
        let z = |x| traffic_light(x, 252).unwrap().zone;
        assert_eq!(z(2), Zone::Green);
        assert_eq!(z(4), Zone::Green);
        assert_eq!(z(5), Zone::Yellow);
        assert_eq!(z(9), Zone::Yellow);
        assert_eq!(z(10), Zone::Red);
        let t = traffic_light(0, 250).unwrap();
        assert_eq!((t.yellow_from, t.red_from), (5, 10));
        let long = traffic_light(19, 1000).unwrap();
        assert_eq!(
            (long.yellow_from, long.red_from, long.zone),
            (20, 40, Zone::Green)
        );
        assert!(traffic_light(0, 0).is_err());
    }

    #[test]
    fn zero_violation_year_is_a_conservative_failure() {
        let n = 252;
        let dates: Vec<NaiveDate> = (0..n)
            .map(|i| {
                NaiveDate::from_ymd_opt(2023, 1, 1).unwrap() + chrono::Duration::days(i as i64)
            })
            .collect();
        let r = vec![0.0; n];
        let var = vec![-2.0; n];
        let es = vec![-2.6; n];
        let sig = vec![1.0; n];
        let rep = evaluate(
            &BacktestInput {
                dates: &dates,
                returns: &r,
                var: &var,
                es: &es,
                sigma: &sig,
                alpha: 0.01,
            },
            DEFAULT_BOOTSTRAP,
            0,
        )
        .unwrap();
        assert_eq!(rep.uc_verdict, Verdict::ConservativeFail);
        assert_eq!(rep.uc_verdict.label(), "Fail*");
        assert_eq!(rep.cc_verdict, Verdict::Pass);
        assert_eq!(rep.es_verdict, Verdict::Pass);
        assert!(rep.conservative_failure);
        assert_eq!(rep.quadratic_loss, 0.0);
        assert_eq!(rep.traffic_light.zone, Zone::Green);
    }

    proptest! {
        #[test]
        fn christoffersen_bounds(hits in prop::collection::vec(prop::bool::weighted(0.05), 2..400)) {
            let c = christoffersen_cc(&hits, 0.01).unwrap();
            prop_assert!(c.lr_ind >= 0.0);
            prop_assert!((0.0..=1.0).contains(&c.p));
            prop_assert!(c.p <= chi2_sf(c.lr_uc, 2) + 1e-15);
            let k = kupiec_uc(hits.iter().filter(|h| **h).count(), hits.len(), 0.01).unwrap();
            prop_assert!((0.0..=1.0).contains(&k.p));
        }

        #[test]
        fn quadratic_loss_matches_loop_and_is_shift_invariant(
            pairs in prop::collection::vec((-5.0f64..5.0, -4.0f64..-0.1), 1..200),
            shift in -3.0f64..3.0,
        ) {
            let (r, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mut brute = 0.0;
            for t in 0..r.len() {
                if r[t] < v[t] {
                    brute += (v[t] - r[t]) * (v[t] - r[t]);
                }
            }
            let ql = quadratic_loss(&r, &v).unwrap();
            prop_assert_eq!(ql, brute);
            let rs: Vec<f64> = r.iter().map(|x| x + shift).collect();
            let vs: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let mut hits_agree = true;
            for t in 0..r.len() {
                hits_agree &= (r[t] < v[t]) == (rs[t] < vs[t]);
            }
            prop_assume!(hits_agree);
            let shifted = quadratic_loss(&rs, &vs).unwrap();
            prop_assert!((shifted - ql).abs() <= 1e-9 * (1.0 + ql));
        }

        #[test]
        fn es_p_value_in_unit_interval(
            r in prop::collection::vec(-6.0f64..2.0, 20..120),
            seed in any::<u64>(),
        ) {
            let n = r.len();
            let t = mcneil_frey_es(&r, &vec![-1.0; n], &vec![-2.0; n], &vec![1.0; n], 1000, seed).unwrap();
            prop_assert!(t.p > 0.0 && t.p <= 1.0);
        }
    }
}
