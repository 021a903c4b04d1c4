//! Forward-chaining expanding-window evaluation of the hybrid GP model
//! against the historical-simulation benchmark.

use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::backtests::{evaluate, BacktestInput, BacktestReport, DEFAULT_BOOTSTRAP};
use crate::error::{Error, Result};
use crate::gpr::{fit, FitConfig, HyperBounds, OptimizerTrace};
use crate::hybrid_vcv::{forecast_date, historical_cov, AssemblyMode, PortfolioWeights};
use crate::kernels::KernelHyperparams;
use crate::market_data::ReturnPanel;
use crate::par;
use crate::risk_measures::{
    historical_var_es, portfolio_series, t_var_es, QuantileRule, TScaling, MIN_HISTORY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// Equal blocks counted back from the end of the panel.
    #[default]
    FixedBlocks,
    /// The last `n_splits` calendar years present in the panel.
    CalendarYears,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refit {
    /// One fit per split on the split's training window.
    #[default]
    Split,
    /// Refit before every test day on all returns up to the previous day.
    Daily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split_id: usize,
    /// Row indices into the return panel.
    pub train: Range<usize>,
    pub test: Range<usize>,
    pub train_range: (NaiveDate, NaiveDate),
    pub test_range: (NaiveDate, NaiveDate),
    pub n_test: usize,
}

impl SplitPlan {
    /// Calendar year of the first test date.
    pub fn label(&self) -> String {
        self.test_range.0.year().to_string()
    }
}

fn make_plan(
    dates: &[NaiveDate],
    split_id: usize,
    train: Range<usize>,
    test: Range<usize>,
) -> SplitPlan {
    SplitPlan {
        split_id,
        train_range: (dates[train.start], dates[train.end - 1]),
        test_range: (dates[test.start], dates[test.end - 1]),
        n_test: test.len(),
        train,
        test,
    }
}

fn check_plans(plans: &[SplitPlan]) {
    for p in plans {
        assert!(
            p.train_range.1 < p.test_range.0,
            "split {} looks ahead",
            p.split_id
        );
        assert_eq!(p.train.end, p.test.start);
    }
    for w in plans.windows(2) {
        assert!(w[0].train.end < w[1].train.end && w[0].test.end <= w[1].test.start);
    }
}

/// Partitions the last `n_splits · test_block_days` rows into consecutive
/// test blocks; split `k` trains on every row before block `k`.
pub fn plan_splits(
    dates: &[NaiveDate],
    n_splits: usize,
    test_block_days: usize,
) -> Result<Vec<SplitPlan>> {
    if n_splits == 0 || test_block_days == 0 {
        return Err(Error::Config(
            "n_splits and test_block_days must be positive".into(),
        ));
    }
    let tested = n_splits * test_block_days;
    let required = tested + MIN_HISTORY;
    if dates.len() < required {
        return Err(Error::InsufficientData {
            required,
            available: dates.len(),
        });
    }
    let first_test = dates.len() - tested;
    let plans: Vec<SplitPlan> = (0..n_splits)
        .map(|k| {
            let start = first_test + k * test_block_days;
            make_plan(dates, k, 0..start, start..start + test_block_days)
        })
        .collect();
    check_plans(&plans);
    Ok(plans)
}

/// One split per calendar year for the last `n_splits` years in `dates`.
pub fn plan_calendar_years(dates: &[NaiveDate], n_splits: usize) -> Result<Vec<SplitPlan>> {
    if n_splits == 0 {
        return Err(Error::Config("n_splits must be positive".into()));
    }
    let mut starts: Vec<usize> = Vec::new();
    for (i, d) in dates.iter().enumerate() {
        if i == 0 || d.year() != dates[i - 1].year() {
            starts.push(i);
        }
    }
    if starts.len() < n_splits + 1 {
        return Err(Error::InsufficientData {
            required: n_splits + 1,
            available: starts.len(),
        });
    }
    let first = starts.len() - n_splits;
    if starts[first] < MIN_HISTORY {
        return Err(Error::InsufficientData {
            required: MIN_HISTORY,
            available: starts[first],
        });
    }
    let plans: Vec<SplitPlan> = (0..n_splits)
        .map(|k| {
            let start = starts[first + k];
            let end = starts.get(first + k + 1).copied().unwrap_or(dates.len());
            make_plan(dates, k, 0..start, start..end)
        })
        .collect();
    check_plans(&plans);
    Ok(plans)
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Tail probability α.
    pub alpha: f64,
    pub nu: f64,
    /// `None` means equal weights.
    pub weights: Option<PortfolioWeights>,
    pub n_splits: usize,
    pub test_block_days: usize,
    pub scheme: SplitScheme,
    pub mode: AssemblyMode,
    pub refit: Refit,
    pub t_scaling: TScaling,
    pub include_noise: bool,
    pub quantile_rule: QuantileRule,
    pub n_boot: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alpha: 0.01,
            nu: 5.0,
            weights: None,
            n_splits: 4,
            test_block_days: 252,
            scheme: SplitScheme::FixedBlocks,
            mode: AssemblyMode::Literal,
            refit: Refit::Split,
            t_scaling: TScaling::Variance,
            include_noise: true,
            quantile_rule: QuantileRule::Linear,
            n_boot: DEFAULT_BOOTSTRAP,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn plan(&self, panel: &ReturnPanel) -> Result<Vec<SplitPlan>> {
        match self.scheme {
            SplitScheme::FixedBlocks => {
                plan_splits(&panel.dates, self.n_splits, self.test_block_days)
            }
            SplitScheme::CalendarYears => plan_calendar_years(&panel.dates, self.n_splits),
        }
    }

    fn weights_for(&self, n: usize) -> Result<PortfolioWeights> {
        match &self.weights {
            None => Ok(PortfolioWeights::equal(n)),
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => Err(Error::LengthMismatch {
                left: w.len(),
                right: n,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Fit = 1,
    AssetGpBootstrap = 2,
    AssetHvarBootstrap = 3,
    PortfolioGpBootstrap = 4,
    PortfolioHvarBootstrap = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for one `(split, purpose, index)` so results do not depend
/// on execution order.
fn derive_seed(master: u64, split: usize, purpose: Purpose, index: usize) -> u64 {
    [split as u64, purpose as u64, index as u64]
        .iter()
        .fold(splitmix(master), |acc, part| splitmix(acc ^ part))
}

/// Day ordinals relative to `origin`.
pub fn ordinals(dates: &[NaiveDate], origin: NaiveDate) -> Vec<f64> {
    dates
        .iter()
        .map(|d| (*d - origin).num_days() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetFit {
    pub asset: String,
    pub split_id: usize,
    pub train_len: usize,
    pub params: KernelHyperparams,
    pub bounds: HyperBounds,
    pub lml: f64,
    pub jitter_applied: f64,
    pub trace: OptimizerTrace,
    /// Fits after the first one under daily refitting.
    pub daily_refits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetResult {
    pub asset: String,
    pub fit: AssetFit,
    /// GP predictive variance per test date.
    pub variance: Vec<f64>,
    pub gp_var: Vec<f64>,
    pub gp_es: Vec<f64>,
    pub gp: BacktestReport,
    pub hvar_var: f64,
    pub hvar_es: f64,
    pub hvar: BacktestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSeries {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    pub sigma: Vec<f64>,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
    pub hvar_var: f64,
    pub hvar_es: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepairStats {
    pub repaired_days: usize,
    pub max_shift: f64,
    pub max_diag_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub plan: SplitPlan,
    pub assets: Vec<AssetResult>,
    pub portfolio_gp: BacktestReport,
    pub portfolio_hvar: BacktestReport,
    pub series: PortfolioSeries,
    pub mean_var: f64,
    pub mean_es: f64,
    pub repairs: RepairStats,
    pub warnings: Vec<String>,
}

impl SplitResult {
    pub fn split_id(&self) -> usize {
        self.plan.split_id
    }
}

struct GpForecast {
    fit: AssetFit,
    variance: Vec<f64>,
}

fn assert_no_look_ahead(train: &[NaiveDate], test: &[NaiveDate]) -> Result<()> {
    match (train.last(), test.first()) {
        (Some(a), Some(b)) if a < b => Ok(()),
        _ => Err(Error::Domain(
            "training window overlaps the test window".into(),
        )),
    }
}

fn asset_fit(
    asset: &str,
    split_id: usize,
    model: &crate::gpr::GprModel,
    daily_refits: usize,
) -> AssetFit {
    AssetFit {
        asset: asset.to_string(),
        split_id,
        train_len: model.xs_train.len(),
        params: model.params,
        bounds: model.bounds,
        lml: model.lml,
        jitter_applied: model.jitter_applied,
        trace: model.trace.clone(),
        daily_refits,
    }
}

fn forecast_asset(
    panel: &ReturnPanel,
    plan: &SplitPlan,
    asset: usize,
    cfg: &PipelineConfig,
) -> Result<GpForecast> {
    let y_all = panel.column(asset);
    let origin = panel.dates[plan.train.start];
    let xs_all = ordinals(&panel.dates, origin);
    let fit_cfg = |day: usize| FitConfig {
        seed: derive_seed(cfg.seed, plan.split_id, Purpose::Fit, asset * 100_000 + day),
        ..cfg.fit
    };
    let fit_until = |end: usize, day: usize| {
        assert_no_look_ahead(
            &panel.dates[plan.train.start..end],
            &panel.dates[end..end + 1],
        )?;
        fit(
            &xs_all[plan.train.start..end],
            &y_all[plan.train.start..end],
            &fit_cfg(day),
        )
    };

    let model = fit_until(plan.train.end, 0)?;
    match cfg.refit {
        Refit::Split => {
            assert_no_look_ahead(
                &panel.dates[plan.train.clone()],
                &panel.dates[plan.test.clone()],
            )?;
            let variance = model
                .predict_variance(&xs_all[plan.test.clone()], cfg.include_noise)
                .variance;
            Ok(GpForecast {
                fit: asset_fit(&panel.asset_ids[asset], plan.split_id, &model, 0),
                variance,
            })
        }
        Refit::Daily => {
            let mut variance = Vec::with_capacity(plan.n_test);
            variance.push(
                model
                    .predict_variance(
                        &xs_all[plan.test.start..plan.test.start + 1],
                        cfg.include_noise,
                    )
                    .variance[0],
            );
            for (day, t) in plan.test.clone().enumerate().skip(1) {
                let m = fit_until(t, day)?;
                variance.push(
                    m.predict_variance(&xs_all[t..t + 1], cfg.include_noise)
                        .variance[0],
                );
            }
            Ok(GpForecast {
                fit: asset_fit(
                    &panel.asset_ids[asset],
                    plan.split_id,
                    &model,
                    plan.n_test - 1,
                ),
                variance,
            })
        }
    }
}

fn sample_stdev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

struct Benchmark {
    var: f64,
    es: f64,
    report: BacktestReport,
    warning: Option<String>,
}

fn benchmark(
    train: &[f64],
    test: &[f64],
    dates: &[NaiveDate],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Benchmark> {
    let h = historical_var_es(train, cfg.alpha, cfg.quantile_rule)?;
    let n = test.len();
    let (var, es, sigma) = (vec![h.var; n], vec![h.es; n], vec![sample_stdev(train); n]);
    let report = evaluate(
        &BacktestInput {
            dates,
            returns: test,
            var: &var,
            es: &es,
            sigma: &sigma,
            alpha: cfg.alpha,
        },
        cfg.n_boot,
        seed,
    )?;
    Ok(Benchmark {
        var: h.var,
        es: h.es,
        report,
        warning: h.warning,
    })
}

fn t_series(variance: &[f64], cfg: &PipelineConfig) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut sigma = Vec::with_capacity(variance.len());
    let mut var = Vec::with_capacity(variance.len());
    let mut es = Vec::with_capacity(variance.len());
    for v in variance {
        let s = v.sqrt();
        let (a, b) = t_var_es(s, cfg.alpha, cfg.nu, cfg.t_scaling)?;
        sigma.push(s);
        var.push(a);
        es.push(b);
    }
    Ok((sigma, var, es))
}

fn evaluate_asset(
    panel: &ReturnPanel,
    plan: &SplitPlan,
    asset: usize,
    forecast: GpForecast,
    cfg: &PipelineConfig,
    warnings: &mut Vec<String>,
) -> Result<AssetResult> {
    let column = panel.column(asset);
    let test = &column[plan.test.clone()];
    let dates = &panel.dates[plan.test.clone()];
    let (sigma, gp_var, gp_es) = t_series(&forecast.variance, cfg)?;
    let gp = evaluate(
        &BacktestInput {
            dates,
            returns: test,
            var: &gp_var,
            es: &gp_es,
            sigma: &sigma,
            alpha: cfg.alpha,
        },
        cfg.n_boot,
        derive_seed(cfg.seed, plan.split_id, Purpose::AssetGpBootstrap, asset),
    )?;
    let seed = derive_seed(cfg.seed, plan.split_id, Purpose::AssetHvarBootstrap, asset);
    let bench = benchmark(&column[plan.train.clone()], test, dates, cfg, seed)?;
    if let Some(w) = bench.warning {
        warnings.push(format!(
            "split {} {}: {w}",
            plan.split_id, panel.asset_ids[asset]
        ));
    }
    Ok(AssetResult {
        asset: panel.asset_ids[asset].clone(),
        fit: forecast.fit,
        variance: forecast.variance,
        gp_var,
        gp_es,
        gp,
        hvar_var: bench.var,
        hvar_es: bench.es,
        hvar: bench.report,
    })
}

/// Fits, forecasts and backtests one split for every asset and the portfolio.
pub fn run_split(
    plan: &SplitPlan,
    panel: &ReturnPanel,
    cfg: &PipelineConfig,
) -> Result<SplitResult> {
    let n_assets = panel.n_assets();
    let weights = cfg.weights_for(n_assets)?;
    let split = plan.split_id;
    info!(
        "split {split}: train {}..{} ({} days), test {}..{} ({} days)",
        plan.train_range.0,
        plan.train_range.1,
        plan.train.len(),
        plan.test_range.0,
        plan.test_range.1,
        plan.n_test
    );

    let forecasts = par::map_range(n_assets, |i| {
        forecast_asset(panel, plan, i, cfg)
            .map_err(|e| e.in_split(split, panel.asset_ids[i].clone()))
    });
    let mut warnings = Vec::new();
    let mut assets = Vec::with_capacity(n_assets);
    for (i, f) in forecasts.into_iter().enumerate() {
        let f = f?;
        let id = &panel.asset_ids[i];
        if !f.fit.trace.converged {
            warnings.push(format!(
                "split {split} {id}: optimiser stopped without converging ({:?})",
                f.fit.trace.termination
            ));
        }
        if f.fit.jitter_applied > 0.0 {
            warnings.push(format!(
                "split {split} {id}: gram matrix needed jitter {:.1e}",
                f.fit.jitter_applied
            ));
        }
        let r = evaluate_asset(panel, plan, i, f, cfg, &mut warnings)
            .map_err(|e| e.in_split(split, id.clone()))?;
        assets.push(r);
    }

    let in_portfolio = |e: Error| e.in_split(split, "portfolio");
    let train_rows = &panel.returns[plan.train.clone()];
    let mut hist = historical_cov(train_rows).map_err(in_portfolio)?;
    hist.window = Some(plan.train_range);
    let dates = panel.dates[plan.test.clone()].to_vec();
    let mut repairs = RepairStats::default();
    let mut port_var = Vec::with_capacity(plan.n_test);
    for (k, date) in dates.iter().enumerate() {
        let gp_vars: Vec<f64> = assets.iter().map(|a| a.variance[k]).collect();
        let f = forecast_date(*date, &hist, &gp_vars, cfg.mode, &weights).map_err(in_portfolio)?;
        if f.repaired {
            repairs.repaired_days += 1;
            repairs.max_shift = repairs.max_shift.max(f.shift);
            repairs.max_diag_deviation = repairs.max_diag_deviation.max(f.max_diag_deviation);
        }
        port_var.push(f.portfolio_variance);
    }
    if repairs.repaired_days > 0 {
        warnings.push(format!(
            "split {split}: covariance repaired on {} of {} days (max eigenvalue shift {:.3e}, max diagonal change {:.3e})",
            repairs.repaired_days, plan.n_test, repairs.max_shift, repairs.max_diag_deviation
        ));
    }

    let returns =
        portfolio_series(&panel.returns[plan.test.clone()], &weights).map_err(in_portfolio)?;
    let (sigma, var, es) = t_series(&port_var, cfg).map_err(in_portfolio)?;
    let portfolio_gp = evaluate(
        &BacktestInput {
            dates: &dates,
            returns: &returns,
            var: &var,
            es: &es,
            sigma: &sigma,
            alpha: cfg.alpha,
        },
        cfg.n_boot,
        derive_seed(cfg.seed, split, Purpose::PortfolioGpBootstrap, 0),
    )
    .map_err(in_portfolio)?;
    let train_port = portfolio_series(train_rows, &weights).map_err(in_portfolio)?;
    let seed = derive_seed(cfg.seed, split, Purpose::PortfolioHvarBootstrap, 0);
    let bench = benchmark(&train_port, &returns, &dates, cfg, seed).map_err(in_portfolio)?;
    if let Some(w) = bench.warning {
        warnings.push(format!("split {split} portfolio: {w}"));
    }
    for w in &warnings {
        warn!("{w}");
    }

    let (mean_var, mean_es) = (mean(&var), mean(&es));
    Ok(SplitResult {
        plan: plan.clone(),
        assets,
        portfolio_gp,
        portfolio_hvar: bench.report,
        series: PortfolioSeries {
            dates,
            returns,
            sigma,
            var,
            es,
            hvar_var: bench.var,
            hvar_es: bench.es,
        },
        mean_var,
        mean_es,
        repairs,
        warnings,
    })
}

/// Runs every split; a failed split does not stop the others.
pub fn run_all(
    panel: &ReturnPanel,
    plans: &[SplitPlan],
    cfg: &PipelineConfig,
) -> Vec<Result<SplitResult>> {
    par::map(plans, |p| run_split(p, panel, cfg))
}

/// `(mean VaR, mean ES)` of the portfolio forecasts over the test dates.
pub fn mean_forecasts(result: &SplitResult) -> (f64, f64) {
    (mean(&result.series.var), mean(&result.series.es))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub split_id: usize,
    pub label: String,
    pub n_assets: usize,
    /// Assets with strictly lower GP quadratic loss.
    pub ql_superior: usize,
    /// Assets with GP violations no more than the benchmark's.
    pub safety_superior_or_tied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub rows: Vec<ComparisonRow>,
    pub total_cases: usize,
    pub total_ql_superior: usize,
    pub total_safety: usize,
}

pub fn compare_models(results: &[SplitResult]) -> ComparisonSummary {
    let rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            split_id: r.split_id(),
            label: r.plan.label(),
            n_assets: r.assets.len(),
            ql_superior: r
                .assets
                .iter()
                .filter(|a| a.gp.quadratic_loss < a.hvar.quadratic_loss)
                .count(),
            safety_superior_or_tied: r
                .assets
                .iter()
                .filter(|a| a.gp.violations.x <= a.hvar.violations.x)
                .count(),
        })
        .collect();
    ComparisonSummary {
        total_cases: rows.iter().map(|r| r.n_assets).sum(),
        total_ql_superior: rows.iter().map(|r| r.ql_superior).sum(),
        total_safety: rows.iter().map(|r| r.safety_superior_or_tied).sum(),
        rows,
    }
}
