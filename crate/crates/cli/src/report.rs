//! Tables, per-model dumps and the markdown summary for a finished run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use vcvforge::backtests::{BacktestReport, Verdict};
use vcvforge::pipeline::{compare_models, mean_forecasts, SplitResult};

use crate::config::{Format, RunConfig};
use crate::plot::SeriesRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn raw(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// How a column is shown in `report.md`; files always carry full precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Plain,
    PValue,
    Percent,
    Lml,
    Loss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: &'static str,
    pub style: Style,
}

const fn col(name: &'static str, style: Style) -> Column {
    Column { name, style }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub title: &'static str,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::raw))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "table": self.name,
            "title": self.title,
            "columns": self.columns.iter().map(|c| c.name).collect::<Vec<_>>(),
            "rows": self.rows,
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| {} |",
            self.columns
                .iter()
                .map(|c| c.name)
                .collect::<Vec<_>>()
                .join(" | ")
        );
        let _ = writeln!(s, "|{}", "---|".repeat(self.columns.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&self.columns)
                .map(|(c, k)| human(c, k.style))
                .collect();
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        s
    }
}

fn human(cell: &Cell, style: Style) -> String {
    match (cell, style) {
        (Cell::Num(v), Style::PValue) => format!("{v:.4}"),
        (Cell::Num(v), Style::Percent) => format!("{v:.2}%"),
        (Cell::Num(v), Style::Lml) => format!("{v:.2}"),
        (Cell::Num(v), Style::Loss) => format!("{v:.3}"),
        (Cell::Num(v), Style::Plain) => format!("{v}"),
        (other, _) => other.raw(),
    }
}

fn pass_pct(reports: &[&BacktestReport], verdict: impl Fn(&BacktestReport) -> Verdict) -> f64 {
    let n = reports.len().max(1) as f64;
    100.0 * reports.iter().filter(|r| verdict(r).passed()).count() as f64 / n
}

/// `Pass` when every test passes, `Conditional Pass` when all failures are
/// conservative, `Fail` otherwise.
pub fn overall(r: &BacktestReport) -> &'static str {
    let verdicts = [r.uc_verdict, r.cc_verdict, r.es_verdict];
    if verdicts.iter().all(|v| v.passed()) {
        "Pass"
    } else if verdicts.iter().all(|v| *v != Verdict::Fail) {
        "Conditional Pass"
    } else {
        "Fail"
    }
}

fn insight(reports: &[&BacktestReport]) -> String {
    let mut parts = Vec::new();
    for (label, verdict) in [
        (
            "UC",
            (|r: &BacktestReport| r.uc_verdict) as fn(&BacktestReport) -> Verdict,
        ),
        ("CC", |r| r.cc_verdict),
        ("ES", |r| r.es_verdict),
    ] {
        let failed = reports.iter().filter(|r| !verdict(r).passed()).count();
        let conservative = reports
            .iter()
            .filter(|r| verdict(r) == Verdict::ConservativeFail)
            .count();
        if failed > 0 {
            parts.push(format!(
                "{label} fails in {failed} split(s), {conservative} conservative"
            ));
        }
    }
    if parts.is_empty() {
        "all tests pass".into()
    } else {
        parts.join("; ")
    }
}

pub fn build_tables(results: &[SplitResult]) -> Vec<Table> {
    let mut t1 = Table {
        name: "table1_lml",
        title: "GP log-marginal likelihood per asset and split",
        columns: vec![
            col("asset", Style::Plain),
            col("split", Style::Plain),
            col("test_year", Style::Plain),
            col("train_days", Style::Plain),
            col("lml", Style::Lml),
            col("converged", Style::Plain),
        ],
        rows: Vec::new(),
    };
    let n_assets = results.first().map_or(0, |r| r.assets.len());
    for a in 0..n_assets {
        for r in results {
            let fit = &r.assets[a].fit;
            t1.rows.push(vec![
                fit.asset.as_str().into(),
                r.split_id().into(),
                r.plan.label().into(),
                fit.train_len.into(),
                fit.lml.into(),
                (if fit.trace.converged { "yes" } else { "no" }).into(),
            ]);
        }
    }

    let mut t2 = Table {
        name: "table2_univariate_summary",
        title: "Per-asset GP backtest pass rates across splits",
        columns: vec![
            col("asset", Style::Plain),
            col("splits", Style::Plain),
            col("uc_pass_pct", Style::Percent),
            col("cc_pass_pct", Style::Percent),
            col("es_pass_pct", Style::Percent),
            col("violations", Style::Plain),
            col("expected", Style::Loss),
            col("insight", Style::Plain),
        ],
        rows: Vec::new(),
    };
    for a in 0..n_assets {
        let reports: Vec<&BacktestReport> = results.iter().map(|r| &r.assets[a].gp).collect();
        t2.rows.push(vec![
            results[0].assets[a].asset.as_str().into(),
            reports.len().into(),
            pass_pct(&reports, |r| r.uc_verdict).into(),
            pass_pct(&reports, |r| r.cc_verdict).into(),
            pass_pct(&reports, |r| r.es_verdict).into(),
            reports.iter().map(|r| r.violations.x).sum::<usize>().into(),
            reports
                .iter()
                .map(|r| r.violations.expected)
                .sum::<f64>()
                .into(),
            insight(&reports).into(),
        ]);
    }

    let mut t3 = Table {
        name: "table3_portfolio_tests",
        title:
            "Portfolio backtests per split (* conservative failure: fewer violations than expected)",
        columns: vec![
            col("split", Style::Plain),
            col("test_year", Style::Plain),
            col("n", Style::Plain),
            col("violations", Style::Plain),
            col("expected", Style::Loss),
            col("uc_p", Style::PValue),
            col("uc", Style::Plain),
            col("cc_p", Style::PValue),
            col("cc", Style::Plain),
            col("es_p", Style::PValue),
            col("es", Style::Plain),
            col("zone", Style::Plain),
            col("result", Style::Plain),
        ],
        rows: Vec::new(),
    };
    for r in results {
        let p = &r.portfolio_gp;
        t3.rows.push(vec![
            r.split_id().into(),
            r.plan.label().into(),
            p.violations.n.into(),
            p.violations.x.into(),
            p.violations.expected.into(),
            p.kupiec.p.into(),
            p.uc_verdict.label().into(),
            p.christoffersen.p.into(),
            p.cc_verdict.label().into(),
            p.es_test.p.into(),
            p.es_verdict.label().into(),
            p.traffic_light.zone.to_string().into(),
            overall(p).into(),
        ]);
    }

    let summary = compare_models(results);
    let mut t4 = Table {
        name: "table4_superiority",
        title: "Assets where the GP model beats the historical benchmark",
        columns: vec![
            col("split", Style::Plain),
            col("test_year", Style::Plain),
            col("assets", Style::Plain),
            col("ql_superior", Style::Plain),
            col("violations_superior_or_tied", Style::Plain),
        ],
        rows: Vec::new(),
    };
    for row in &summary.rows {
        t4.rows.push(vec![
            row.split_id.to_string().into(),
            row.label.as_str().into(),
            row.n_assets.into(),
            row.ql_superior.into(),
            row.safety_superior_or_tied.into(),
        ]);
    }
    if summary.rows.len() > 1 {
        t4.rows.push(vec![
            "total".into(),
            "".into(),
            summary.total_cases.into(),
            summary.total_ql_superior.into(),
            summary.total_safety.into(),
        ]);
    }

    let mut t5 = Table {
        name: "table5_loss_comparison",
        title: "Portfolio quadratic loss and violations: historical benchmark vs GP",
        columns: vec![
            col("split", Style::Plain),
            col("test_year", Style::Plain),
            col("hvar_ql", Style::Loss),
            col("hvar_violations", Style::Plain),
            col("hvar_zone", Style::Plain),
            col("gpr_ql", Style::Loss),
            col("gpr_violations", Style::Plain),
            col("gpr_zone", Style::Plain),
        ],
        rows: Vec::new(),
    };
    for r in results {
        let (h, g) = (&r.portfolio_hvar, &r.portfolio_gp);
        t5.rows.push(vec![
            r.split_id().into(),
            r.plan.label().into(),
            h.quadratic_loss.into(),
            h.violations.x.into(),
            h.traffic_light.zone.to_string().into(),
            g.quadratic_loss.into(),
            g.violations.x.into(),
            g.traffic_light.zone.to_string().into(),
        ]);
    }

    let mut t6 = Table {
        name: "table6_mean_forecasts",
        title: "Mean portfolio VaR and ES forecasts per split",
        columns: vec![
            col("split", Style::Plain),
            col("test_year", Style::Plain),
            col("mean_var", Style::Percent),
            col("mean_es", Style::Percent),
        ],
        rows: Vec::new(),
    };
    let means: Vec<(f64, f64)> = results.iter().map(mean_forecasts).collect();
    for (r, (v, e)) in results.iter().zip(&means) {
        t6.rows.push(vec![
            r.split_id().to_string().into(),
            r.plan.label().into(),
            (*v).into(),
            (*e).into(),
        ]);
    }
    if means.len() > 1 {
        let k = means.len() as f64;
        t6.rows.push(vec![
            "mean".into(),
            "".into(),
            (means.iter().map(|m| m.0).sum::<f64>() / k).into(),
            (means.iter().map(|m| m.1).sum::<f64>() / k).into(),
        ]);
    }

    vec![t1, t2, t3, t4, t5, t6]
}

pub fn series_rows(r: &SplitResult) -> Vec<SeriesRow> {
    let s = &r.series;
    let hits = &r.portfolio_gp.violations.hits;
    (0..s.dates.len())
        .map(|t| SeriesRow {
            date: s.dates[t],
            ret: s.returns[t],
            var: s.var[t],
            es: s.es[t],
            hvar_var: s.hvar_var,
            hit: u8::from(hits[t]),
        })
        .collect()
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Fixed conventions worth stating next to the numbers.
pub const CONVENTIONS: &[&str] = &[
    "A split with no violations has no exceedance residuals, so its ES test reports p = 1 with a note instead of a computed statistic.",
    "Quadratic loss sums only over violation days; a violation-free split scores exactly 0 with no fixed penalty.",
    "Traffic-light zones use green 0-4, yellow 5-9 and red 10+ violations per 250 days, rescaled to the split length and rounded. Four violations in a year is green.",
    "A failure marked * is conservative: the model produced fewer violations than expected.",
];

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub parallel: bool,
    pub assets: Vec<String>,
    pub splits_completed: Vec<usize>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub load_secs: f64,
    pub pipeline_secs: f64,
}

/// Writes tables, model dumps, series, plots, `run.json` and `report.md`.
pub fn write_outputs(
    out: &Path,
    cfg: &RunConfig,
    results: &[SplitResult],
    meta: &mut RunMetadata,
    timings: &Timings,
) -> std::io::Result<()> {
    let tables = build_tables(results);
    fs::create_dir_all(out.join("tables"))?;
    for t in &tables {
        if cfg.writes(Format::Csv) {
            fs::write(
                out.join("tables").join(format!("{}.csv", t.name)),
                t.to_csv().map_err(std::io::Error::other)?,
            )?;
        }
        if cfg.writes(Format::Json) {
            let text = serde_json::to_string_pretty(&t.to_json())?;
            fs::write(
                out.join("tables").join(format!("{}.json", t.name)),
                text + "\n",
            )?;
        }
    }

    fs::create_dir_all(out.join("models"))?;
    fs::create_dir_all(out.join("series"))?;
    for r in results {
        for a in &r.assets {
            let path = out.join("models").join(format!(
                "{}_split{}.json",
                file_safe(&a.asset),
                r.split_id()
            ));
            fs::write(path, serde_json::to_string_pretty(&a.fit)? + "\n")?;
        }
        let path = out
            .join("series")
            .join(format!("split{}.csv", r.split_id()));
        crate::plot::write_series(&path, &series_rows(r)).map_err(std::io::Error::other)?;
    }
    if let Err(e) = crate::plot::emit_plots(out) {
        log::warn!("plotting failed: {e}");
    }

    meta.warnings.extend(crate::logging::take_warnings());
    let run = json!({ "metadata": meta, "config": cfg, "timings": timings });
    fs::write(
        out.join("run.json"),
        serde_json::to_string_pretty(&run)? + "\n",
    )?;
    fs::write(
        out.join("report.md"),
        render_markdown(cfg, &tables, meta, timings),
    )?;
    Ok(())
}

fn setting_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

pub fn render_markdown(
    cfg: &RunConfig,
    tables: &[Table],
    meta: &RunMetadata,
    timings: &Timings,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vcv-forge run report\n");
    let _ = writeln!(s, "- config hash: `{}`", meta.config_hash);
    let _ = writeln!(s, "- seed: {}", meta.seed);
    let _ = writeln!(s, "- assets: {}", meta.assets.join(", "));
    let _ = writeln!(
        s,
        "- confidence {:.2}%, nu = {}, assembly `{}`, refit `{}`, t scaling `{}`, noise in forecast: {}",
        cfg.alpha * 100.0,
        cfg.nu,
        setting_name(&cfg.mode),
        setting_name(&cfg.refit),
        setting_name(&cfg.t_scaling),
        cfg.include_noise_in_forecast
    );
    let _ = writeln!(
        s,
        "- splits completed: {} of {}",
        meta.splits_completed.len(),
        cfg.n_splits
    );
    let _ = writeln!(
        s,
        "- timings: load {:.2}s, pipeline {:.2}s ({})",
        timings.load_secs,
        timings.pipeline_secs,
        if meta.parallel {
            "parallel"
        } else {
            "sequential"
        }
    );
    if !meta.failures.is_empty() {
        let _ = writeln!(s, "\n## Failures\n");
        for f in &meta.failures {
            let _ = writeln!(s, "- {f}");
        }
    }
    for t in tables {
        let _ = writeln!(s, "\n## {}\n\n{}\n", t.name, t.title);
        s.push_str(&t.to_markdown());
    }
    let _ = writeln!(s, "\n## Warnings\n");
    if meta.warnings.is_empty() {
        let _ = writeln!(s, "None.");
    }
    for w in &meta.warnings {
        let _ = writeln!(s, "- {w}");
    }
    let _ = writeln!(s, "\n## Notes\n");
    for n in &meta.notes {
        let _ = writeln!(s, "- {n}");
    }
    s
}
