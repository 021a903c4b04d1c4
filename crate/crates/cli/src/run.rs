//! The `run` command: load, evaluate every split, write outputs.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use log::{error, info};

use vcvforge::market_data::load_return_panel;
use vcvforge::par;
use vcvforge::pipeline::{run_all, SplitResult};

use crate::config::RunConfig;
use crate::logging;
use crate::report::{write_outputs, RunMetadata, Timings, CONVENTIONS};

pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot prepare output directory {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] vcvforge::Error),
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub results: Vec<SplitResult>,
    pub failures: Vec<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn output_error(path: PathBuf) -> impl FnOnce(std::io::Error) -> RunError {
    move |source| RunError::Output { path, source }
}

fn write_failed(out: &std::path::Path, failures: &[String]) -> Result<(), RunError> {
    let path = out.join(FAILED_MARKER);
    fs::write(&path, failures.join("\n") + "\n").map_err(output_error(path))
}

/// Runs the whole evaluation. Split failures are reported in the outcome
/// and the `FAILED` marker; errors before any split runs are returned.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(output_error(out.clone()))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(output_error(marker.clone()))?;
    }
    logging::attach_file(&out.join("run.log")).map_err(output_error(out.join("run.log")))?;
    let result = execute_inner(cfg, &out);
    if let Err(e) = &result {
        error!("{e}");
        let _ = write_failed(&out, &[e.to_string()]);
    }
    logging::detach_file();
    result
}

fn execute_inner(cfg: &RunConfig, out: &std::path::Path) -> Result<RunOutcome, RunError> {
    info!("config hash {} seed {}", cfg.hash(), cfg.seed);
    let t0 = Instant::now();
    let panel = load_return_panel(&cfg.data_dir, &cfg.assets, cfg.date_range())?;
    let load_secs = t0.elapsed().as_secs_f64();
    info!(
        "loaded {} assets, {} return days ({} .. {})",
        panel.n_assets(),
        panel.len(),
        panel
            .dates
            .first()
            .map(|d| d.to_string())
            .unwrap_or_default(),
        panel
            .dates
            .last()
            .map(|d| d.to_string())
            .unwrap_or_default()
    );

    let pipeline = cfg.pipeline();
    let plans = pipeline.plan(&panel)?;
    let t1 = Instant::now();
    let outcomes = run_all(&panel, &plans, &pipeline);
    let pipeline_secs = t1.elapsed().as_secs_f64();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (plan, r) in plans.iter().zip(outcomes) {
        match r {
            Ok(r) => results.push(r),
            Err(e) => {
                error!("split {} failed: {e}", plan.split_id);
                failures.push(format!("split {}: {e}", plan.split_id));
            }
        }
    }
    info!("pipeline finished in {pipeline_secs:.2}s");

    let mut meta = RunMetadata {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        parallel: par::is_parallel(),
        assets: panel.asset_ids.clone(),
        splits_completed: results.iter().map(SplitResult::split_id).collect(),
        failures: failures.clone(),
        warnings: Vec::new(),
        notes: CONVENTIONS.iter().map(|s| s.to_string()).collect(),
    };
    let timings = Timings {
        load_secs,
        pipeline_secs,
    };
    write_outputs(out, cfg, &results, &mut meta, &timings)
        .map_err(output_error(out.to_path_buf()))?;
    if !failures.is_empty() {
        write_failed(out, &failures)?;
    }
    Ok(RunOutcome {
        out_dir: out.to_path_buf(),
        results,
        failures,
    })
}
