use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use serde_json::Value;
use tempfile::TempDir;

use vcvforge::synthetic::{generate_panel, write_price_dir, PanelSpec};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vcv-forge"));
    c.env_remove("VCVFORGE_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Three assets, about eighteen months of weekdays.
fn short_fixture(dir: &Path) {
    let spec = PanelSpec {
        assets: vec!["AAA".into(), "BBB".into(), "CCC".into()],
        start: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
        end: NaiveDate::from_ymd_opt(2024, 6, 28).unwrap(),
        seed: 7,
        ..PanelSpec::default()
    };
    write_price_dir(&generate_panel(&spec).unwrap(), dir).unwrap();
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        short_fixture(&dir.path().join("data"));
        fs::write(dir.path().join("run.ini"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> String {
        self.path("run.ini").display().to_string()
    }

    fn run(&self, out: &str, extra: &[&str]) -> Output {
        let cfg = self.config();
        let out = self.path(out).display().to_string();
        let mut args = vec!["run", "--config", cfg.as_str(), "--out", out.as_str()];
        args.extend_from_slice(extra);
        run(&args)
    }
}

const QUICK: &str = "data_dir = data\nn_splits = 1\nbootstrap_n = 1000\nrestarts = 0\nseed = 11\n";

fn table_rows(out: &Path, name: &str) -> Vec<Value> {
    let text = fs::read_to_string(out.join("tables").join(format!("{name}.json"))).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    v["rows"].as_array().unwrap().clone()
}

fn files_under(root: &Path, sub: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root.join(sub))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_key_is_a_config_error() {
    let ws = Workspace::new("data_dir = data\nfoo = 1\n");
    let o = run(&["validate-config", &ws.config()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("foo"), "{}", stderr(&o));
}

#[test]
fn out_of_domain_values_are_config_errors() {
    for bad in [
        "nu = 2",
        "alpha = 1.5",
        "bootstrap_n = 10",
        "mode = diagonal",
    ] {
        let ws = Workspace::new(&format!("data_dir = data\n{bad}\n"));
        let o = ws.run("out", &[]);
        assert_eq!(code(&o), 2, "{bad}: {}", stderr(&o));
        assert!(
            !ws.path("out").exists(),
            "{bad} must fail before any output"
        );
    }
}

#[test]
fn missing_data_dir_is_a_config_error() {
    let ws = Workspace::new("seed = 1\n");
    assert_eq!(code(&run(&["validate-config", &ws.config()])), 2);
    let o = run(&[
        "validate-config",
        &ws.config(),
        "--data-dir",
        "/nonexistent/vcv",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&run(&["run"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let ws = Workspace::new(QUICK);
    assert_eq!(code(&ws.run("out", &["--mode", "diagonal"])), 2);
}

#[test]
fn empty_file_with_data_dir_flag_gives_defaults() {
    let ws = Workspace::new("");
    let data = ws.path("data").display().to_string();
    let o = run(&["validate-config", &ws.config(), "--data-dir", &data]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["nu"], 5.0);
    assert_eq!(v["alpha"], 0.99);
    assert_eq!(v["n_splits"], 4);
    assert_eq!(v["assets"], serde_json::json!(["AAA", "BBB", "CCC"]));
}

#[test]
fn flags_override_file_values() {
    let ws = Workspace::new("data_dir = data\nseed = 1\nn_splits = 3\nmode = literal\n");
    let data = ws.path("data").display().to_string();
    let o = run(&["validate-config", &ws.config(), "--data-dir", &data]);
    assert_eq!(code(&o), 0);
    let o = ws.run(
        "o",
        &["--seed", "9", "--splits", "1", "--mode", "corr_scaled"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run: Value =
        serde_json::from_str(&fs::read_to_string(ws.path("o/run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["seed"], 9);
    assert_eq!(run["config"]["n_splits"], 1);
    assert_eq!(run["config"]["mode"], "corr_scaled");
}

#[test]
fn insufficient_history_is_a_runtime_failure_with_marker() {
    let ws = Workspace::new("data_dir = data\nn_splits = 4\nbootstrap_n = 1000\n");
    let o = ws.run("out", &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let marker = fs::read_to_string(ws.path("out/FAILED")).unwrap();
    assert!(!marker.trim().is_empty());
    assert!(ws.path("out/run.log").exists());
}

#[test]
fn single_split_run_writes_single_row_tables() {
    let ws = Workspace::new(QUICK);
    let o = ws.run("out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = ws.path("out");
    assert!(!out.join("FAILED").exists());
    for name in [
        "table1_lml",
        "table2_univariate_summary",
        "table3_portfolio_tests",
        "table4_superiority",
        "table5_loss_comparison",
        "table6_mean_forecasts",
    ] {
        assert!(
            out.join("tables").join(format!("{name}.csv")).exists(),
            "{name}.csv"
        );
        let rows = table_rows(&out, name);
        let expected = if matches!(name, "table1_lml" | "table2_univariate_summary") {
            3
        } else {
            1
        };
        assert_eq!(rows.len(), expected, "{name}");
    }
    assert_eq!(files_under(&out, "models").len(), 3);
    assert!(out.join("report.md").exists());
    assert!(out.join("plots/split0.svg").exists());
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let ws = Workspace::new(QUICK);
    assert_eq!(code(&ws.run("a", &[])), 0);
    assert_eq!(code(&ws.run("b", &[])), 0);
    for sub in ["tables", "models", "plots"] {
        let a = files_under(&ws.path("a"), sub);
        let b = files_under(&ws.path("b"), sub);
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(
                fs::read(fa).unwrap(),
                fs::read(fb).unwrap(),
                "{}",
                fa.display()
            );
        }
    }
}

#[test]
fn every_logged_warning_reaches_the_report() {
    let ws = Workspace::new(QUICK);
    // A duplicated date row is tolerated with a warning.
    let csv = ws.path("data/AAA.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let second = text.lines().nth(2).unwrap().to_string();
    fs::write(&csv, format!("{text}{second}\n")).unwrap();

    let o = ws.run("out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(ws.path("out/run.log")).unwrap();
    let report = fs::read_to_string(ws.path("out/report.md")).unwrap();
    let warnings: Vec<&str> = log
        .lines()
        .filter(|l| l.contains(" WARN ") || l.contains(" ERROR "))
        .collect();
    assert!(
        !warnings.is_empty(),
        "fixture should produce a warning:\n{log}"
    );
    for line in warnings {
        let msg = line.split_once(": ").map(|(_, m)| m).unwrap_or(line);
        assert!(report.contains(msg), "report is missing `{msg}`");
    }
}

#[test]
fn plot_command_rerenders_identical_svgs_with_one_marker_per_violation() {
    let ws = Workspace::new(QUICK);
    assert_eq!(code(&ws.run("out", &[])), 0);
    let out = ws.path("out");
    let before = fs::read(out.join("plots/split0.svg")).unwrap();
    fs::remove_dir_all(out.join("plots")).unwrap();
    let o = run(&["plot", "--from", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let after = fs::read(out.join("plots/split0.svg")).unwrap();
    assert_eq!(before, after);

    let svg = String::from_utf8(after).unwrap();
    let x = table_rows(&out, "table3_portfolio_tests")[0][3]
        .as_u64()
        .unwrap() as usize;
    assert_eq!(svg.matches(r#"<path class="hit""#).count(), x);
}

#[test]
fn log_level_comes_from_the_environment() {
    let ws = Workspace::new(QUICK);
    let cfg = ws.config();
    let out = ws.path("out").display().to_string();
    let o = bin()
        .args(["run", "--config", &cfg, "--out", &out])
        .env("VCVFORGE_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("INFO"));
    let o = bin()
        .args(["validate-config", &cfg])
        .env("VCVFORGE_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn bundled_panel_matches_the_generator() {
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic");
    let dir = tempfile::tempdir().unwrap();
    write_price_dir(&generate_panel(&PanelSpec::default()).unwrap(), dir.path()).unwrap();
    let fresh = files_under(dir.path(), ".");
    assert_eq!(fresh.len(), 7);
    for f in fresh {
        let name = f.file_name().unwrap();
        assert_eq!(
            fs::read(&f).unwrap(),
            fs::read(bundled.join(name)).unwrap(),
            "{name:?} differs from the bundled copy"
        );
    }
}
