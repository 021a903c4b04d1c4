//! Flat `key = value` run configuration with strict keys and CLI overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;
use sha2::{Digest, Sha256};

use vcvforge::backtests::DEFAULT_BOOTSTRAP;
use vcvforge::gpr::FitConfig;
use vcvforge::hybrid_vcv::{AssemblyMode, PortfolioWeights};
use vcvforge::pipeline::{PipelineConfig, Refit, SplitScheme};
use vcvforge::risk_measures::{QuantileRule, TScaling};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}` given twice (lines {first} and {second})")]
    Duplicate {
        key: String,
        first: usize,
        second: usize,
    },
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("no data directory: set `data_dir` or pass --data-dir")]
    MissingDataDir,
    #[error("data directory {0} does not exist")]
    DataDirNotFound(PathBuf),
    #[error("no assets listed and no *.csv files found in {0}")]
    NoAssets(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub assets: Vec<String>,
    pub data_dir: PathBuf,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    /// Confidence level; the tail probability is `1 − alpha`.
    pub alpha: f64,
    pub nu: f64,
    /// `None` means equal weights.
    pub weights: Option<Vec<f64>>,
    pub n_splits: usize,
    pub test_block_days: usize,
    pub split_scheme: SplitScheme,
    pub mode: AssemblyMode,
    pub refit: Refit,
    pub t_scaling: TScaling,
    pub include_noise_in_forecast: bool,
    pub quantile_rule: QuantileRule,
    pub bootstrap_n: usize,
    pub seed: u64,
    pub restarts: usize,
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_splits: Option<usize>,
    pub mode: Option<AssemblyMode>,
}

const KEYS: &[&str] = &[
    "assets",
    "data_dir",
    "start_date",
    "end_date",
    "alpha",
    "nu",
    "weights",
    "n_splits",
    "test_block_days",
    "split_scheme",
    "mode",
    "refit",
    "t_scaling",
    "include_noise_in_forecast",
    "quantile_rule",
    "bootstrap_n",
    "seed",
    "restarts",
    "out_dir",
    "formats",
];

/// `key → (value, line)` with comments (`#`, `;`) and blank lines dropped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut out: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if trimmed.starts_with('[') {
            return Err(ConfigError::Syntax {
                line,
                msg: "sections are not supported; the file is a flat key = value list".into(),
            });
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            msg: format!("expected `key = value`, got `{trimmed}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key, line });
        }
        let value = value.trim().trim_matches('"').to_string();
        if let Some((_, first)) = out.get(&key) {
            return Err(ConfigError::Duplicate {
                key,
                first: *first,
                second: line,
            });
        }
        out.insert(key, (value, line));
    }
    Ok(out)
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| invalid(key, format!("cannot parse `{raw}`: {e}")))
}

fn parse_choice<T: Copy>(key: &str, raw: &str, choices: &[(&str, T)]) -> Result<T, ConfigError> {
    choices
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
            invalid(
                key,
                format!("expected one of {}, got `{raw}`", names.join("|")),
            )
        })
}

fn parse_list(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    fn defaults() -> Self {
        RunConfig {
            assets: Vec::new(),
            data_dir: PathBuf::new(),
            start_date: None,
            end_date: None,
            alpha: 0.99,
            nu: 5.0,
            weights: None,
            n_splits: 4,
            test_block_days: 252,
            split_scheme: SplitScheme::FixedBlocks,
            mode: AssemblyMode::Literal,
            refit: Refit::Split,
            t_scaling: TScaling::Variance,
            include_noise_in_forecast: true,
            quantile_rule: QuantileRule::Linear,
            bootstrap_n: DEFAULT_BOOTSTRAP,
            seed: 0,
            restarts: 2,
            out_dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }

    /// Parses file text, applies overrides and validates. Relative paths in
    /// the file resolve against `base`.
    pub fn from_str_with(
        text: &str,
        base: &Path,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::defaults();
        let mut data_dir = None;
        for (key, (raw, _)) in &pairs {
            let k = key.as_str();
            match k {
                "assets" => cfg.assets = parse_list(raw),
                "data_dir" => data_dir = Some(base.join(raw)),
                "start_date" => cfg.start_date = Some(parse_value(k, raw)?),
                "end_date" => cfg.end_date = Some(parse_value(k, raw)?),
                "alpha" => cfg.alpha = parse_value(k, raw)?,
                "nu" => cfg.nu = parse_value(k, raw)?,
                "weights" => {
                    cfg.weights = if raw == "equal" {
                        None
                    } else {
                        Some(
                            parse_list(raw)
                                .iter()
                                .map(|w| parse_value(k, w))
                                .collect::<Result<_, _>>()?,
                        )
                    }
                }
                "n_splits" => cfg.n_splits = parse_value(k, raw)?,
                "test_block_days" => cfg.test_block_days = parse_value(k, raw)?,
                "split_scheme" => {
                    cfg.split_scheme = parse_choice(
                        k,
                        raw,
                        &[
                            ("fixed_blocks", SplitScheme::FixedBlocks),
                            ("calendar_years", SplitScheme::CalendarYears),
                        ],
                    )?
                }
                "mode" => {
                    cfg.mode = parse_choice(
                        k,
                        raw,
                        &[
                            ("literal", AssemblyMode::Literal),
                            ("corr_scaled", AssemblyMode::CorrScaled),
                        ],
                    )?
                }
                "refit" => {
                    cfg.refit =
                        parse_choice(k, raw, &[("split", Refit::Split), ("daily", Refit::Daily)])?
                }
                "t_scaling" => {
                    cfg.t_scaling = parse_choice(
                        k,
                        raw,
                        &[("variance", TScaling::Variance), ("raw", TScaling::Raw)],
                    )?
                }
                "include_noise_in_forecast" => cfg.include_noise_in_forecast = parse_value(k, raw)?,
                "quantile_rule" => {
                    cfg.quantile_rule = parse_choice(
                        k,
                        raw,
                        &[
                            ("linear", QuantileRule::Linear),
                            ("lower", QuantileRule::Lower),
                        ],
                    )?
                }
                "bootstrap_n" => cfg.bootstrap_n = parse_value(k, raw)?,
                "seed" => cfg.seed = parse_value(k, raw)?,
                "restarts" => cfg.restarts = parse_value(k, raw)?,
                "out_dir" => cfg.out_dir = base.join(raw),
                "formats" => {
                    cfg.formats = parse_list(raw)
                        .iter()
                        .map(|f| {
                            parse_choice(k, f, &[("csv", Format::Csv), ("json", Format::Json)])
                        })
                        .collect::<Result<_, _>>()?
                }
                _ => unreachable!("key list and match arms disagree on `{k}`"),
            }
        }

        if let Some(d) = &overrides.data_dir {
            data_dir = Some(d.clone());
        }
        if let Some(o) = &overrides.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(k) = overrides.n_splits {
            cfg.n_splits = k;
        }
        if let Some(m) = overrides.mode {
            cfg.mode = m;
        }
        cfg.data_dir = data_dir.ok_or(ConfigError::MissingDataDir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_with(&text, base, overrides)
    }

    fn validate(&mut self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(invalid(
                "alpha",
                format!("confidence level must lie in (0.5, 1), got {}", self.alpha),
            ));
        }
        if !(self.nu > 2.0 && self.nu.is_finite()) {
            return Err(invalid(
                "nu",
                format!("must exceed 2 so the t variance exists, got {}", self.nu),
            ));
        }
        if self.n_splits == 0 {
            return Err(invalid("n_splits", "must be at least 1"));
        }
        if self.test_block_days < 2 {
            return Err(invalid("test_block_days", "must be at least 2"));
        }
        if self.bootstrap_n < 1000 {
            return Err(invalid(
                "bootstrap_n",
                format!("must be at least 1000, got {}", self.bootstrap_n),
            ));
        }
        if self.formats.is_empty() {
            return Err(invalid("formats", "list at least one of csv, json"));
        }
        if let (Some(a), Some(b)) = (self.start_date, self.end_date) {
            if a > b {
                return Err(invalid("end_date", format!("{b} precedes start_date {a}")));
            }
        }
        if !self.data_dir.exists() {
            return Err(ConfigError::DataDirNotFound(self.data_dir.clone()));
        }
        if self.assets.is_empty() {
            self.assets = discover_assets(&self.data_dir)?;
        }
        if let Some(w) = &self.weights {
            if w.len() != self.assets.len() {
                return Err(invalid(
                    "weights",
                    format!("{} weights for {} assets", w.len(), self.assets.len()),
                ));
            }
            PortfolioWeights::new(w.clone()).map_err(|e| invalid("weights", e.to_string()))?;
        }
        Ok(())
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        match (self.start_date, self.end_date) {
            (None, None) => None,
            (a, b) => Some((a.unwrap_or(NaiveDate::MIN), b.unwrap_or(NaiveDate::MAX))),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            alpha: 1.0 - self.alpha,
            nu: self.nu,
            weights: self
                .weights
                .clone()
                .map(|w| PortfolioWeights::new(w).expect("weights validated at load")),
            n_splits: self.n_splits,
            test_block_days: self.test_block_days,
            scheme: self.split_scheme,
            mode: self.mode,
            refit: self.refit,
            t_scaling: self.t_scaling,
            include_noise: self.include_noise_in_forecast,
            quantile_rule: self.quantile_rule,
            n_boot: self.bootstrap_n,
            seed: self.seed,
            fit: FitConfig {
                restarts: self.restarts,
                ..FitConfig::default()
            },
        }
    }

    /// Short SHA-256 of the resolved settings, excluding paths.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("data_dir");
            m.remove("out_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn writes(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Sorted stems of the `*.csv` files in `dir`.
fn discover_assets(dir: &Path) -> Result<Vec<String>, ConfigError> {
    let entries = fs::read_dir(dir).map_err(|source| ConfigError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut assets: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    assets.sort();
    if assets.is_empty() {
        return Err(ConfigError::NoAssets(dir.to_path_buf()));
    }
    Ok(assets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_dir(text: &str) -> (tempfile::TempDir, Result<RunConfig, ConfigError>) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("A.csv"), "Date,Close\n").unwrap();
        fs::write(dir.path().join("B.csv"), "Date,Close\n").unwrap();
        let o = Overrides {
            data_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let cfg = RunConfig::from_str_with(text, Path::new("."), &o);
        (dir, cfg)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let (_d, cfg) = with_dir("");
        let cfg = cfg.unwrap();
        assert_eq!(cfg.nu, 5.0);
        assert_eq!(cfg.alpha, 0.99);
        assert_eq!(cfg.n_splits, 4);
        assert_eq!(cfg.assets, vec!["A", "B"]);
        let p = cfg.pipeline();
        assert!((p.alpha - 0.01).abs() < 1e-15);
        assert_eq!(p.n_boot, 10_000);
    }

    #[test]
    fn nu_two_is_rejected() {
        let (_d, cfg) = with_dir("nu = 2\n");
        assert!(matches!(cfg, Err(ConfigError::Invalid { key, .. }) if key == "nu"));
    }

    #[test]
    fn unknown_key_is_named() {
        let (_d, cfg) = with_dir("# comment\nfoo = 1\n");
        let err = cfg.unwrap_err();
        assert!(err.to_string().contains("`foo`"), "{err}");
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }));
    }

    #[test]
    fn overrides_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let text = "data_dir = /nonexistent\nseed = 5\nn_splits = 3\nmode = literal\n";
        let o = Overrides {
            data_dir: Some(dir.path().to_path_buf()),
            seed: Some(9),
            n_splits: Some(1),
            mode: Some(AssemblyMode::CorrScaled),
            out_dir: Some(dir.path().join("o")),
        };
        fs::write(dir.path().join("X.csv"), "").unwrap();
        let cfg = RunConfig::from_str_with(text, Path::new("."), &o).unwrap();
        assert_eq!(
            (cfg.seed, cfg.n_splits, cfg.mode),
            (9, 1, AssemblyMode::CorrScaled)
        );
        assert_eq!(cfg.data_dir, dir.path());
    }

    #[test]
    fn value_errors() {
        for (text, key) in [
            ("alpha = 1.5", "alpha"),
            ("mode = fancy", "mode"),
            ("bootstrap_n = 10", "bootstrap_n"),
            ("weights = 0.5, 0.6", "weights"),
            ("weights = 1.0", "weights"),
            ("n_splits = x", "n_splits"),
            ("formats = xml", "formats"),
            (
                "include_noise_in_forecast = maybe",
                "include_noise_in_forecast",
            ),
        ] {
            let (_d, cfg) = with_dir(text);
            match cfg {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn syntax_errors() {
        let (_d, cfg) = with_dir("[section]\n");
        assert!(matches!(cfg, Err(ConfigError::Syntax { line: 1, .. })));
        let (_d, cfg) = with_dir("seed 4\n");
        assert!(matches!(cfg, Err(ConfigError::Syntax { .. })));
        let (_d, cfg) = with_dir("seed = 1\nseed = 2\n");
        assert!(matches!(
            cfg,
            Err(ConfigError::Duplicate {
                first: 1,
                second: 2,
                ..
            })
        ));
    }

    #[test]
    fn data_dir_is_required() {
        let err = RunConfig::from_str_with("", Path::new("."), &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::MissingDataDir));
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let (_d, a) = with_dir("seed = 1");
        let (_e, b) = with_dir("seed = 1");
        let (_f, c) = with_dir("seed = 2");
        let (a, b, c) = (a.unwrap(), b.unwrap(), c.unwrap());
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
