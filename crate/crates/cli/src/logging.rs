//! Process logger: stderr at the `VCVFORGE_LOG` level, a run log file, and
//! a copy of every warning for the report.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use log::{Level, LevelFilter, Log, Metadata, Record};

pub const ENV_VAR: &str = "VCVFORGE_LOG";

struct RunLogger {
    stderr_level: LevelFilter,
    started: Instant,
    /// Lines seen before a file is attached are replayed into it.
    pending: Mutex<Vec<String>>,
    file: Mutex<Option<File>>,
    warnings: Mutex<Vec<String>>,
}

static LOGGER: OnceLock<RunLogger> = OnceLock::new();

impl Log for RunLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.file_level()
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!(
            "{:>9.3}s {:<5} {}: {}",
            self.started.elapsed().as_secs_f64(),
            record.level(),
            record.target(),
            record.args()
        );
        if record.level() <= self.stderr_level {
            eprintln!("{line}");
        }
        if record.level() <= Level::Warn {
            self.warnings
                .lock()
                .unwrap()
                .push(record.args().to_string());
        }
        let mut file = self.file.lock().unwrap();
        match file.as_mut() {
            Some(f) => {
                let _ = writeln!(f, "{line}");
            }
            None => self.pending.lock().unwrap().push(line),
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let _ = f.flush();
        }
    }
}

impl RunLogger {
    fn file_level(&self) -> LevelFilter {
        self.stderr_level.max(LevelFilter::Info)
    }
}

/// Parses `VCVFORGE_LOG` (`error`, `warn`, `info`, `debug`, `trace`, `off`);
/// defaults to `warn`.
pub fn level_from_env() -> Result<LevelFilter, String> {
    match std::env::var(ENV_VAR) {
        Ok(v) if !v.trim().is_empty() => LevelFilter::from_str(v.trim())
            .map_err(|_| format!("{ENV_VAR}: unknown log level `{v}`")),
        _ => Ok(LevelFilter::Warn),
    }
}

/// Installs the logger once per process; later calls are no-ops.
pub fn init(stderr_level: LevelFilter) {
    let logger = LOGGER.get_or_init(|| RunLogger {
        stderr_level,
        started: Instant::now(),
        pending: Mutex::new(Vec::new()),
        file: Mutex::new(None),
        warnings: Mutex::new(Vec::new()),
    });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(logger.file_level());
    }
}

/// Starts writing to `path`, replaying earlier lines. Replaces any previous
/// file and clears collected warnings.
pub fn attach_file(path: &Path) -> std::io::Result<()> {
    let Some(logger) = LOGGER.get() else {
        return Ok(());
    };
    let mut f = File::create(path)?;
    for line in logger.pending.lock().unwrap().drain(..) {
        writeln!(f, "{line}")?;
    }
    *logger.file.lock().unwrap() = Some(f);
    Ok(())
}

pub fn detach_file() {
    if let Some(logger) = LOGGER.get() {
        logger.flush();
        *logger.file.lock().unwrap() = None;
    }
}

/// Every warning logged since the last call.
pub fn take_warnings() -> Vec<String> {
    LOGGER
        .get()
        .map(|l| std::mem::take(&mut *l.warnings.lock().unwrap()))
        .unwrap_or_default()
}
