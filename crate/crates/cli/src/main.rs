use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vcv_forge::config::{Overrides, RunConfig};
use vcv_forge::{exit, logging, plot, run};
use vcvforge::hybrid_vcv::AssemblyMode;

#[derive(Parser)]
#[command(
    name = "vcv-forge",
    version,
    about = "Hybrid GP / historical VaR and ES backtesting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every split and write tables, models, plots and a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AssemblyMode>,
    },
    /// Parse and check a config file, then print the resolved settings.
    ValidateConfig {
        file: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Re-render SVG plots from a previous run's output directory.
    Plot {
        #[arg(long = "from")]
        from: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<AssemblyMode, String> {
    s.parse().map_err(|e: vcvforge::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match logging::level_from_env() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    logging::init(level);
    ExitCode::from(dispatch(cli.command) as u8)
}

fn dispatch(command: Command) -> i32 {
    match command {
        Command::Run {
            config,
            data_dir,
            out,
            seed,
            splits,
            mode,
        } => {
            let overrides = Overrides {
                data_dir,
                out_dir: out,
                seed,
                n_splits: splits,
                mode,
            };
            let cfg = match RunConfig::load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return exit::CONFIG;
                }
            };
            match run::execute(&cfg) {
                Ok(outcome) if outcome.succeeded() => {
                    println!("wrote {}", outcome.out_dir.display());
                    exit::OK
                }
                Ok(outcome) => {
                    for f in &outcome.failures {
                        eprintln!("error: {f}");
                    }
                    eprintln!("partial results in {}", outcome.out_dir.display());
                    exit::RUNTIME
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit::RUNTIME
                }
            }
        }
        Command::ValidateConfig { file, data_dir } => {
            let overrides = Overrides {
                data_dir,
                ..Default::default()
            };
            match RunConfig::load(&file, &overrides) {
                Ok(cfg) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&cfg).expect("config serialises")
                    );
                    exit::OK
                }
                Err(e) => {
                    eprintln!("config error: {e}");
                    exit::CONFIG
                }
            }
        }
        Command::Plot { from } => match plot::emit_plots(&from) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                exit::OK
            }
            Err(e) => {
                eprintln!("error: cannot plot from {}: {e}", from.display());
                exit::RUNTIME
            }
        },
    }
}
