//! Configuration, orchestration and reporting behind the `vcv-forge` binary.

pub mod config;
pub mod logging;
pub mod plot;
pub mod report;
pub mod run;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
}
