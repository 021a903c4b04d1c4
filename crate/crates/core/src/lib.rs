//! Hybrid GP / historical-simulation volatility-covariance forecasting,
//! Student-t VaR/ES and regulatory backtesting under forward-chaining
//! cross-validation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtests;
pub mod error;
pub mod gpr;
pub mod hybrid_vcv;
pub mod kernels;
pub mod linalg;
pub mod market_data;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod risk_measures;
pub mod synthetic;

pub use error::{Error, Result};
