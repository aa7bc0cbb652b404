//! Comparison models: block linear regression on raw traffic and
//! per-station seasonal ARIMA.

mod lr;
mod sa;

pub use lr::{forecast_lr, train_lr, LrModel};
pub use sa::{forecast_sa, hannan_rissanen, long_ar_order, train_sa, SaCoefficients, SaModel};
