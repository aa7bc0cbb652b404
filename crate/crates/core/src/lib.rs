//! Short-term mobile traffic forecasting with a single block regression
//! model shared by every base station.
//!
//! The pipeline takes an N×L hourly traffic matrix, seasonally differences
//! each row, slides a lag window over the differences, z-scores the
//! resulting design matrix and fits one linear model by conjugate gradient.
//! Forecasts add the predicted difference back onto the traffic one season
//! earlier. Two baselines (block regression on raw traffic and per-station
//! seasonal ARIMA) and the NRMSE evaluation harness live alongside.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod forecaster;
mod linalg;
pub mod models;
pub mod pipeline;
pub mod regressor;

pub use corpus::{RawTrafficMatrix, SynthConfig, TrafficMatrix};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, Split, SweepResult};
pub use forecaster::{ForecastMode, ForecastSeries, ModelKind, TrafficForecaster};
pub use models::{ModelSpec, TrainedModel};
pub use regressor::BlockModel;
