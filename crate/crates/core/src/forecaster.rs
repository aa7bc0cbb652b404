//! Traffic forecasts from trained models.
//!
//! The block model predicts the normalized seasonal difference at hour `l`
//! from the `W` preceding differences and reconstructs traffic as
//! `t̃_l = μ^Y + (θ₀ + Σ_p θ_p x̂_p) σ^Y + t_{l-M}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::TrafficMatrix;
use crate::error::{Error, Result};
use crate::pipeline::NormalizationStats;
use crate::regressor::BlockModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ForecastMode {
    /// Recorded actuals feed every later step.
    OneStep,
    /// Forecasts replace actuals once the lags reach into the horizon.
    Recursive,
}

impl fmt::Display for ForecastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForecastMode::OneStep => "one_step",
            ForecastMode::Recursive => "recursive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[value(rename_all = "lowercase")]
pub enum ModelKind {
    Br,
    Lr,
    Sa,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Br => "br",
            ModelKind::Lr => "lr",
            ModelKind::Sa => "sa",
        })
    }
}

/// Forecasts for one station over contiguous hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub bs_id: String,
    pub hours: Vec<u64>,
    pub forecast: Vec<f64>,
    /// Recorded traffic over the same hours, when the corpus covers them.
    pub actual: Option<Vec<f64>>,
    pub mode: ForecastMode,
}

/// Common surface of the block model and both baselines.
pub trait TrafficForecaster: Sync {
    fn kind(&self) -> ModelKind;

    /// Trainable parameter count across the whole fleet.
    fn params(&self) -> usize;

    /// Differencing lag, 0 when the model works on raw traffic.
    fn seasonality(&self) -> usize;

    /// Lag window, 0 when not applicable.
    fn window(&self) -> usize;

    /// Per-station ARMA orders; `(0, 0)` for the linear models.
    fn arma_orders(&self) -> (usize, usize) {
        (0, 0)
    }

    fn forecast_horizon(
        &self,
        t: &TrafficMatrix,
        bs: &str,
        start: u64,
        k: usize,
        mode: ForecastMode,
    ) -> Result<ForecastSeries>;
}

/// Shared linear predictor over the last `m + w` values of `history`.
/// With `m == 0` the lags are raw values and nothing is added back.
pub(crate) fn predict_linear(
    theta0: f64,
    theta: &[f64],
    stats: &NormalizationStats,
    m: usize,
    history: &[f64],
) -> Result<f64> {
    let w = theta.len();
    let needed = m + w;
    let n = history.len();
    if n < needed {
        return Err(Error::InsufficientHistory { needed, available: n });
    }
    let mut z = theta0;
    for (p, th) in theta.iter().enumerate() {
        let q = n - w + p;
        let lag = if m > 0 { history[q] - history[q - m] } else { history[q] };
        z += th * stats.normalize_x(p, lag);
    }
    let seasonal = if m > 0 { history[n - m] } else { 0.0 };
    Ok(stats.denormalize_y(z) + seasonal)
}

/// Forecasts the hour right after `history`, which must hold at least `M + W` values.
pub fn forecast_one(model: &BlockModel, history: &[f64]) -> Result<f64> {
    predict_linear(model.theta0, &model.theta, &model.stats, model.seasonality_m, history)
}

/// Runs `step` over `k` hours starting at absolute hour `start`. `step` sees
/// every value before the target hour: recorded actuals, or earlier
/// forecasts in recursive mode.
pub(crate) fn roll_horizon(
    t: &TrafficMatrix,
    bs: &str,
    start: u64,
    k: usize,
    mode: ForecastMode,
    needed: usize,
    mut step: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<ForecastSeries> {
    if k == 0 {
        return Err(Error::InvalidConfig("horizon must be at least one hour".into()));
    }
    let row = t.row_by_id(bs)?;
    let col = start
        .checked_sub(t.start_hour())
        .map(|c| c as usize)
        .filter(|&c| c <= t.n_hours())
        .ok_or(Error::HourOutOfRange { hour: start })?;
    if col < needed {
        return Err(Error::InsufficientHistory { needed, available: col });
    }
    let covered = col + k <= t.n_hours();
    if mode == ForecastMode::OneStep && !covered {
        let last = start + k as u64 - 1;
        return Err(Error::HourOutOfRange { hour: last });
    }

    let mut buffer = Vec::with_capacity(col + k);
    buffer.extend_from_slice(&row[..col]);
    let mut forecast = Vec::with_capacity(k);
    for s in 0..k {
        let f = step(&buffer)?;
        forecast.push(f);
        match mode {
            ForecastMode::OneStep => buffer.push(row[col + s]),
            ForecastMode::Recursive => buffer.push(f),
        }
    }
    Ok(ForecastSeries {
        bs_id: bs.to_string(),
        hours: (0..k as u64).map(|s| start + s).collect(),
        forecast,
        actual: covered.then(|| row[col..col + k].to_vec()),
        mode,
    })
}

impl TrafficForecaster for BlockModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Br
    }

    fn params(&self) -> usize {
        BlockModel::params(self)
    }

    fn seasonality(&self) -> usize {
        self.seasonality_m
    }

    fn window(&self) -> usize {
        self.window_w
    }

    fn forecast_horizon(
        &self,
        t: &TrafficMatrix,
        bs: &str,
        start: u64,
        k: usize,
        mode: ForecastMode,
    ) -> Result<ForecastSeries> {
        let needed = self.seasonality_m + self.window_w;
        roll_horizon(t, bs, start, k, mode, needed, |h| forecast_one(self, h))
    }
}
