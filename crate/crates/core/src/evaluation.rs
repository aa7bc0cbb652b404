//! NRMSE scoring, fleet reports and the seasonality sweep.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TrafficMatrix;
use crate::error::{Error, Result};
use crate::forecaster::{ForecastMode, ModelKind, TrafficForecaster};
use crate::models::{fit, ModelSpec};

/// Root mean square error divided by the mean of `actual`.
pub fn nrmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    if actual.len() != forecast.len() || actual.is_empty() {
        return Err(Error::LengthMismatch {
            actual: actual.len(),
            forecast: forecast.len(),
        });
    }
    let k = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / k;
    if mean == 0.0 {
        return Err(Error::ZeroMeanActual);
    }
    let mse = actual.iter().zip(forecast).map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / k;
    Ok(mse.sqrt() / mean)
}

/// Train on the first `train_hours` columns, test on the next `test_hours`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_hours: usize,
    pub test_hours: usize,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            train_hours: 240,
            test_hours: 96,
        }
    }
}

impl Split {
    fn check(&self, t: &TrafficMatrix) -> Result<()> {
        if self.train_hours == 0 || self.test_hours == 0 {
            return Err(Error::InvalidConfig("train and test ranges must be nonempty".into()));
        }
        if self.train_hours + self.test_hours > t.n_hours() {
            return Err(Error::InvalidConfig(format!(
                "split {}+{} hours exceeds the corpus length {}",
                self.train_hours,
                self.test_hours,
                t.n_hours()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model_kind: ModelKind,
    pub m: usize,
    pub w: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ar: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ma: Option<usize>,
    pub params: usize,
    pub split: Split,
    pub mode: ForecastMode,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    /// `None` for the open terminal bin.
    pub upper: Option<f64>,
    pub count: usize,
}

pub const HISTOGRAM_WIDTH: f64 = 0.1;
/// Values at or above this land in the open terminal bin.
pub const HISTOGRAM_OPEN_FROM: f64 = 1.0;

/// Ten bins of width 0.1 over [0, 1) and one open bin for NRMSE ≥ 1.
pub fn histogram<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<HistogramBin> {
    let n_closed = (HISTOGRAM_OPEN_FROM / HISTOGRAM_WIDTH).round() as usize;
    let mut bins: Vec<HistogramBin> = (0..n_closed)
        .map(|b| HistogramBin {
            lower: b as f64 * HISTOGRAM_WIDTH,
            upper: Some((b + 1) as f64 * HISTOGRAM_WIDTH),
            count: 0,
        })
        .collect();
    bins.push(HistogramBin {
        lower: HISTOGRAM_OPEN_FROM,
        upper: None,
        count: 0,
    });
    for v in values {
        let idx = if *v >= HISTOGRAM_OPEN_FROM {
            n_closed
        } else {
            ((v / HISTOGRAM_WIDTH).floor().max(0.0) as usize).min(n_closed - 1)
        };
        bins[idx].count += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub average: f64,
    pub excluded_count: usize,
    /// Excluded stations and why.
    pub excluded: BTreeMap<String, String>,
    pub per_bs: BTreeMap<String, f64>,
    pub histogram: Vec<HistogramBin>,
}

impl EvalReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io("<report writer>", e))
    }

    /// `bs_id,nrmse` rows for plotting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let to_io = |e: csv::Error| Error::io("<report writer>", e.into());
        wtr.write_record(["bs_id", "nrmse"]).map_err(to_io)?;
        for (id, v) in &self.per_bs {
            wtr.write_record([id.as_str(), &v.to_string()]).map_err(to_io)?;
        }
        wtr.flush().map_err(|e| Error::io("<report writer>", e))
    }
}

enum Outcome {
    Scored(f64),
    Excluded(String),
}

/// Forecasts the test range of every station and scores it.
///
/// Stations with a zero-mean test period, or without a fitted per-station
/// model, are excluded and counted rather than failing the run.
pub fn evaluate(
    model: &(impl TrafficForecaster + ?Sized),
    t: &TrafficMatrix,
    split: Split,
    mode: ForecastMode,
) -> Result<EvalReport> {
    split.check(t)?;
    let start = t.start_hour() + split.train_hours as u64;
    let outcomes: Vec<Result<Outcome>> = t
        .bs_ids()
        .par_iter()
        .map(|id| {
            let series = match model.forecast_horizon(t, id, start, split.test_hours, mode) {
                Ok(s) => s,
                Err(e @ Error::UnknownBs(_)) => return Ok(Outcome::Excluded(e.to_string())),
                Err(e) => return Err(e),
            };
            let actual = series.actual.as_deref().unwrap_or_default();
            match nrmse(actual, &series.forecast) {
                Ok(v) => Ok(Outcome::Scored(v)),
                Err(e @ Error::ZeroMeanActual) => Ok(Outcome::Excluded(e.to_string())),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut per_bs = BTreeMap::new();
    let mut excluded = BTreeMap::new();
    for (id, outcome) in t.bs_ids().iter().zip(outcomes) {
        match outcome? {
            Outcome::Scored(v) => {
                per_bs.insert(id.clone(), v);
            }
            Outcome::Excluded(why) => {
                excluded.insert(id.clone(), why);
            }
        }
    }
    if per_bs.is_empty() {
        return Err(Error::NothingScored {
            excluded: excluded.len(),
        });
    }
    let average = per_bs.values().sum::<f64>() / per_bs.len() as f64;
    let (ar, ma) = arma_orders(model);
    Ok(EvalReport {
        config: ExperimentConfig {
            model_kind: model.kind(),
            m: model.seasonality(),
            w: model.window(),
            ar,
            ma,
            params: model.params(),
            split,
            mode,
            seed: None,
        },
        average,
        excluded_count: excluded.len(),
        excluded,
        histogram: histogram(per_bs.values()),
        per_bs,
    })
}

fn arma_orders(model: &(impl TrafficForecaster + ?Sized)) -> (Option<usize>, Option<usize>) {
    match model.kind() {
        ModelKind::Sa => {
            let (ar, ma) = model.arma_orders();
            (Some(ar), Some(ma))
        }
        _ => (None, None),
    }
}

/// Fits `spec` on the training range and evaluates it on the test range.
pub fn run_experiment(spec: &ModelSpec, t: &TrafficMatrix, split: Split, mode: ForecastMode) -> Result<EvalReport> {
    split.check(t)?;
    let (model, _) = fit(spec, t, split.train_hours)?;
    evaluate(&model, t, split, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub m: usize,
    /// `None` when training or evaluation failed at this seasonality.
    pub average_nrmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Seasonality with the lowest average NRMSE among successful points.
    pub fn best(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.average_nrmse.is_some())
            .min_by(|a, b| a.average_nrmse.unwrap().total_cmp(&b.average_nrmse.unwrap()))
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io("<sweep writer>", e))
    }

    /// `m,average_nrmse` rows; failed points have an empty value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let to_io = |e: csv::Error| Error::io("<sweep writer>", e.into());
        wtr.write_record(["m", "average_nrmse"]).map_err(to_io)?;
        for p in &self.points {
            let v = p.average_nrmse.map(|v| v.to_string()).unwrap_or_default();
            wtr.write_record([p.m.to_string(), v]).map_err(to_io)?;
        }
        wtr.flush().map_err(|e| Error::io("<sweep writer>", e))
    }
}

/// Trains and evaluates one block model per seasonality in `grid`
/// (strictly increasing). A seasonality that cannot be trained or evaluated
/// is recorded as a failed point.
pub fn sweep_seasonality(
    t: &TrafficMatrix,
    grid: &[usize],
    w: usize,
    split: Split,
    mode: ForecastMode,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if grid.windows(2).any(|p| p[0] >= p[1]) || grid[0] == 0 {
        return Err(Error::InvalidGrid(
            "seasonalities must be positive and strictly increasing".into(),
        ));
    }
    split.check(t)?;
    let points = grid
        .iter()
        .map(|&m| match run_experiment(&ModelSpec::br(m, w), t, split, mode) {
            Ok(r) => SweepPoint {
                m,
                average_nrmse: Some(r.average),
                error: None,
            },
            Err(e) => SweepPoint {
                m,
                average_nrmse: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(SweepResult { points })
}
