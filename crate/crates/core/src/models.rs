//! Model selection, fitting and the JSON model file format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::{train_lr, train_sa, LrModel, SaCoefficients, SaModel};
use crate::corpus::TrafficMatrix;
use crate::error::{Error, Result};
use crate::forecaster::{ForecastMode, ForecastSeries, ModelKind, TrafficForecaster};
use crate::pipeline::NormalizationStats;
use crate::regressor::{train_br, BlockModel, CgOptions, TrainingDiagnostics};

pub const FORMAT_VERSION: u32 = 1;

/// Which model to fit and with what orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Differencing lag (block model) or seasonality (SA); unused by LR.
    pub m: usize,
    /// Lag window for BR and LR; unused by SA.
    pub w: usize,
    pub ar: usize,
    pub ma: usize,
}

impl ModelSpec {
    pub fn br(m: usize, w: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Br,
            m,
            w,
            ar: 0,
            ma: 0,
        }
    }

    pub fn lr(w: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Lr,
            m: 0,
            w,
            ar: 0,
            ma: 0,
        }
    }

    pub fn sa(ar: usize, ma: usize, s: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Sa,
            m: s,
            w: 0,
            ar,
            ma,
        }
    }

    /// Paper defaults: M = 24 with W = 3 (BR), W = 72 (LR), ARMA(2, 1) at season 24 (SA).
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Br => Self::br(24, 3),
            ModelKind::Lr => Self::lr(72),
            ModelKind::Sa => Self::sa(2, 1, 24),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Br(BlockModel),
    Lr(LrModel),
    Sa(SaModel),
}

impl TrainedModel {
    fn inner(&self) -> &dyn TrafficForecaster {
        match self {
            TrainedModel::Br(m) => m,
            TrainedModel::Lr(m) => m,
            TrainedModel::Sa(m) => m,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            TrainedModel::Br(m) => ModelSpec::br(m.seasonality_m, m.window_w),
            TrainedModel::Lr(m) => ModelSpec::lr(m.window_w),
            TrainedModel::Sa(m) => ModelSpec::sa(m.ar_order, m.ma_order, m.seasonality),
        }
    }
}

impl TrafficForecaster for TrainedModel {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn params(&self) -> usize {
        self.inner().params()
    }

    fn seasonality(&self) -> usize {
        self.inner().seasonality()
    }

    fn window(&self) -> usize {
        self.inner().window()
    }

    fn arma_orders(&self) -> (usize, usize) {
        self.inner().arma_orders()
    }

    fn forecast_horizon(
        &self,
        t: &TrafficMatrix,
        bs: &str,
        start: u64,
        k: usize,
        mode: ForecastMode,
    ) -> Result<ForecastSeries> {
        self.inner().forecast_horizon(t, bs, start, k, mode)
    }
}

/// Fits `spec` on the first `train_hours` hours of `t`.
/// Training diagnostics are returned for the two CG-trained kinds.
pub fn fit(
    spec: &ModelSpec,
    t: &TrafficMatrix,
    train_hours: usize,
) -> Result<(TrainedModel, Option<TrainingDiagnostics>)> {
    let opts = CgOptions::default();
    Ok(match spec.kind {
        ModelKind::Br => {
            let (m, d) = train_br(t, spec.m, spec.w, train_hours, opts)?;
            (TrainedModel::Br(m), Some(d))
        }
        ModelKind::Lr => {
            let (m, d) = train_lr(t, spec.w, train_hours, opts)?;
            (TrainedModel::Lr(m), Some(d))
        }
        ModelKind::Sa => (
            TrainedModel::Sa(train_sa(t, spec.ar, spec.ma, spec.m, train_hours)?),
            None,
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    format_version: u32,
    params: usize,
    theta0: f64,
    theta: Vec<f64>,
    mu_x: Vec<f64>,
    sigma_x: Vec<f64>,
    mu_y: f64,
    sigma_y: f64,
    m: usize,
    w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaFile {
    format_version: u32,
    params: usize,
    m: usize,
    ar: usize,
    ma: usize,
    per_bs: BTreeMap<String, SaCoefficients>,
    failed: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelFile {
    Br(LinearFile),
    Lr(LinearFile),
    Sa(SaFile),
}

fn linear_file(theta0: f64, theta: &[f64], stats: &NormalizationStats, m: usize, w: usize) -> LinearFile {
    LinearFile {
        format_version: FORMAT_VERSION,
        params: w + 1,
        theta0,
        theta: theta.to_vec(),
        mu_x: stats.mu_x.clone(),
        sigma_x: stats.sigma_x.clone(),
        mu_y: stats.mu_y,
        sigma_y: stats.sigma_y,
        m,
        w,
    }
}

impl LinearFile {
    fn into_parts(self) -> Result<(f64, Vec<f64>, NormalizationStats)> {
        let w = self.w;
        for (name, len) in [
            ("theta", self.theta.len()),
            ("mu_x", self.mu_x.len()),
            ("sigma_x", self.sigma_x.len()),
        ] {
            if len != w {
                return Err(Error::InvalidConfig(format!(
                    "model file: {name} has {len} entries, w is {w}"
                )));
            }
        }
        let stats = NormalizationStats {
            mu_x: self.mu_x,
            sigma_x: self.sigma_x,
            mu_y: self.mu_y,
            sigma_y: self.sigma_y,
        };
        stats.validate()?;
        Ok((self.theta0, self.theta, stats))
    }
}

fn to_file(model: &TrainedModel) -> ModelFile {
    match model {
        TrainedModel::Br(m) => ModelFile::Br(linear_file(m.theta0, &m.theta, &m.stats, m.seasonality_m, m.window_w)),
        TrainedModel::Lr(m) => ModelFile::Lr(linear_file(m.theta0, &m.theta, &m.stats, 0, m.window_w)),
        TrainedModel::Sa(m) => ModelFile::Sa(SaFile {
            format_version: FORMAT_VERSION,
            params: m.params(),
            m: m.seasonality,
            ar: m.ar_order,
            ma: m.ma_order,
            per_bs: m.per_bs.clone(),
            failed: m.failed.clone(),
        }),
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!("unsupported model format_version {v}")));
    }
    Ok(())
}

fn from_file(file: ModelFile) -> Result<TrainedModel> {
    match file {
        ModelFile::Br(f) => {
            check_version(f.format_version)?;
            let m = f.m;
            if m == 0 {
                return Err(Error::InvalidConfig("model file: br model needs m >= 1".into()));
            }
            let w = f.w;
            let (theta0, theta, stats) = f.into_parts()?;
            Ok(TrainedModel::Br(BlockModel {
                theta0,
                theta,
                stats,
                seasonality_m: m,
                window_w: w,
            }))
        }
        ModelFile::Lr(f) => {
            check_version(f.format_version)?;
            let w = f.w;
            let (theta0, theta, stats) = f.into_parts()?;
            Ok(TrainedModel::Lr(LrModel {
                theta0,
                theta,
                stats,
                window_w: w,
            }))
        }
        ModelFile::Sa(f) => {
            check_version(f.format_version)?;
            for (id, c) in &f.per_bs {
                if c.phi.len() != f.ar || c.psi.len() != f.ma {
                    return Err(Error::InvalidConfig(format!(
                        "model file: orders of {id} do not match ar/ma"
                    )));
                }
            }
            Ok(TrainedModel::Sa(SaModel {
                per_bs: f.per_bs,
                seasonality: f.m,
                ar_order: f.ar,
                ma_order: f.ma,
                failed: f.failed,
            }))
        }
    }
}

/// Pretty-printed JSON model file.
pub fn write_model<W: Write>(model: &TrainedModel, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, &to_file(model))?;
    writer.write_all(b"\n").map_err(|e| Error::io("<model writer>", e))
}

pub fn read_model<R: Read>(reader: R) -> Result<TrainedModel> {
    from_file(serde_json::from_reader(reader)?)
}

/// Parameter count recorded in a model file, without rebuilding the model.
pub fn params_in_file(json: &str) -> Result<usize> {
    let v: serde_json::Value = serde_json::from_str(json)?;
    v.get("params")
        .and_then(serde_json::Value::as_u64)
        .map(|p| p as usize)
        .ok_or_else(|| Error::InvalidConfig("model file has no params field".into()))
}
