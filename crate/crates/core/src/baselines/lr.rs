use serde::{Deserialize, Serialize};

use crate::corpus::TrafficMatrix;
use crate::error::Result;
use crate::forecaster::{predict_linear, roll_horizon, ForecastMode, ForecastSeries, ModelKind, TrafficForecaster};
use crate::pipeline::{normalize, slide_windows_raw, NormalizationStats};
use crate::regressor::{train_cg, CgOptions, TrainingDiagnostics};

/// Block linear regression over raw (undifferenced) traffic lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub stats: NormalizationStats,
    pub window_w: usize,
}

impl LrModel {
    pub fn params(&self) -> usize {
        self.window_w + 1
    }
}

/// Same window/normalize/CG pipeline as the block model, without differencing.
pub fn train_lr(
    t: &TrafficMatrix,
    w: usize,
    train_hours: usize,
    opts: CgOptions,
) -> Result<(LrModel, TrainingDiagnostics)> {
    let train = t.slice_hours(0..train_hours.min(t.n_hours()))?;
    let features = slide_windows_raw(&train, w)?;
    let (m, diag) = train_cg(&normalize(&features)?, opts)?;
    Ok((
        LrModel {
            theta0: m.theta0,
            theta: m.theta,
            stats: m.stats,
            window_w: m.window_w,
        },
        diag,
    ))
}

/// `t̃_l = μ^Y + (θ₀ + Σ θ_p x̂_p) σ^Y` over the previous `w` raw values.
pub fn forecast_lr(
    model: &LrModel,
    t: &TrafficMatrix,
    bs: &str,
    start: u64,
    k: usize,
    mode: ForecastMode,
) -> Result<ForecastSeries> {
    roll_horizon(t, bs, start, k, mode, model.window_w, |h| {
        predict_linear(model.theta0, &model.theta, &model.stats, 0, h)
    })
}

impl TrafficForecaster for LrModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lr
    }

    fn params(&self) -> usize {
        LrModel::params(self)
    }

    fn seasonality(&self) -> usize {
        0
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
        forecast_lr(self, t, bs, start, k, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize, SynthConfig};
    use crate::pipeline::{seasonal_difference, slide_windows};
    use crate::regressor::train_br;

    fn corpus(n_bs: usize, n_hours: usize) -> TrafficMatrix {
        synthesize(&SynthConfig {
            n_bs,
            n_hours,
            seed: 17,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn three_day_window_has_73_parameters() {
        let t = corpus(6, 200);
        let (m, _) = train_lr(&t, 72, 160, CgOptions::default()).unwrap();
        assert_eq!(m.params(), 73);
        assert_eq!(m.theta.len(), 72);
    }

    #[test]
    fn zero_model_predicts_target_mean() {
        let t = corpus(2, 60);
        let m = LrModel {
            theta0: 0.0,
            theta: vec![0.0; 3],
            stats: NormalizationStats {
                mu_y: 4.25,
                ..NormalizationStats::identity(3)
            },
            window_w: 3,
        };
        let s = forecast_lr(&m, &t, &t.bs_ids()[0], 10, 20, ForecastMode::OneStep).unwrap();
        assert!(s.forecast.iter().all(|v| *v == 4.25));
    }

    #[test]
    fn constant_corpus_forecasts_the_constant() {
        // every column is constant, so each sigma is guarded to 1 and the fit is θ = 0
        let t = TrafficMatrix::new(vec!["a".into(), "b".into()], vec![vec![3.5; 80], vec![3.5; 80]], 0).unwrap();
        let (m, _) = train_lr(&t, 5, 60, CgOptions::default()).unwrap();
        let s = forecast_lr(&m, &t, "b", 60, 20, ForecastMode::Recursive).unwrap();
        assert!(s.forecast.iter().all(|v| (*v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn raw_and_differenced_features_differ() {
        let t = corpus(3, 120);
        let raw = slide_windows_raw(&t, 3).unwrap();
        let diff = slide_windows(&seasonal_difference(&t, 24).unwrap(), 3).unwrap();
        assert_ne!(raw.n_samples(), diff.n_samples());
        assert_ne!(raw.row(30), diff.row(30));
    }

    #[test]
    fn single_step_modes_agree() {
        let t = corpus(4, 150);
        let (m, _) = train_lr(&t, 24, 120, CgOptions::default()).unwrap();
        let id = &t.bs_ids()[2];
        let a = forecast_lr(&m, &t, id, 120, 1, ForecastMode::OneStep).unwrap();
        let b = forecast_lr(&m, &t, id, 120, 1, ForecastMode::Recursive).unwrap();
        assert_eq!(a.forecast, b.forecast);
    }

    #[test]
    fn lr_on_predifferenced_corpus_equals_block_model() {
        let t = corpus(5, 160);
        let (m_lag, w, train_hours) = (24, 3, 130);
        let (br, _) = train_br(&t, m_lag, w, train_hours, CgOptions::default()).unwrap();

        // differences can be negative; a constant offset keeps the matrix
        // nonnegative and is absorbed by the normalization
        let head = t.slice_hours(0..train_hours).unwrap();
        let d = seasonal_difference(&head, m_lag).unwrap();
        let offset = -d.rows().flatten().fold(0.0f64, |a, v| a.min(*v));
        let rows = d.rows().map(|r| r.iter().map(|v| v + offset).collect()).collect();
        let pre = TrafficMatrix::new(t.bs_ids().to_vec(), rows, 0).unwrap();
        let (lr, _) = train_lr(&pre, w, pre.n_hours(), CgOptions::default()).unwrap();

        assert!((br.theta0 - lr.theta0).abs() < 1e-9);
        for (a, b) in br.theta.iter().zip(&lr.theta) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
