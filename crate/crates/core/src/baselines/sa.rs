//! Per-station seasonal ARIMA: a lag-`s` seasonal difference followed by an
//! ARMA(p, q) with intercept, estimated by the Hannan–Rissanen two-stage
//! least-squares procedure.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TrafficMatrix;
use crate::error::{Error, Result};
use crate::forecaster::{roll_horizon, ForecastMode, ForecastSeries, ModelKind, TrafficForecaster};
use crate::linalg::least_squares;

/// ARMA coefficients of one station on the differenced scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaCoefficients {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub intercept: f64,
    /// Innovation variance estimate.
    pub sigma2: f64,
}

impl SaCoefficients {
    /// AR and MA weights, intercept and innovation variance.
    pub fn params(&self) -> usize {
        self.phi.len() + self.psi.len() + 2
    }

    fn predict(&self, z: &[f64], e: &[f64], at: usize) -> f64 {
        let ar: f64 = self.phi.iter().enumerate().map(|(i, p)| p * z[at - 1 - i]).sum();
        let ma: f64 = self.psi.iter().enumerate().map(|(j, p)| p * e[at - 1 - j]).sum();
        self.intercept + ar + ma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaModel {
    pub per_bs: BTreeMap<String, SaCoefficients>,
    pub seasonality: usize,
    pub ar_order: usize,
    pub ma_order: usize,
    /// Stations whose fit failed, with the reason.
    pub failed: BTreeMap<String, String>,
}

impl SaModel {
    /// `(p + q + 2)` per fitted station.
    pub fn params(&self) -> usize {
        self.per_bs.values().map(SaCoefficients::params).sum()
    }

    fn history_needed(&self) -> usize {
        self.seasonality + self.ar_order.max(self.ma_order)
    }
}

/// Order of the long autoregression used for residual proxies:
/// `⌈1.5 √n⌉`, capped at `n / 4`.
pub fn long_ar_order(n: usize) -> usize {
    let order = (1.5 * (n as f64).sqrt()).ceil() as usize;
    order.min(n / 4).max(1)
}

/// Regresses `z[t]` on an intercept and the given lagged regressors for
/// `t in first..n`. Returns coefficients and residuals.
fn lagged_regression(z: &[f64], first: usize, lags: &[(&[f64], usize)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = z.len();
    let cols = 1 + lags.iter().map(|(_, k)| k).sum::<usize>();
    let rows = n.saturating_sub(first);
    if rows <= cols {
        return Err(Error::InsufficientHistory {
            needed: first + cols + 1,
            available: n,
        });
    }
    let mut design = DMatrix::zeros(rows, cols);
    for (r, t) in (first..n).enumerate() {
        design[(r, 0)] = 1.0;
        let mut c = 1;
        for (series, order) in lags {
            for lag in 1..=*order {
                design[(r, c)] = series[t - lag];
                c += 1;
            }
        }
    }
    let target = DVector::from_column_slice(&z[first..]);
    let beta = least_squares(design.clone(), &target)?;
    let fitted = &design * &beta;
    let resid = target.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    Ok((beta.iter().copied().collect(), resid))
}

/// Hannan–Rissanen estimate of an ARMA(`ar`, `ma`) with intercept on `z`.
///
/// Stage one fits a long autoregression and keeps its residuals as proxies
/// for the innovations. Stage two regresses `z` on its own `ar` lags and
/// `ma` lags of those proxies. With `ma == 0` only stage two runs.
pub fn hannan_rissanen(z: &[f64], ar: usize, ma: usize) -> Result<SaCoefficients> {
    let n = z.len();
    let mut proxies = vec![0.0; n];
    let first = if ma > 0 {
        let long = long_ar_order(n).max(ar).max(ma);
        let (_, resid) = lagged_regression(z, long, &[(z, long)])?;
        proxies[long..].copy_from_slice(&resid);
        ar.max(long + ma)
    } else {
        ar
    };

    let (beta, resid) = lagged_regression(z, first, &[(z, ar), (&proxies, ma)])?;
    let dof = (resid.len() - beta.len()).max(1) as f64;
    let (psi, gain) = invertible_ma(&beta[1 + ar..]);
    Ok(SaCoefficients {
        intercept: beta[0],
        phi: beta[1..=ar].to_vec(),
        psi,
        sigma2: gain * resid.iter().map(|e| e * e).sum::<f64>() / dof,
    })
}

/// Reflects MA inverse roots lying on or outside the unit circle.
///
/// Returns the new coefficients and the factor by which the innovation
/// variance grows so the autocovariances are unchanged. A non-invertible
/// MA part makes the residual recursion diverge at forecast time.
fn invertible_ma(psi: &[f64]) -> (Vec<f64>, f64) {
    let q = psi.len();
    if q == 0 {
        return (Vec::new(), 1.0);
    }
    let companion = DMatrix::from_fn(q, q, |i, j| match i {
        0 => -psi[j],
        _ if j + 1 == i => 1.0,
        _ => 0.0,
    });
    let roots = companion.complex_eigenvalues();
    if roots.iter().all(|r| r.norm() < 1.0) {
        return (psi.to_vec(), 1.0);
    }
    let mut gain = 1.0;
    let mut poly = vec![Complex::new(1.0, 0.0)];
    for r in roots.iter() {
        let norm = r.norm();
        let r = if norm >= 1.0 {
            gain *= norm * norm;
            // a root exactly on the circle is pulled just inside
            (1.0 / r.conj()) * (1.0 - 1e-6)
        } else {
            *r
        };
        let mut next = poly.clone();
        next.push(Complex::new(0.0, 0.0));
        for (k, c) in poly.iter().enumerate() {
            next[k + 1] -= r * c;
        }
        poly = next;
    }
    (poly[1..].iter().map(|c| c.re).collect(), gain)
}

/// Fits every station independently on its first `train_hours` hours.
/// Stations whose fit fails are listed in [`SaModel::failed`].
pub fn train_sa(t: &TrafficMatrix, ar: usize, ma: usize, s: usize, train_hours: usize) -> Result<SaModel> {
    if s == 0 {
        return Err(Error::InvalidConfig("seasonality must be at least 1".into()));
    }
    let train_hours = train_hours.min(t.n_hours());
    let needed = s + ar + ma + 20;
    if train_hours < needed {
        return Err(Error::InsufficientHistory {
            needed,
            available: train_hours,
        });
    }
    let fits: Vec<(String, Result<SaCoefficients>)> = (0..t.n_bs())
        .into_par_iter()
        .map(|i| {
            let row = &t.row(i)[..train_hours];
            let z: Vec<f64> = row[s..].iter().zip(row).map(|(a, b)| a - b).collect();
            (t.bs_ids()[i].clone(), hannan_rissanen(&z, ar, ma))
        })
        .collect();

    let mut per_bs = BTreeMap::new();
    let mut failed = BTreeMap::new();
    for (id, fit) in fits {
        match fit {
            Ok(c) => {
                per_bs.insert(id, c);
            }
            Err(e) => {
                failed.insert(id, e.to_string());
            }
        }
    }
    Ok(SaModel {
        per_bs,
        seasonality: s,
        ar_order: ar,
        ma_order: ma,
        failed,
    })
}

/// One-step ARMA prediction of the seasonal difference, filtered over the
/// available history with running residuals, plus `t_{l-s}`.
pub fn forecast_sa(
    model: &SaModel,
    t: &TrafficMatrix,
    bs: &str,
    start: u64,
    k: usize,
    mode: ForecastMode,
) -> Result<ForecastSeries> {
    let coef = model.per_bs.get(bs).ok_or_else(|| Error::UnknownBs(bs.to_string()))?;
    let s = model.seasonality;
    let warmup = model.ar_order.max(model.ma_order);
    let mut z: Vec<f64> = Vec::new();
    let mut e: Vec<f64> = Vec::new();
    roll_horizon(t, bs, start, k, mode, model.history_needed(), |h| {
        // extend the filtered differences over values appended since the last call
        while z.len() + s < h.len() {
            let at = z.len();
            let value = h[at + s] - h[at];
            let innovation = if at >= warmup {
                value - coef.predict(&z, &e, at)
            } else {
                0.0
            };
            z.push(value);
            e.push(innovation);
        }
        let at = z.len();
        Ok(coef.predict(&z, &e, at) + h[at])
    })
}

impl TrafficForecaster for SaModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Sa
    }

    fn params(&self) -> usize {
        SaModel::params(self)
    }

    fn seasonality(&self) -> usize {
        self.seasonality
    }

    fn window(&self) -> usize {
        0
    }

    fn arma_orders(&self) -> (usize, usize) {
        (self.ar_order, self.ma_order)
    }

    fn forecast_horizon(
        &self,
        t: &TrafficMatrix,
        bs: &str,
        start: u64,
        k: usize,
        mode: ForecastMode,
    ) -> Result<ForecastSeries> {
        forecast_sa(self, t, bs, start, k, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn simulate_arma(seed: u64, n: usize, phi: &[f64], psi: &[f64]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let burn = 200;
        let mut z = vec![0.0; n + burn];
        let mut e = vec![0.0; n + burn];
        for t in 0..n + burn {
            e[t] = noise.sample(&mut rng);
            let mut v = e[t];
            for (i, p) in phi.iter().enumerate() {
                if t > i {
                    v += p * z[t - 1 - i];
                }
            }
            for (j, p) in psi.iter().enumerate() {
                if t > j {
                    v += p * e[t - 1 - j];
                }
            }
            z[t] = v;
        }
        z.split_off(burn)
    }

    /// Integrates a differenced series back into nonnegative traffic.
    fn integrate(z: &[f64], s: usize, base: f64) -> Vec<f64> {
        let mut t: Vec<f64> = (0..s).map(|h| base + (h as f64 * 0.3).sin()).collect();
        for (k, v) in z.iter().enumerate() {
            t.push(t[k] + v);
        }
        t
    }

    #[test]
    fn non_invertible_ma_is_reflected() {
        let (psi, gain) = invertible_ma(&[-2.0]);
        assert!((psi[0] + 0.5).abs() < 1e-5);
        assert!((gain - 4.0).abs() < 1e-12);

        // (1 - 2B)(1 - 0.5B) = 1 - 2.5B + B^2 -> (1 - 0.5B)^2
        let (psi, gain) = invertible_ma(&[-2.5, 1.0]);
        assert!((psi[0] + 1.0).abs() < 1e-5 && (psi[1] - 0.25).abs() < 1e-5, "{psi:?}");
        assert!((gain - 4.0).abs() < 1e-9);

        let (psi, gain) = invertible_ma(&[0.3, -0.1]);
        assert_eq!(psi, vec![0.3, -0.1]);
        assert_eq!(gain, 1.0);
    }

    #[test]
    fn long_order_rule() {
        assert_eq!(long_ar_order(216), 23);
        assert_eq!(long_ar_order(240), 24);
        assert_eq!(long_ar_order(20), 5);
        assert_eq!(long_ar_order(8), 2);
    }

    #[test]
    fn parameter_accounting_matches_fleet_size() {
        let coef = SaCoefficients {
            phi: vec![0.0; 2],
            psi: vec![0.0; 1],
            intercept: 0.0,
            sigma2: 1.0,
        };
        let per_bs = (0..200).map(|i| (format!("bs_{i:04}"), coef.clone())).collect();
        let m = SaModel {
            per_bs,
            seasonality: 24,
            ar_order: 2,
            ma_order: 1,
            failed: BTreeMap::new(),
        };
        assert_eq!(m.params(), 1000);
    }

    #[test]
    fn recovers_ar2_coefficients() {
        let mut mean = [0.0; 2];
        for seed in 0..20 {
            let c = hannan_rissanen(&simulate_arma(seed, 240, &[0.5, 0.3], &[]), 2, 0).unwrap();
            mean[0] += c.phi[0] / 20.0;
            mean[1] += c.phi[1] / 20.0;
        }
        assert!((mean[0] - 0.5).abs() < 0.1 && (mean[1] - 0.3).abs() < 0.1, "{mean:?}");
    }

    #[test]
    fn white_noise_gives_small_coefficients() {
        let z = simulate_arma(0, 240, &[], &[]);
        let c = hannan_rissanen(&z, 2, 0).unwrap();
        assert!(c.phi.iter().all(|p| p.abs() <= 0.15), "{c:?}");
        assert!(c.intercept.abs() < 0.2);
    }

    #[test]
    fn recovers_arma11_coefficients() {
        let z = simulate_arma(5, 2000, &[0.6], &[0.4]);
        let c = hannan_rissanen(&z, 1, 1).unwrap();
        assert!((c.phi[0] - 0.6).abs() < 0.1, "{c:?}");
        assert!((c.psi[0] - 0.4).abs() < 0.1, "{c:?}");
        assert!((c.sigma2 - 1.0).abs() < 0.15);
    }

    #[test]
    fn zero_coefficients_are_seasonal_naive() {
        let rows = vec![(0..100)
            .map(|h| 10.0 + (h as f64 * 0.7).sin() * 3.0 + h as f64 * 0.01)
            .collect()];
        let t = TrafficMatrix::new(vec!["a".into()], rows, 0).unwrap();
        let mut per_bs = BTreeMap::new();
        per_bs.insert(
            "a".to_string(),
            SaCoefficients {
                phi: vec![],
                psi: vec![],
                intercept: 0.0,
                sigma2: 1.0,
            },
        );
        let m = SaModel {
            per_bs,
            seasonality: 24,
            ar_order: 0,
            ma_order: 0,
            failed: BTreeMap::new(),
        };
        let s = forecast_sa(&m, &t, "a", 60, 40, ForecastMode::OneStep).unwrap();
        for (i, f) in s.forecast.iter().enumerate() {
            assert_eq!(*f, t.row(0)[60 + i - 24]);
        }
    }

    #[test]
    fn periodic_traffic_forecast_exactly() {
        let row: Vec<f64> = (0..24 * 8).map(|h| 5.0 + ((h % 24) as f64).sqrt()).collect();
        let t = TrafficMatrix::new(vec!["a".into()], vec![row], 0).unwrap();
        let mut per_bs = BTreeMap::new();
        per_bs.insert(
            "a".to_string(),
            SaCoefficients {
                phi: vec![0.4, -0.2],
                psi: vec![0.3],
                intercept: 0.0,
                sigma2: 1.0,
            },
        );
        let m = SaModel {
            per_bs,
            seasonality: 24,
            ar_order: 2,
            ma_order: 1,
            failed: BTreeMap::new(),
        };
        for mode in [ForecastMode::OneStep, ForecastMode::Recursive] {
            let s = forecast_sa(&m, &t, "a", 96, 96, mode).unwrap();
            assert_eq!(&s.forecast, s.actual.as_ref().unwrap());
        }
    }

    #[test]
    fn periodic_training_series_fails_and_is_counted() {
        let periodic: Vec<f64> = (0..300).map(|h| 5.0 + ((h % 24) as f64).sqrt()).collect();
        let z = simulate_arma(9, 300 - 24, &[0.5], &[]);
        let noisy = integrate(&z, 24, 50.0);
        let t = TrafficMatrix::new(vec!["flat".into(), "noisy".into()], vec![periodic, noisy], 0).unwrap();
        let m = train_sa(&t, 2, 1, 24, 240).unwrap();
        assert_eq!(m.per_bs.len(), 1);
        assert!(m.failed.contains_key("flat"));
        assert_eq!(m.params(), 5);
        assert!(matches!(
            forecast_sa(&m, &t, "flat", 240, 10, ForecastMode::OneStep),
            Err(Error::UnknownBs(_))
        ));
        assert!(forecast_sa(&m, &t, "noisy", 240, 60, ForecastMode::OneStep).is_ok());
    }

    #[test]
    fn short_training_range_is_rejected() {
        let t = TrafficMatrix::new(vec!["a".into()], vec![vec![1.0; 100]], 0).unwrap();
        assert!(matches!(
            train_sa(&t, 2, 1, 24, 46),
            Err(Error::InsufficientHistory { needed: 47, .. })
        ));
    }

    #[test]
    fn modes_agree_on_first_step_and_one_step_uses_residuals() {
        let z = simulate_arma(13, 300, &[0.6, -0.2], &[0.3]);
        let row = integrate(&z, 24, 40.0);
        let t = TrafficMatrix::new(vec!["a".into()], vec![row], 0).unwrap();
        let m = train_sa(&t, 2, 1, 24, 240).unwrap();
        let a = forecast_sa(&m, &t, "a", 240, 50, ForecastMode::OneStep).unwrap();
        let b = forecast_sa(&m, &t, "a", 240, 50, ForecastMode::Recursive).unwrap();
        assert_eq!(a.forecast[0], b.forecast[0]);
        assert_ne!(a.forecast[1..], b.forecast[1..]);
    }
}
