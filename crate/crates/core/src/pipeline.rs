//! Feature construction: seasonal differencing, window sliding and
//! column-wise z-score normalization.

use serde::{Deserialize, Serialize};

use crate::corpus::TrafficMatrix;
use crate::error::{Error, Result};

/// `(1 - D^M) T`: each row replaced by its lag-M differences.
#[derive(Debug, Clone)]
pub struct DifferencedMatrix<'a> {
    seasonality_m: usize,
    n_cols: usize,
    values: Vec<f64>,
    origin: &'a TrafficMatrix,
}

impl<'a> DifferencedMatrix<'a> {
    pub fn seasonality_m(&self) -> usize {
        self.seasonality_m
    }

    /// Number of differenced columns, `L - M`.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Entry `k` of row `i` is `t[i][k + M] - t[i][k]`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn origin(&self) -> &'a TrafficMatrix {
        self.origin
    }

    /// Absolute hour of differenced column 0.
    pub fn first_hour(&self) -> u64 {
        self.origin.start_hour() + self.seasonality_m as u64
    }
}

pub fn seasonal_difference(t: &TrafficMatrix, m: usize) -> Result<DifferencedMatrix<'_>> {
    let len = t.n_hours();
    if m >= len {
        return Err(Error::SeasonalityTooLarge { m, len });
    }
    if m == 0 {
        return Err(Error::InvalidConfig("seasonality must be at least 1".into()));
    }
    let n_cols = len - m;
    let mut values = Vec::with_capacity(t.n_bs() * n_cols);
    for row in t.rows() {
        values.extend(row[m..].iter().zip(row).map(|(now, past)| now - past));
    }
    Ok(DifferencedMatrix {
        seasonality_m: m,
        n_cols,
        values,
        origin: t,
    })
}

/// Origin of one feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub bs_index: usize,
    /// Absolute hour of the target value.
    pub target_hour: u64,
}

/// Windowed design matrix `x` (row-major, `n_samples × window_w`) and targets `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub window_w: usize,
    /// Differencing lag the features were built with; 0 for raw traffic.
    pub seasonality_m: usize,
}

impl FeatureSet {
    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.window_w..(r + 1) * self.window_w]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.window_w)
    }

    /// Column `j` of `x` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Builds a feature set from explicit rows; mostly useful for tests and tools.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let window_w = rows.first().map_or(0, Vec::len);
        if window_w == 0 {
            return Err(Error::InvalidConfig("feature rows must be nonempty".into()));
        }
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: y.len(),
            });
        }
        let mut x = Vec::with_capacity(rows.len() * window_w);
        for r in rows {
            if r.len() != window_w {
                return Err(Error::DimensionMismatch {
                    expected: window_w,
                    got: r.len(),
                });
            }
            x.extend_from_slice(r);
        }
        let provenance = (0..y.len())
            .map(|i| Provenance {
                bs_index: 0,
                target_hour: i as u64,
            })
            .collect();
        Ok(FeatureSet {
            x,
            y,
            provenance,
            window_w,
            seasonality_m: 0,
        })
    }

    /// Reorders rows by `perm` (row `r` of the result is row `perm[r]` of self).
    pub fn permuted(&self, perm: &[usize]) -> FeatureSet {
        let mut x = Vec::with_capacity(self.x.len());
        for &p in perm {
            x.extend_from_slice(self.row(p));
        }
        FeatureSet {
            x,
            y: perm.iter().map(|&p| self.y[p]).collect(),
            provenance: perm.iter().map(|&p| self.provenance[p]).collect(),
            window_w: self.window_w,
            seasonality_m: self.seasonality_m,
        }
    }
}

/// Slides a `w`-wide window over every series. Series position `k` sits at
/// absolute hour `first_hour + k`.
fn window_rows<'r>(
    series: impl Iterator<Item = &'r [f64]>,
    len: usize,
    w: usize,
    first_hour: u64,
    seasonality_m: usize,
) -> Result<FeatureSet> {
    if w == 0 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    if w >= len {
        return Err(Error::WindowTooLarge { w, len });
    }
    let per_series = len - w;
    let (lower, _) = series.size_hint();
    let mut x = Vec::with_capacity(lower * per_series * w);
    let mut y = Vec::with_capacity(lower * per_series);
    let mut provenance = Vec::with_capacity(lower * per_series);
    for (bs_index, s) in series.enumerate() {
        for target in w..len {
            x.extend_from_slice(&s[target - w..target]);
            y.push(s[target]);
            provenance.push(Provenance {
                bs_index,
                target_hour: first_hour + target as u64,
            });
        }
    }
    Ok(FeatureSet {
        x,
        y,
        provenance,
        window_w: w,
        seasonality_m,
    })
}

/// Windows of `w` consecutive differenced values (oldest first) with the
/// following value as target; `(L - M - w) * N` rows ordered by
/// (station, target hour).
pub fn slide_windows(d: &DifferencedMatrix<'_>, w: usize) -> Result<FeatureSet> {
    window_rows(d.rows(), d.n_cols(), w, d.first_hour(), d.seasonality_m())
}

/// Same windowing directly over raw traffic (no differencing).
pub fn slide_windows_raw(t: &TrafficMatrix, w: usize) -> Result<FeatureSet> {
    window_rows(t.rows(), t.n_hours(), w, t.start_hour(), 0)
}

/// Column means and sample standard deviations of `x`, plus those of `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mu_x: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl NormalizationStats {
    /// Stats that leave every value unchanged.
    pub fn identity(w: usize) -> Self {
        NormalizationStats {
            mu_x: vec![0.0; w],
            sigma_x: vec![1.0; w],
            mu_y: 0.0,
            sigma_y: 1.0,
        }
    }

    pub fn window_w(&self) -> usize {
        self.mu_x.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_x.len() != self.mu_x.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu_x.len(),
                got: self.sigma_x.len(),
            });
        }
        let all_positive = self
            .sigma_x
            .iter()
            .chain(std::iter::once(&self.sigma_y))
            .all(|s| s.is_finite() && *s > 0.0);
        if !all_positive {
            return Err(Error::InvalidConfig("standard deviations must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize_x(&self, j: usize, v: f64) -> f64 {
        (v - self.mu_x[j]) / self.sigma_x[j]
    }

    #[inline]
    pub fn denormalize_y(&self, v: f64) -> f64 {
        self.mu_y + v * self.sigma_y
    }
}

/// Mean and sample standard deviation (divisor n - 1); a zero deviation is stored as 1.
fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

pub fn fit_normalization(f: &FeatureSet) -> Result<NormalizationStats> {
    let n = f.n_samples();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let (mu_x, sigma_x) = (0..f.window_w)
        .map(|j| mean_std(f.rows().map(move |r| r[j]), n))
        .unzip();
    let (mu_y, sigma_y) = mean_std(f.y.iter().copied(), n);
    Ok(NormalizationStats {
        mu_x,
        sigma_x,
        mu_y,
        sigma_y,
    })
}

/// Features after z-scoring, together with the stats used.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFeatures {
    pub features: FeatureSet,
    pub stats: NormalizationStats,
}

impl NormalizedFeatures {
    /// Undoes the normalization.
    pub fn denormalize(&self) -> FeatureSet {
        let s = &self.stats;
        let w = self.features.window_w;
        let x = self
            .features
            .x
            .iter()
            .enumerate()
            .map(|(k, v)| s.mu_x[k % w] + v * s.sigma_x[k % w])
            .collect();
        FeatureSet {
            x,
            y: self.features.y.iter().map(|v| s.denormalize_y(*v)).collect(),
            ..self.features.clone()
        }
    }
}

pub fn apply_normalization(f: &FeatureSet, s: &NormalizationStats) -> Result<NormalizedFeatures> {
    if s.window_w() != f.window_w {
        return Err(Error::DimensionMismatch {
            expected: f.window_w,
            got: s.window_w(),
        });
    }
    s.validate()?;
    let w = f.window_w;
    let x = f.x.iter().enumerate().map(|(k, v)| s.normalize_x(k % w, *v)).collect();
    let y = f.y.iter().map(|v| (v - s.mu_y) / s.sigma_y).collect();
    Ok(NormalizedFeatures {
        features: FeatureSet {
            x,
            y,
            provenance: f.provenance.clone(),
            window_w: w,
            seasonality_m: f.seasonality_m,
        },
        stats: s.clone(),
    })
}

/// Fits stats on `f` and applies them.
pub fn normalize(f: &FeatureSet) -> Result<NormalizedFeatures> {
    apply_normalization(f, &fit_normalization(f)?)
}
