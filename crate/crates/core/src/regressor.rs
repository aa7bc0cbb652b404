//! The shared linear model and its least-squares training.
//!
//! With normalized features `x̂` and target `ŷ` the model is
//! `ŷ ≈ θ₀ + Σ_j θ_j x̂_j` and training minimizes
//! `J(θ) = 1/(2 N_s) Σ_i (ŷ_i - θ₀ - Σ_j θ_j x̂_ij)²`.
//!
//! [`train_cg`] runs linear conjugate gradient on the normal equations of
//! `J`; [`train_normal_equations`] is a direct dense solve used to check it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::TrafficMatrix;
use crate::error::{Error, Result};
use crate::pipeline::{
    normalize, seasonal_difference, slide_windows, FeatureSet, NormalizationStats, NormalizedFeatures,
};

/// Trained intercept and weights plus everything needed to forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockModel {
    pub theta0: f64,
    /// Weights by window position, oldest lag first.
    pub theta: Vec<f64>,
    pub stats: NormalizationStats,
    pub seasonality_m: usize,
    pub window_w: usize,
}

impl BlockModel {
    /// Model with every coefficient zero.
    pub fn zeros(stats: NormalizationStats, seasonality_m: usize) -> Self {
        let window_w = stats.window_w();
        BlockModel {
            theta0: 0.0,
            theta: vec![0.0; window_w],
            stats,
            seasonality_m,
            window_w,
        }
    }

    /// Trainable parameter count: intercept plus one weight per window position.
    pub fn params(&self) -> usize {
        self.window_w + 1
    }

    /// Intercept followed by the weights.
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.theta0).chain(self.theta.iter().copied()).collect()
    }

    pub fn with_coefficients(&self, coef: &[f64]) -> BlockModel {
        BlockModel {
            theta0: coef[0],
            theta: coef[1..].to_vec(),
            ..self.clone()
        }
    }

    /// Linear prediction on the normalized scale.
    #[inline]
    pub fn predict_normalized(&self, x_hat: &[f64]) -> f64 {
        self.theta0 + self.theta.iter().zip(x_hat).map(|(t, x)| t * x).sum::<f64>()
    }

    fn check_dims(&self, f: &FeatureSet) -> Result<()> {
        if self.theta.len() != f.window_w {
            return Err(Error::DimensionMismatch {
                expected: f.window_w,
                got: self.theta.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub final_cost: f64,
    pub iterations: usize,
    /// `ŷ_i - θ₀ - Σ θ_j x̂_ij` at the returned coefficients.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop once the Euclidean norm of the gradient of `J` is at most this.
    pub tol: f64,
    /// `None` means `10 * (W + 1)`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

pub fn residuals(model: &BlockModel, f: &FeatureSet) -> Result<Vec<f64>> {
    model.check_dims(f)?;
    Ok(f.rows()
        .zip(&f.y)
        .map(|(x, y)| y - model.predict_normalized(x))
        .collect())
}

fn half_mean_square(r: &[f64]) -> f64 {
    r.iter().map(|e| e * e).sum::<f64>() / (2.0 * r.len() as f64)
}

/// `J(θ)` over normalized features.
pub fn cost(model: &BlockModel, f: &FeatureSet) -> Result<f64> {
    if f.n_samples() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(half_mean_square(&residuals(model, f)?))
}

/// `∇J(θ)`, intercept component first.
pub fn gradient(model: &BlockModel, f: &FeatureSet) -> Result<Vec<f64>> {
    let r = residuals(model, f)?;
    let n = f.n_samples() as f64;
    let mut g = vec![0.0; model.window_w + 1];
    for (x, e) in f.rows().zip(&r) {
        g[0] -= e;
        for (gj, xj) in g[1..].iter_mut().zip(x) {
            *gj -= e * xj;
        }
    }
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

/// Augmented Gram system `A = Zᵀ Z / N`, `b = Zᵀ ŷ / N` with `Z = [1 | x̂]`.
/// Row-major dense `A`; summation order is fixed.
struct NormalSystem {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NormalSystem {
    fn assemble(f: &FeatureSet) -> Self {
        let dim = f.window_w + 1;
        let mut a = vec![0.0; dim * dim];
        let mut b = vec![0.0; dim];
        let mut z = vec![1.0; dim];
        for (x, y) in f.rows().zip(&f.y) {
            z[1..].copy_from_slice(x);
            for i in 0..dim {
                let zi = z[i];
                b[i] += zi * y;
                let row = &mut a[i * dim..(i + 1) * dim];
                for j in i..dim {
                    row[j] += zi * z[j];
                }
            }
        }
        let n = f.n_samples() as f64;
        for i in 0..dim {
            b[i] /= n;
            for j in i..dim {
                let v = a[i * dim + j] / n;
                a[i * dim + j] = v;
                a[j * dim + i] = v;
            }
        }
        NormalSystem { dim, a, b }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.a.chunks_exact(self.dim).map(|row| dot(row, v)).collect()
    }

    /// `b - A θ`, i.e. the negative gradient.
    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        self.apply(theta).iter().zip(&self.b).map(|(at, b)| b - at).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `J` by linear conjugate gradient from `θ = 0`.
///
/// Returns [`Error::NotConverged`] carrying the best iterate when the
/// gradient norm is still above `opts.tol` after `max_iter` steps.
pub fn train_cg(nf: &NormalizedFeatures, opts: CgOptions) -> Result<(BlockModel, TrainingDiagnostics)> {
    let f = &nf.features;
    let dim = f.window_w + 1;
    if f.n_samples() < dim {
        return Err(Error::Underdetermined {
            samples: f.n_samples(),
            params: dim,
        });
    }
    let max_iter = opts.max_iter.unwrap_or(10 * dim);
    let sys = NormalSystem::assemble(f);

    let mut theta = vec![0.0; dim];
    let mut r = sys.residual(&theta);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (norm(&r), theta.clone());
    let mut iterations = 0;

    while iterations < max_iter && best.0 > opts.tol {
        let ap = sys.apply(&p);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            break;
        }
        let alpha = rr / curvature;
        for ((t, pi), (ri, api)) in theta.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *t += alpha * pi;
            *ri -= alpha * api;
        }
        iterations += 1;

        // the recurrence drifts in floating point; judge convergence on the true gradient
        let true_r = sys.residual(&theta);
        let g = norm(&true_r);
        if g < best.0 {
            best = (g, theta.clone());
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        if rr == 0.0 {
            break;
        }
    }

    let (grad_norm, coef) = best;
    let model = BlockModel {
        theta0: coef[0],
        theta: coef[1..].to_vec(),
        stats: nf.stats.clone(),
        seasonality_m: f.seasonality_m,
        window_w: f.window_w,
    };
    let res = residuals(&model, f)?;
    let diagnostics = TrainingDiagnostics {
        final_cost: half_mean_square(&res),
        iterations,
        residuals: res,
        converged: grad_norm <= opts.tol,
        grad_norm,
    };
    if diagnostics.converged {
        Ok((model, diagnostics))
    } else {
        Err(Error::NotConverged {
            iterations,
            grad_norm,
            model: Box::new(model),
            diagnostics: Box::new(diagnostics),
        })
    }
}

/// Full block-model fit on the first `train_hours` columns of `t`:
/// difference at lag `m`, window `w`, normalize, then conjugate gradient.
pub fn train_br(
    t: &TrafficMatrix,
    m: usize,
    w: usize,
    train_hours: usize,
    opts: CgOptions,
) -> Result<(BlockModel, TrainingDiagnostics)> {
    let train = t.slice_hours(0..train_hours.min(t.n_hours()))?;
    let features = slide_windows(&seasonal_difference(&train, m)?, w)?;
    train_cg(&normalize(&features)?, opts)
}

/// Reciprocal condition below which the Gram matrix is treated as singular.
const SINGULAR_RCOND: f64 = 1e-13;

/// Direct dense solve of the normal equations `(ZᵀZ) θ = Zᵀŷ`.
pub fn train_normal_equations(nf: &NormalizedFeatures) -> Result<BlockModel> {
    let f = &nf.features;
    let dim = f.window_w + 1;
    let n = f.n_samples();
    if n < dim {
        return Err(Error::Underdetermined {
            samples: n,
            params: dim,
        });
    }
    let z = DMatrix::from_fn(n, dim, |i, j| if j == 0 { 1.0 } else { f.x[i * f.window_w + j - 1] });
    let y = DVector::from_column_slice(&f.y);
    let gram = z.transpose() * &z;
    let rhs = z.transpose() * y;

    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if min.is_nan() || min <= max * SINGULAR_RCOND {
        return Err(Error::SingularSystem { condition });
    }
    let chol = gram.cholesky().ok_or(Error::SingularSystem { condition })?;
    let coef = chol.solve(&rhs);
    Ok(BlockModel {
        theta0: coef[0],
        theta: coef.iter().skip(1).copied().collect(),
        stats: nf.stats.clone(),
        seasonality_m: f.seasonality_m,
        window_w: f.window_w,
    })
}
