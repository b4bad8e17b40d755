use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Neighborhood;
use crate::error::{Error, Result};

/// Responses spanning less than this (relative to their magnitude, floored
/// at 1) are treated as constant.
const CONSTANT_RANGE: f64 = 1e-12;

/// Smallest admissible squared Cholesky pivot relative to the largest
/// diagonal entry of the normal matrix.
const PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted Pearson correlation between surrogate and black box over the
    /// neighborhood; 0 when undefined.
    pub faithfulness_r: f64,
    pub faithfulness_defined: bool,
    /// Responses were constant, so the fit is trivially flat.
    pub constant_response: bool,
}

impl SurrogateFit {
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(z)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

/// Weighted ridge regression of responses on mask bits,
/// `min Σ πᵢ (yᵢ − w·zᵢ − b)² + λ‖w‖²`, with the intercept unpenalized.
///
/// Solved on weighted-centered data, which eliminates `b` exactly:
/// `(Zcᵀ Π Zc + λI) w = Zcᵀ Π yc` and `b = ȳ − w·z̄`.
pub fn fit_surrogate(neighborhood: &Neighborhood, ridge_lambda: f64) -> Result<SurrogateFit> {
    let n = neighborhood.len();
    let d = neighborhood.d_prime();
    if n < 2 || d == 0 {
        return Err(Error::InvalidArgument(
            "surrogate needs at least two neighbors and one component".into(),
        ));
    }
    if neighborhood.responses.len() != n || neighborhood.proximity.len() != n {
        return Err(Error::DimensionMismatch(
            "masks, responses and proximity differ in length".into(),
        ));
    }
    if !ridge_lambda.is_finite() || ridge_lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ridge_lambda must be finite and non-negative, got {ridge_lambda}"
        )));
    }
    let y = &neighborhood.responses;
    let pi = &neighborhood.proximity;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite response at neighbor {i}")));
    }
    if pi.iter().any(|&p| !p.is_finite() || p < 0.0) || pi.iter().all(|&p| p == 0.0) {
        return Err(Error::InvalidArgument(
            "proximity weights must be non-negative and not all zero".into(),
        ));
    }

    let total: f64 = pi.iter().sum();
    let y_mean = pi.iter().zip(y).map(|(p, v)| p * v).sum::<f64>() / total;
    let (y_min, y_max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = y_max - y_min;
    if range <= CONSTANT_RANGE * y_mean.abs().max(1.0) {
        return Ok(SurrogateFit {
            coefficients: vec![0.0; d],
            intercept: y_mean,
            faithfulness_r: 0.0,
            faithfulness_defined: false,
            constant_response: true,
        });
    }
    if ridge_lambda == 0.0 && n < d + 1 {
        return Err(Error::SingularSystem);
    }

    let z = DMatrix::from_fn(n, d, |i, j| if neighborhood.masks[i].get(j) { 1.0 } else { 0.0 });
    let z_mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| pi[i] * z[(i, j)]).sum::<f64>() / total)
        .collect();
    let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let zc = DMatrix::from_fn(n, d, |i, j| sqrt_pi[i] * (z[(i, j)] - z_mean[j]));
    let yc = DVector::from_fn(n, |i, _| sqrt_pi[i] * (y[i] - y_mean));

    let mut normal = zc.transpose() * &zc;
    for j in 0..d {
        normal[(j, j)] += ridge_lambda;
    }
    let rhs = zc.transpose() * &yc;
    let largest = (0..d).map(|j| normal[(j, j)]).fold(0.0, f64::max);
    let chol = normal.cholesky().ok_or(Error::SingularSystem)?;
    let smallest_pivot = (0..d).map(|j| chol.l_dirty()[(j, j)].powi(2)).fold(f64::INFINITY, f64::min);
    if smallest_pivot.is_nan() || smallest_pivot <= PIVOT_RATIO * largest {
        return Err(Error::SingularSystem);
    }
    let w = chol.solve(&rhs);

    let snap = CONSTANT_RANGE * range;
    let coefficients: Vec<f64> = w.iter().map(|&c| if c.abs() <= snap { 0.0 } else { c }).collect();
    let intercept = y_mean - coefficients.iter().zip(&z_mean).map(|(c, m)| c * m).sum::<f64>();
    let mut fit = SurrogateFit {
        coefficients,
        intercept,
        faithfulness_r: 0.0,
        faithfulness_defined: false,
        constant_response: false,
    };
    let fitted: Vec<f64> = neighborhood
        .masks
        .iter()
        .map(|m| fit.evaluate(&m.as_f64()))
        .collect();
    if let Some(r) = weighted_pearson(&fitted, y, pi) {
        fit.faithfulness_r = r;
        fit.faithfulness_defined = true;
    }
    Ok(fit)
}

/// Pearson correlation under observation weights; `None` when either side
/// has zero weighted variance.
pub fn weighted_pearson(a: &[f64], b: &[f64], w: &[f64]) -> Option<f64> {
    let total: f64 = w.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let mean = |v: &[f64]| v.iter().zip(w).map(|(x, p)| p * x).sum::<f64>() / total;
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for ((x, y), p) in a.iter().zip(b).zip(w) {
        cov += p * (x - ma) * (y - mb);
        va += p * (x - ma) * (x - ma);
        vb += p * (y - mb) * (y - mb);
    }
    let scale = ma.abs().max(mb.abs()).max(1.0);
    let tiny = total * (CONSTANT_RANGE * scale).powi(2);
    if va <= tiny || vb <= tiny {
        return None;
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}
