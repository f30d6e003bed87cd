use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::numerical_rank;

/// Echo-state network baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsnConfig {
    pub units: usize,
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub leak: f64,
    /// Ridge penalties tried on the hold-out block of the training split.
    pub ridge_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self {
            units: 200,
            spectral_radius: 0.95,
            input_scale: 1.0,
            leak: 1.0,
            ridge_grid: (-8..=1).map(|k| 10f64.powi(k)).collect(),
            seed: 0,
        }
    }
}

/// Recurrent and input weights of a sampled network.
#[derive(Clone, Debug)]
pub struct EsnWeights {
    pub w: DMatrix<f64>,
    pub w_in: DVector<f64>,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn sample_esn<R: Rng + ?Sized>(cfg: &EsnConfig, rng: &mut R) -> Result<EsnWeights> {
    if cfg.units == 0 || !(cfg.spectral_radius > 0.0) || !(cfg.leak > 0.0 && cfg.leak <= 1.0) {
        return Err(Error::InvalidParameter(
            "ESN needs units >= 1, spectral radius > 0 and leak in (0, 1]".into(),
        ));
    }
    let n = cfg.units;
    let raw = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let rho = spectral_radius(&raw);
    if !(rho > 0.0) {
        return Err(Error::Singular("recurrent matrix has zero spectral radius".into()));
    }
    let w = raw * (cfg.spectral_radius / rho);
    let w_in = DVector::from_fn(n, |_, _| cfg.input_scale * rng.random_range(-1.0..1.0));
    Ok(EsnWeights { w, w_in })
}

/// States `x_{k+1} = (1−a) x_k + a·tanh(W x_k + W_in u_k)`; row `k` is `x_{k+1}`.
pub fn esn_reservoir(cfg: &EsnConfig, weights: &EsnWeights, u: &[f64]) -> DMatrix<f64> {
    let n = weights.w.nrows();
    let mut x = DVector::zeros(n);
    let mut out = DMatrix::zeros(u.len(), n);
    let mut pre = DVector::zeros(n);
    for (k, &uk) in u.iter().enumerate() {
        pre.gemv(1.0, &weights.w, &x, 0.0);
        pre.axpy(uk, &weights.w_in, 1.0);
        for i in 0..n {
            x[i] = (1.0 - cfg.leak) * x[i] + cfg.leak * pre[i].tanh();
        }
        out.row_mut(k).copy_from(&x.transpose());
    }
    out
}

/// Ridge regression with an intercept column; returns the weight vector
/// (intercept last).
pub fn ridge_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<DVector<f64>> {
    let (m, d) = x.shape();
    let mut xa = DMatrix::from_element(m, d + 1, 1.0);
    xa.view_mut((0, 0), (m, d)).copy_from(x);
    let mut gram = xa.transpose() * &xa;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xa.transpose() * DVector::from_column_slice(y);
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Singular(format!("ridge normal equations (rank {})", numerical_rank(&xa))))
}

pub fn ridge_predict(x: &DMatrix<f64>, w: &DVector<f64>) -> Vec<f64> {
    let d = x.ncols();
    (0..x.nrows())
        .map(|i| (0..d).map(|j| x[(i, j)] * w[j]).sum::<f64>() + w[d])
        .collect()
}

/// Picks the penalty with the lowest error on the last fifth of the
/// training rows, then refits on all of them.
pub fn ridge_select(x: &DMatrix<f64>, y: &[f64], grid: &[f64]) -> Result<(f64, DVector<f64>)> {
    let m = x.nrows();
    let cut = m - (m / 5).max(1);
    let fit_rows = x.rows(0, cut).into_owned();
    let hold_rows = x.rows(cut, m - cut).into_owned();
    let mut best = None;
    for &lambda in grid {
        let Ok(w) = ridge_fit(&fit_rows, &y[..cut], lambda) else { continue };
        let pred = ridge_predict(&hold_rows, &w);
        let err: f64 = pred.iter().zip(&y[cut..]).map(|(p, t)| (p - t).powi(2)).sum();
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, lambda));
        }
    }
    let (_, lambda) = best.ok_or_else(|| Error::Singular("no ridge penalty produced a fit".into()))?;
    Ok((lambda, ridge_fit(x, y, lambda)?))
}
