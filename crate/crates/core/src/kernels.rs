//! Reservoir-induced covariance functions, readout kernels and their deep
//! compositions.
//!
//! Time kernels act on pairs of lags `(t, t')`; readout kernels act on
//! feature vectors; deep kernels push an input signal through a time kernel
//! by double convolution and then through a readout kernel.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vonmises::{bessel_ratios, von_mises_moments};

pub use crate::vonmises::VonMisesMoments;

/// Below this value of `a_M·τ` the closed forms are replaced by their
/// Taylor series.
const SERIES_SWITCH: f64 = 0.5;
const SERIES_TERMS: usize = 30;

fn check_support(a_m: f64, a_max: f64) -> Result<()> {
    if !(a_m > 0.0 && a_m < a_max && a_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < a_m < a_M, got a_m={a_m} a_M={a_max}"
        )));
    }
    Ok(())
}

fn check_lag(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time arguments must be >= 0, got {t}")));
    }
    Ok(())
}

/// `(b^k − a^k)/(b − a) = Σ_{j<k} a^j b^{k−1−j}` without cancellation.
fn divided_power(a: f64, b: f64, k: usize) -> f64 {
    (0..k).map(|j| a.powi(j as i32) * b.powi((k - 1 - j) as i32)).sum()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `E[e^{−xτ}]` for `x ~ U(a, b)`, i.e. `(e^{−aτ} − e^{−bτ}) / (τ (b − a))`.
fn uniform_laplace(tau: f64, a: f64, b: f64) -> f64 {
    if b * tau < SERIES_SWITCH {
        (1..=SERIES_TERMS)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * tau.powi(k as i32 - 1) * divided_power(a, b, k) / factorial(k)
            })
            .sum()
    } else {
        ((-a * tau).exp() - (-b * tau).exp()) / (tau * (b - a))
    }
}

/// `E[x e^{−xτ}]` for `x ~ U(a, b)`.
fn uniform_first(tau: f64, a: f64, b: f64) -> f64 {
    if b * tau < SERIES_SWITCH {
        (0..SERIES_TERMS)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * tau.powi(j as i32) * divided_power(a, b, j + 2) / (factorial(j) * (j + 2) as f64)
            })
            .sum()
    } else {
        ((1.0 + a * tau) * (-a * tau).exp() - (1.0 + b * tau) * (-b * tau).exp()) / (tau * tau * (b - a))
    }
}

/// `½ E[x² e^{−xτ}]` for `x ~ U(a, b)`.
fn uniform_half_second(tau: f64, a: f64, b: f64) -> f64 {
    if b * tau < SERIES_SWITCH {
        (0..SERIES_TERMS)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * tau.powi(j as i32) * divided_power(a, b, j + 3) / (2.0 * factorial(j) * (j + 3) as f64)
            })
            .sum()
    } else {
        let p = |x: f64| (1.0 + x + 0.5 * x * x) * (-x).exp();
        (p(a * tau) - p(b * tau)) / (tau.powi(3) * (b - a))
    }
}

/// Integrated tuned-correlated kernel of a classical bank with damping
/// `α ~ U(a_m/2, a_M/2)` and Cauchy frequencies of scale `α`.
pub fn tc_kernel(t: f64, s: f64, a_m: f64, a_max: f64) -> Result<f64> {
    check_support(a_m, a_max)?;
    check_lag(t)?;
    check_lag(s)?;
    Ok(uniform_laplace(t.max(s), a_m, a_max))
}

/// Limit mean `μ_h(t)` of a sampled oscillator's impulse response.
pub fn quantum_limit_mean(t: f64, a_m: f64, a_max: f64, kappa: f64) -> Result<f64> {
    check_support(a_m, a_max)?;
    check_lag(t)?;
    let r1 = von_mises_moments(kappa)?.r1;
    Ok(-(r1 / SQRT_2) * uniform_first(t, a_m, a_max))
}

/// Limit covariance of a sampled oscillator's impulse response.
pub fn quantum_limit_kernel(t: f64, tp: f64, a_m: f64, a_max: f64, kappa: f64) -> Result<f64> {
    check_support(a_m, a_max)?;
    check_lag(t)?;
    check_lag(tp)?;
    let (r1, _) = bessel_ratios(kappa);
    if !(kappa >= 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {kappa}")));
    }
    let mu = |x: f64| -(r1 / SQRT_2) * uniform_first(x, a_m, a_max);
    Ok(uniform_half_second(t.max(tp), a_m, a_max) - mu(t) * mu(tp))
}

/// `e^{−(t−s)²/(2ℓ²)} cos(ω₀ (t − s))`.
pub fn se_time_kernel(t: f64, s: f64, lengthscale: f64, omega0: f64) -> Result<f64> {
    if !(lengthscale > 0.0) {
        return Err(Error::InvalidParameter(format!("lengthscale must be > 0, got {lengthscale}")));
    }
    let r = t - s;
    Ok((-r * r / (2.0 * lengthscale * lengthscale)).exp() * (omega0 * r).cos())
}

/// Damping/frequency pair of a classical oscillator component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicalMode {
    pub alpha: f64,
    pub omega: f64,
}

/// `(1/n_c) Σ e^{−α_i (t+s)} cos(ω_i (t−s))`.
pub fn finite_reservoir_cov(modes: &[ClassicalMode], t: f64, s: f64) -> f64 {
    if modes.is_empty() {
        return 0.0;
    }
    modes
        .iter()
        .map(|m| (-m.alpha * (t + s)).exp() * (m.omega * (t - s)).cos())
        .sum::<f64>()
        / modes.len() as f64
}

/// Draws classical modes from the tuned-correlated density.
pub fn sample_tc_modes<R: Rng + ?Sized>(n: usize, a_m: f64, a_max: f64, rng: &mut R) -> Result<Vec<ClassicalMode>> {
    check_support(a_m, a_max)?;
    Ok((0..n)
        .map(|_| {
            let alpha = 0.5 * (a_m + (a_max - a_m) * rng.random::<f64>());
            let u: f64 = rng.random();
            let omega = alpha * (std::f64::consts::PI * (u - 0.5)).tan();
            ClassicalMode { alpha, omega }
        })
        .collect())
}

/// Static readout kernel on feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReadoutKernel {
    /// `σ_f² (yᵀy' + c)^deg`
    Poly { sigma_f: f64, offset: f64, degree: u32 },
    /// `σ_f² exp(−‖y − y'‖² / (2ℓ²))`
    Se { sigma_f: f64, lengthscale: f64 },
}

impl ReadoutKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReadoutKernel::Poly { sigma_f, offset, degree } => {
                if !(sigma_f > 0.0) || degree == 0 || !offset.is_finite() {
                    return Err(Error::InvalidParameter(
                        "poly kernel needs sigma_f > 0, finite offset and degree >= 1".into(),
                    ));
                }
            }
            ReadoutKernel::Se { sigma_f, lengthscale } => {
                if !(sigma_f > 0.0) || !(lengthscale > 0.0) {
                    return Err(Error::InvalidParameter("SE kernel needs sigma_f > 0 and lengthscale > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sigma_f(&self) -> f64 {
        match *self {
            ReadoutKernel::Poly { sigma_f, .. } | ReadoutKernel::Se { sigma_f, .. } => sigma_f,
        }
    }

    /// Kernel value from the inner product and squared distance.
    pub fn from_products(&self, dot: f64, sq_dist: f64) -> f64 {
        match *self {
            ReadoutKernel::Poly { sigma_f, offset, degree } => sigma_f * sigma_f * (dot + offset).powi(degree as i32),
            ReadoutKernel::Se { sigma_f, lengthscale } => {
                sigma_f * sigma_f * (-sq_dist / (2.0 * lengthscale * lengthscale)).exp()
            }
        }
    }

    pub fn eval(&self, y: &[f64], yp: &[f64]) -> Result<f64> {
        readout_kernel(y, yp, self)
    }
}

pub fn readout_kernel(y: &[f64], yp: &[f64], kernel: &ReadoutKernel) -> Result<f64> {
    if y.len() != yp.len() {
        return Err(Error::Dimension(format!(
            "feature lengths differ: {} vs {}",
            y.len(),
            yp.len()
        )));
    }
    let dot: f64 = y.iter().zip(yp).map(|(a, b)| a * b).sum();
    let sq: f64 = y.iter().zip(yp).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(kernel.from_products(dot, sq))
}

/// Every covariance function in one serializable type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelFunction {
    SeTime {
        lengthscale: f64,
        omega0: f64,
    },
    Tc {
        a_m: f64,
        #[serde(rename = "a_M")]
        a_max: f64,
    },
    /// Rank-one kernel `μ_h(t) μ_h(t')` of the limit mean.
    QuantumTcMean {
        a_m: f64,
        #[serde(rename = "a_M")]
        a_max: f64,
        kappa: f64,
    },
    QuantumTc {
        a_m: f64,
        #[serde(rename = "a_M")]
        a_max: f64,
        kappa: f64,
    },
    PolyReadout {
        sigma_f: f64,
        offset: f64,
        degree: u32,
    },
    SeReadout {
        sigma_f: f64,
        lengthscale: f64,
    },
    DeepPoly {
        base: Box<KernelFunction>,
        sigma_f: f64,
        offset: f64,
        degree: u32,
    },
    DeepSe {
        base: Box<KernelFunction>,
        sigma_f: f64,
        lengthscale: f64,
    },
}

impl KernelFunction {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFunction::SeTime { .. } => "se-time",
            KernelFunction::Tc { .. } => "tc",
            KernelFunction::QuantumTcMean { .. } => "quantum-tc-mean",
            KernelFunction::QuantumTc { .. } => "quantum-tc",
            KernelFunction::PolyReadout { .. } => "poly-readout",
            KernelFunction::SeReadout { .. } => "se-readout",
            KernelFunction::DeepPoly { .. } => "deep-poly",
            KernelFunction::DeepSe { .. } => "deep-se",
        }
    }

    pub fn is_time_kernel(&self) -> bool {
        matches!(
            self,
            KernelFunction::SeTime { .. }
                | KernelFunction::Tc { .. }
                | KernelFunction::QuantumTcMean { .. }
                | KernelFunction::QuantumTc { .. }
        )
    }

    pub fn readout(&self) -> Option<ReadoutKernel> {
        match *self {
            KernelFunction::PolyReadout { sigma_f, offset, degree }
            | KernelFunction::DeepPoly { sigma_f, offset, degree, .. } => {
                Some(ReadoutKernel::Poly { sigma_f, offset, degree })
            }
            KernelFunction::SeReadout { sigma_f, lengthscale } | KernelFunction::DeepSe { sigma_f, lengthscale, .. } => {
                Some(ReadoutKernel::Se { sigma_f, lengthscale })
            }
            _ => None,
        }
    }

    /// Evaluates a time kernel at the lag pair `(t, t')`.
    pub fn eval_time(&self, t: f64, tp: f64) -> Result<f64> {
        match *self {
            KernelFunction::SeTime { lengthscale, omega0 } => se_time_kernel(t, tp, lengthscale, omega0),
            KernelFunction::Tc { a_m, a_max } => tc_kernel(t, tp, a_m, a_max),
            KernelFunction::QuantumTcMean { a_m, a_max, kappa } => {
                Ok(quantum_limit_mean(t, a_m, a_max, kappa)? * quantum_limit_mean(tp, a_m, a_max, kappa)?)
            }
            KernelFunction::QuantumTc { a_m, a_max, kappa } => quantum_limit_kernel(t, tp, a_m, a_max, kappa),
            _ => Err(Error::InvalidParameter(format!("{} is not a time kernel", self.name()))),
        }
    }

    /// Evaluates a deep kernel for the input `u` at output times `(t, t')`.
    pub fn eval_deep(&self, u: &[f64], t: f64, tp: f64, dt: f64) -> Result<f64> {
        match self {
            KernelFunction::DeepPoly { base, .. } | KernelFunction::DeepSe { base, .. } => {
                deep_kernel_reference(u, t, tp, base, &self.readout().expect("deep kernels carry a readout"), dt)
            }
            _ => Err(Error::InvalidParameter(format!("{} is not a deep kernel", self.name()))),
        }
    }
}

fn grid_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

/// `∫₀ᵗ∫₀^{t'} K(t − τ₁, t' − τ₂) u(τ₁) u(τ₂) dτ₁ dτ₂` by the trapezoid rule
/// on the grid `τ_j = jΔ`; `u_j` is the ZOH value on `[jΔ, (j+1)Δ)`.
pub fn double_convolution(u: &[f64], t: f64, tp: f64, base: &KernelFunction, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    check_lag(t)?;
    check_lag(tp)?;
    let (n, np) = (grid_index(t, dt), grid_index(tp, dt));
    if u.len() < n.max(np) {
        return Err(Error::InvalidParameter(format!(
            "input covers {} steps, need {}",
            u.len(),
            n.max(np)
        )));
    }
    if !base.is_time_kernel() {
        return Err(Error::InvalidParameter(format!("{} is not a time kernel", base.name())));
    }
    let val = |j: usize| u[j.min(u.len() - 1)];
    let w = |j: usize, last: usize| if j == 0 || j == last { 0.5 } else { 1.0 };
    let mut acc = 0.0;
    for i in 0..=n {
        let ui = val(i);
        if ui == 0.0 {
            continue;
        }
        let li = (n - i) as f64 * dt;
        let wi = w(i, n);
        for j in 0..=np {
            let uj = val(j);
            if uj == 0.0 {
                continue;
            }
            let lj = (np - j) as f64 * dt;
            acc += wi * w(j, np) * ui * uj * base.eval_time(li, lj)?;
        }
    }
    Ok(acc * dt * dt)
}

/// Deep kernel: double convolution through `base`, composed with `readout`.
pub fn deep_kernel_reference(
    u: &[f64],
    t: f64,
    tp: f64,
    base: &KernelFunction,
    readout: &ReadoutKernel,
    dt: f64,
) -> Result<f64> {
    readout.validate()?;
    let cross = double_convolution(u, t, tp, base, dt)?;
    Ok(match *readout {
        ReadoutKernel::Poly { .. } => readout.from_products(cross, 0.0),
        ReadoutKernel::Se { .. } => {
            let a = double_convolution(u, t, t, base, dt)?;
            let b = double_convolution(u, tp, tp, base, dt)?;
            readout.from_products(0.0, (a + b - 2.0 * cross).max(0.0))
        }
    })
}

/// Normalization layer: `ȳ_j(t) = √(n_c/d) (ỹ_j(t) − μ̂(t))`, where
/// `ỹ = y/n_c` is the per-oscillator average of a channel's summed output
/// and `μ̂` the cross-channel mean or a supplied mean (same units as `ỹ`).
/// `raw` is `d × T`.
pub fn normalize_features(raw: &DMatrix<f64>, n_c: usize, mean: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let (d, steps) = raw.shape();
    if n_c == 0 || d == 0 {
        return Err(Error::InvalidParameter("need n_c >= 1 and d >= 1".into()));
    }
    let mu: Vec<f64> = match mean {
        Some(m) => {
            if m.len() != steps {
                return Err(Error::Dimension(format!("mean has {} entries, need {steps}", m.len())));
            }
            m.to_vec()
        }
        None => {
            if d < 2 {
                return Err(Error::InvalidParameter("empirical mean needs d >= 2".into()));
            }
            (0..steps).map(|k| raw.column(k).sum() / (d as f64 * n_c as f64)).collect()
        }
    };
    let scale = (n_c as f64 / d as f64).sqrt();
    Ok(DMatrix::from_fn(d, steps, |j, k| scale * (raw[(j, k)] / n_c as f64 - mu[k])))
}

/// Limit mean of a channel's per-oscillator output for a ZOH input,
/// `∫ μ_h(t − τ) u(τ) dτ` on the grid `t_k = (k+1)Δ`. Cell integrals of
/// `μ_h` are exact.
pub fn quantum_mean_response(u: &[f64], dt: f64, a_m: f64, a_max: f64, kappa: f64) -> Result<Vec<f64>> {
    check_support(a_m, a_max)?;
    let r1 = von_mises_moments(kappa)?.r1;
    // ∫_{s0}^{s1} E[x e^{−xs}] ds = E[e^{−x s0}] − E[e^{−x s1}]
    let g = |s: f64| uniform_laplace(s, a_m, a_max);
    let cells: Vec<f64> = (0..u.len())
        .map(|m| -(r1 / SQRT_2) * (g(m as f64 * dt) - g((m + 1) as f64 * dt)))
        .collect();
    Ok((0..u.len())
        .map(|k| (0..=k).map(|j| u[j] * cells[k - j]).sum())
        .collect())
}
