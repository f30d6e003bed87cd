use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qss::{build_quadrature_system, HamiltonianSpec, QuadratureSystem};
use crate::rng;
use crate::vonmises::VonMises;

/// One harmonic oscillator of an HqW channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub alpha_sq: f64,
    pub omega: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Oscillators of a single channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub oscillators: Vec<Oscillator>,
}

impl OscillatorParams {
    pub fn len(&self) -> usize {
        self.oscillators.len()
    }
    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HqwConfig {
    pub n_c: usize,
    pub d: usize,
    pub a_m: f64,
    #[serde(rename = "a_M")]
    pub a_max: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for HqwConfig {
    fn default() -> Self {
        Self {
            n_c: 24,
            d: 64,
            a_m: 0.01,
            a_max: 20.0,
            kappa: 1.0,
            seed: 0,
        }
    }
}

impl HqwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("n_c and d must be at least 1".into()));
        }
        if !(self.a_m > 0.0 && self.a_m < self.a_max && self.a_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < a_m < a_M, got a_m={} a_M={}",
                self.a_m, self.a_max
            )));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Draws `n_c` oscillators from one stream. Draws are sequential, so a
/// channel with more oscillators extends one with fewer.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &HqwConfig, rng: &mut R) -> Result<OscillatorParams> {
    cfg.validate()?;
    let vm = VonMises::new(FRAC_PI_4, cfg.kappa)?;
    let oscillators = (0..cfg.n_c)
        .map(|_| {
            let alpha_sq = cfg.a_m + (cfg.a_max - cfg.a_m) * rng.random::<f64>();
            let u: f64 = rng.random();
            let omega = 0.5 * alpha_sq * (PI * (u - 0.5)).tan();
            let theta = vm.sample(rng);
            Oscillator {
                alpha_sq,
                omega,
                s1: theta.cos(),
                s2: theta.sin(),
            }
        })
        .collect();
    Ok(OscillatorParams { oscillators })
}

/// Samples all `d` channels, channel `j` from the stream `(seed, j)`.
pub fn sample_hqw_params(cfg: &HqwConfig) -> Result<Vec<OscillatorParams>> {
    cfg.validate()?;
    (0..cfg.d)
        .map(|j| sample_channel(cfg, &mut rng::stream(cfg.seed, "hqw", &[j as u64])))
        .collect()
}

/// One-mode oscillator with `Re M1 = −ω`, `N1 = α + iβ`, `S = s1 + i s2`.
pub fn build_harmonic_oscillator(alpha: f64, beta: f64, omega: f64, s1: f64, s2: f64) -> Result<QuadratureSystem> {
    if ((s1 * s1 + s2 * s2) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "(s1, s2) must have unit norm, got {}",
            (s1 * s1 + s2 * s2).sqrt()
        )));
    }
    let one = |z: Complex64| DMatrix::from_element(1, 1, z);
    let spec = HamiltonianSpec::new(
        one(Complex64::new(-omega, 0.0)),
        one(Complex64::new(0.0, 0.0)),
        one(Complex64::new(alpha, beta)),
        one(Complex64::new(0.0, 0.0)),
        one(Complex64::new(s1, s2)),
    )?;
    build_quadrature_system(&spec)
}

/// Concatenation product: block assembly with all `q` quadratures (and all
/// `q`-field components) ahead of the `p` ones.
pub fn concatenate(systems: &[QuadratureSystem]) -> Result<QuadratureSystem> {
    if systems.is_empty() {
        return Err(Error::InvalidParameter("nothing to concatenate".into()));
    }
    let n: usize = systems.iter().map(|s| s.n).sum();
    let s: usize = systems.iter().map(|s| s.s).sum();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut l = DMatrix::zeros(2 * n, 2 * s);
    let mut c = DMatrix::zeros(2 * s, 2 * n);
    let mut d = DMatrix::zeros(2 * s, 2 * s);
    let (mut on, mut os) = (0, 0);
    for sys in systems {
        let mode = |i: usize| if i < sys.n { on + i } else { n + on + i - sys.n };
        let field = |i: usize| if i < sys.s { os + i } else { s + os + i - sys.s };
        for i in 0..2 * sys.n {
            for j in 0..2 * sys.n {
                a[(mode(i), mode(j))] = sys.a[(i, j)];
            }
            for j in 0..2 * sys.s {
                l[(mode(i), field(j))] = sys.l[(i, j)];
                c[(field(j), mode(i))] = sys.c[(j, i)];
            }
        }
        for i in 0..2 * sys.s {
            for j in 0..2 * sys.s {
                d[(field(i), field(j))] = sys.d[(i, j)];
            }
        }
        on += sys.n;
        os += sys.s;
    }
    QuadratureSystem::new(a, l, c, d)
}

/// Smooth part of the summed-first-quadrature impulse response.
pub fn hqw_impulse_response(params: &OscillatorParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    Ok(params
        .oscillators
        .iter()
        .map(|o| {
            o.alpha_sq * (-0.5 * o.alpha_sq * t).exp() * (-o.s1 * (o.omega * t).cos() + o.s2 * (o.omega * t).sin())
        })
        .sum())
}

/// Weight of the Dirac feedthrough term `Σ s1_i δ(t)`.
pub fn hqw_feedthrough(params: &OscillatorParams) -> f64 {
    params.oscillators.iter().map(|o| o.s1).sum()
}

/// Quadrature system of one channel (`n_c` concatenated oscillators).
pub fn hqw_channel_system(params: &OscillatorParams) -> Result<QuadratureSystem> {
    let parts = params
        .oscillators
        .iter()
        .map(|o| build_harmonic_oscillator(o.alpha_sq.sqrt(), 0.0, o.omega, o.s1, o.s2))
        .collect::<Result<Vec<_>>>()?;
    concatenate(&parts)
}

/// Field input direction `(1_{n_c}, 0_{n_c})`.
pub fn hqw_input_direction(n_c: usize) -> DVector<f64> {
    DVector::from_fn(2 * n_c, |i, _| if i < n_c { 1.0 } else { 0.0 })
}

/// Noise-free summed measured output of one channel under a ZOH input,
/// sampled at the end of each step. Uses the exact per-oscillator complex
/// recursion `z = q + i p`, `ż = (−α²/2 + iω) z − α (s1 + i s2) u`.
pub fn hqw_channel_outputs(params: &OscillatorParams, input: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for o in &params.oscillators {
        let alpha = o.alpha_sq.sqrt();
        let mu = Complex64::new(-0.5 * o.alpha_sq, o.omega);
        let phi = (mu * dt).exp();
        let gamma = if mu.norm() * dt < 1e-8 {
            Complex64::new(dt, 0.0) * (1.0 + mu * dt * 0.5)
        } else {
            (phi - 1.0) / mu
        };
        let b = Complex64::new(-alpha * o.s1, -alpha * o.s2) * gamma;
        let mut z = Complex64::new(0.0, 0.0);
        for (k, &u) in input.iter().enumerate() {
            z = phi * z + b * u;
            out[k] += alpha * z.re;
        }
    }
    out
}
