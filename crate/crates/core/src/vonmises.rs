//! Von Mises distribution on the circle: Bessel ratios, moments, sampling.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

/// Ratios `r_n = I_n(κ) / I_0(κ)` for n = 1, 2 and the induced moments of
/// the unit vector `s = (cos θ, sin θ)` with mean angle π/4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VonMisesMoments {
    pub kappa: f64,
    pub r1: f64,
    pub r2: f64,
}

impl VonMisesMoments {
    /// Mean direction `(1, 1)/√2`.
    pub fn direction() -> Vector2<f64> {
        Vector2::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)
    }

    pub fn mean(&self) -> Vector2<f64> {
        Self::direction() * self.r1
    }

    pub fn second_moment(&self) -> Matrix2<f64> {
        let m = Self::direction();
        Matrix2::identity() * ((1.0 - self.r2) / 2.0) + m * m.transpose() * self.r2
    }
}

/// `I_ν(x) / I_{ν−1}(x)` by the Gauss continued fraction (modified Lentz).
fn ratio_cf(nu: u32, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let tiny = 1e-300;
    let b = |k: u32| 2.0 * (nu + k) as f64 / x;
    let mut f = b(0);
    if f == 0.0 {
        f = tiny;
    }
    let mut c = f;
    let mut d = 0.0;
    for k in 1..200_000u32 {
        d += b(k);
        if d == 0.0 {
            d = tiny;
        }
        c = b(k) + 1.0 / c;
        if c == 0.0 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Scaled asymptotic series `I_ν(x)·√(2πx)·e^{−x}` for large x.
fn scaled_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu as f64).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..12 {
        let kk = k as f64;
        term *= -(mu - (2.0 * kk - 1.0).powi(2)) / (kk * 8.0 * x);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// Bessel-function ratios `I_1/I_0` and `I_2/I_0`.
pub fn bessel_ratios(kappa: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (0.0, 0.0);
    }
    if kappa > 1000.0 {
        let i0 = scaled_asymptotic(0, kappa);
        return (
            scaled_asymptotic(1, kappa) / i0,
            scaled_asymptotic(2, kappa) / i0,
        );
    }
    let r1 = ratio_cf(1, kappa);
    let r2 = r1 * ratio_cf(2, kappa);
    (r1, r2)
}

pub fn von_mises_moments(kappa: f64) -> Result<VonMisesMoments> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let (r1, r2) = bessel_ratios(kappa);
    Ok(VonMisesMoments { kappa, r1, r2 })
}

/// Von Mises sampler (Best–Fisher rejection; normal limit for huge κ).
#[derive(Clone, Copy, Debug)]
pub struct VonMises {
    mu: f64,
    kappa: f64,
    r: f64,
}

impl VonMises {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid von Mises parameters mu={mu}, kappa={kappa}")));
        }
        let r = if kappa > 1e-8 {
            let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
            let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
            (1.0 + rho * rho) / (2.0 * rho)
        } else {
            0.0
        };
        Ok(Self { mu, kappa, r })
    }
}

impl Distribution<f64> for VonMises {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.kappa <= 1e-8 {
            return self.mu + PI * (2.0 * rng.random::<f64>() - 1.0);
        }
        if self.kappa > 1e5 {
            let z: f64 = rng.sample(StandardNormal);
            return self.mu + z / self.kappa.sqrt();
        }
        loop {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let u3: f64 = rng.random();
            let z = (PI * u1).cos();
            let f = (1.0 + self.r * z) / (self.r + z);
            let c = self.kappa * (self.r - f);
            if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                let ang = f.clamp(-1.0, 1.0).acos();
                return if u3 > 0.5 { self.mu + ang } else { self.mu - ang };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bessel_series(n: u32, x: f64) -> f64 {
        let mut term = (x / 2.0).powi(n as i32) / (1..=n).map(|k| k as f64).product::<f64>();
        let mut sum = term;
        for k in 1..200 {
            term *= (x / 2.0).powi(2) / (k as f64 * (k + n) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn ratios_match_series() {
        for &k in &[1e-3, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
            let (r1, r2) = bessel_ratios(k);
            let i0 = bessel_series(0, k);
            assert_relative_eq!(r1, bessel_series(1, k) / i0, max_relative = 1e-12);
            assert_relative_eq!(r2, bessel_series(2, k) / i0, max_relative = 1e-12);
        }
    }

    #[test]
    fn known_values() {
        let m = von_mises_moments(2.0).unwrap();
        assert_relative_eq!(m.r1, 0.697775, epsilon = 1e-6);
        let z = von_mises_moments(0.0).unwrap();
        assert_eq!((z.r1, z.r2), (0.0, 0.0));
        assert_relative_eq!(z.second_moment(), Matrix2::identity() * 0.5);
        let big = von_mises_moments(1e6).unwrap();
        assert!((1.0 - big.r1) < 1e-5 && (1.0 - big.r2) < 1e-5);
        let mm = VonMisesMoments::direction() * VonMisesMoments::direction().transpose();
        assert!((big.second_moment() - mm).abs().max() < 1e-5);
        assert!(von_mises_moments(-1.0).is_err());
    }

    #[test]
    fn asymptotic_branch_is_continuous() {
        // both branches evaluated at the same point just above the switch
        let x = 1000.001;
        let (a1, a2) = bessel_ratios(x);
        let b1 = ratio_cf(1, x);
        let b2 = b1 * ratio_cf(2, x);
        assert!((a1 - b1).abs() < 1e-13 && (a2 - b2).abs() < 1e-13);
        assert!((a1 - 0.999499875375054156).abs() < 1e-14);
    }

    #[test]
    fn ordering_of_ratios() {
        for i in 0..100 {
            let k = 0.05 * i as f64 * i as f64;
            let (r1, r2) = bessel_ratios(k);
            assert!(0.0 <= r2 && r2 <= r1 && r1 <= 1.0, "kappa {k}");
        }
    }

    #[test]
    fn sampler_mean_matches_r1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vm = VonMises::new(0.3, 3.0).unwrap();
        let n = 50_000;
        let mean_cos: f64 = (0..n).map(|_| (vm.sample(&mut rng) - 0.3).cos()).sum::<f64>() / n as f64;
        let r1 = von_mises_moments(3.0).unwrap().r1;
        assert!((mean_cos - r1).abs() < 0.01, "{mean_cos} vs {r1}");
    }
}
