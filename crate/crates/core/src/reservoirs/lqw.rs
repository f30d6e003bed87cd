use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qss::{build_quadrature_system, HamiltonianSpec, QuadratureSystem};

/// Laplacian-coupled oscillator network driven through its first mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqwConfig {
    pub n: usize,
    pub omega0: f64,
    pub g_lo: f64,
    pub g_hi: f64,
    pub a1: f64,
    /// Number of independent replicas (one feature each).
    pub d: usize,
    pub seed: u64,
    /// Read out all internal quadrature means of a single network instead
    /// of one measured output per replica.
    pub internal_means: bool,
}

impl Default for LqwConfig {
    fn default() -> Self {
        Self {
            n: 24,
            omega0: 0.25,
            g_lo: 0.01,
            g_hi: 0.19,
            a1: 5.0,
            d: 64,
            seed: 0,
            internal_means: false,
        }
    }
}

impl LqwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("n and d must be at least 1".into()));
        }
        if !(self.g_lo < self.g_hi) {
            return Err(Error::InvalidParameter(format!(
                "need g_lo < g_hi, got {} and {}",
                self.g_lo, self.g_hi
            )));
        }
        if !(self.a1 >= 0.0) || !self.a1.is_finite() || !self.omega0.is_finite() {
            return Err(Error::InvalidParameter("a1 must be >= 0 and omega0 finite".into()));
        }
        Ok(())
    }
}

/// Laplacian `V_ij = δ_ij Σ_k g_ik − (1 − δ_ij) g_ij` of random symmetric couplings.
pub fn laplacian<R: Rng + ?Sized>(n: usize, g_lo: f64, g_hi: f64, rng: &mut R) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let g = rng.random_range(g_lo..g_hi);
            v[(i, j)] = -g;
            v[(j, i)] = -g;
            v[(i, i)] += g;
            v[(j, j)] += g;
        }
    }
    v
}

/// One replica of the Laplacian network.
pub fn build_lqw<R: Rng + ?Sized>(cfg: &LqwConfig, rng: &mut R) -> Result<QuadratureSystem> {
    cfg.validate()?;
    let n = cfg.n;
    let v = laplacian(n, cfg.g_lo, cfg.g_hi, rng);
    let id = DMatrix::<f64>::identity(n, n);
    let g_omega = &id * cfg.omega0;
    let m1 = (&g_omega + &id + &v) * 0.5;
    let m2 = (&g_omega - &id + &v) * 0.5;
    let cplx = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let mut n1 = DMatrix::from_element(1, n, Complex64::new(0.0, 0.0));
    n1[(0, 0)] = Complex64::new(cfg.a1, 0.0);
    let spec = HamiltonianSpec::new(
        cplx(&m1),
        cplx(&m2),
        n1,
        DMatrix::from_element(1, n, Complex64::new(0.0, 0.0)),
        DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
    )?;
    build_quadrature_system(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qss::is_completely_passive;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_network_drift() {
        let cfg = LqwConfig { n: 2, a1: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = build_lqw(&cfg, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = laplacian(2, cfg.g_lo, cfg.g_hi, &mut rng);
        let id = DMatrix::<f64>::identity(2, 2);
        let lower = -(&id * 0.25 + v);
        let mut want = DMatrix::zeros(4, 4);
        want.view_mut((0, 2), (2, 2)).copy_from(&id);
        want.view_mut((2, 0), (2, 2)).copy_from(&lower);
        assert!((sys.a - want).abs().max() < 1e-15);
    }

    #[test]
    fn single_mode_drift() {
        let cfg = LqwConfig { n: 1, ..Default::default() };
        let sys = build_lqw(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[-12.5, 1.0, -0.25, -12.5]);
        assert!((sys.a - want).abs().max() < 1e-14);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let v = laplacian(6, 0.01, 0.19, &mut ChaCha8Rng::seed_from_u64(3));
        for i in 0..6 {
            assert!(v.row(i).sum().abs() < 1e-15);
            for j in 0..6 {
                assert_eq!(v[(i, j)], v[(j, i)]);
            }
        }
    }

    #[test]
    fn realizable_and_active() {
        for n in [2, 8] {
            let cfg = LqwConfig { n, ..Default::default() };
            let sys = build_lqw(&cfg, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap();
            assert!(sys.realizability().max() < 1e-9);
            assert!(!is_completely_passive(&sys.to_hamiltonian_spec().unwrap()));
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = LqwConfig { g_lo: 0.2, g_hi: 0.1, ..Default::default() };
        assert!(build_lqw(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
