use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, numerical_rank, solve_care, spectral_abscissa, symplectic};
use crate::qss::QuadratureSystem;

/// Field component carrying the scalar input of an embedded block.
pub const PADE_INPUT: usize = 0;
/// Measured output holding `C e^{At} B`.
pub const PADE_OUTPUT: usize = 1;

/// Classical single-input single-output LTI system `(A, B, C, D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSISO {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl ClassicalSISO {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "SISO shapes A {:?}, B {}, C {}",
                a.shape(),
                b.len(),
                c.len()
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|x| !x.is_finite()) || !d.is_finite() {
            return Err(Error::NonFinite("classical system".into()));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_stable(&self) -> bool {
        spectral_abscissa(&self.a) < 0.0
    }

    /// Smooth part `C e^{At} B` of the impulse response.
    pub fn impulse(&self, t: f64) -> Result<f64> {
        Ok(self.c.dot(&(expm(&(&self.a * t))? * &self.b)))
    }

    /// Transfer function at a real frequency `s` (outside the spectrum).
    pub fn transfer_real(&self, s: f64) -> Result<f64> {
        let n = self.order();
        let m = DMatrix::<f64>::identity(n, n) * s - &self.a;
        let x = m
            .lu()
            .solve(&self.b)
            .ok_or_else(|| Error::Singular("sI - A".into()))?;
        Ok(self.c.dot(&x) + self.d)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Numerator and denominator coefficients (ascending powers of `x = sτ`) of
/// the `(m, n)` Padé approximant of `e^{−x}`.
pub fn pade_coefficients(m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let top = factorial(m + n);
    let num = (0..=m)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(m + n - k) * factorial(m) / (top * factorial(k) * factorial(m - k))
        })
        .collect();
    let den = (0..=n)
        .map(|k| factorial(m + n - k) * factorial(n) / (top * factorial(k) * factorial(n - k)))
        .collect();
    (num, den)
}

/// Companion-form realization of the `(m, n)` Padé approximant of `e^{−sτ}`.
///
/// The companion structure is written in the rescaled frequency
/// `y = sτ/γ` with `γ = (q_0/q_n)^{1/n}`, which makes the denominator monic
/// with unit constant term and keeps the coefficients of order one.
pub fn pade_delay_realization(tau: f64, m: usize, n: usize) -> Result<ClassicalSISO> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("delay must be positive, got {tau}")));
    }
    if m > n || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < n and m <= n, got m={m} n={n}"
        )));
    }
    let (p, q) = pade_coefficients(m, n);
    let gamma = (q[0] / q[n]).powf(1.0 / n as f64);
    let lead = q[n] * gamma.powi(n as i32);
    let qh: Vec<f64> = (0..=n).map(|k| q[k] * gamma.powi(k as i32) / lead).collect();
    let ph: Vec<f64> = (0..=n)
        .map(|k| if k <= m { p[k] * gamma.powi(k as i32) / lead } else { 0.0 })
        .collect();
    let scale = gamma / tau;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = scale;
    }
    for j in 0..n {
        a[(n - 1, j)] = -qh[j] * scale;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = scale;
    let d = ph[n];
    let c = DVector::from_fn(n, |j, _| ph[j] - qh[j] * d);
    ClassicalSISO::new(a, b, c, d)
}

/// Numerical rank of the controllability matrix `(B, AB, …, A^{n−1}B)`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    let n = a.nrows();
    // rescaling A and normalizing columns leave the rank unchanged but keep
    // high powers comparable
    let norm = crate::linalg::max_abs(a);
    let a = if norm > 0.0 { a / norm } else { a.clone() };
    let mut k = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        let len = col.norm();
        k.set_column(j, &if len > 0.0 { &col / len } else { col.clone() });
        col = &a * col;
    }
    numerical_rank(&k)
}

/// Gain `R` with every eigenvalue of `−A − BR` at real part `≤ −margin`,
/// from the CARE of the shifted pair `(−A + margin·I, B)` with identity weights.
pub fn stabilizing_gain(a: &DMatrix<f64>, b: &DVector<f64>, margin: f64) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension("stabilizing gain needs A n×n and B n×1".into()));
    }
    let rank = controllability_rank(a, b);
    if rank < n {
        return Err(Error::RankDeficient { rank, expected: n });
    }
    let id = DMatrix::<f64>::identity(n, n);
    let shifted = -a + &id * margin;
    let bm = DMatrix::from_column_slice(n, 1, b.as_slice());
    let x = solve_care(&shifted, &(&bm * bm.transpose()), &id)?;
    let r = x * b;
    let closed = -a - &bm * r.transpose();
    let abscissa = spectral_abscissa(&closed);
    if abscissa > -margin * (1.0 - 1e-6) {
        return Err(Error::Unstable {
            what: "-A - BR".into(),
            max_re: abscissa,
        });
    }
    Ok(r)
}

/// Two-field quantum system whose (output 2, input 1) response is `C e^{At} B`.
pub fn embed_classical_siso(sys: &ClassicalSISO, r: &DVector<f64>) -> Result<QuadratureSystem> {
    let n = sys.order();
    if r.len() != n {
        return Err(Error::Dimension(format!("gain must have length {n}")));
    }
    let abscissa = spectral_abscissa(&sys.a);
    if abscissa >= 0.0 {
        return Err(Error::Unstable {
            what: "classical A".into(),
            max_re: abscissa,
        });
    }
    let bm = DMatrix::from_column_slice(n, 1, sys.b.as_slice());
    let z = (-&sys.a - &bm * r.transpose()).transpose();
    let z_abscissa = spectral_abscissa(&z);
    if z_abscissa >= 0.0 {
        return Err(Error::Unstable {
            what: "Z = (-A - BR)ᵀ".into(),
            max_re: z_abscissa,
        });
    }
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    a.view_mut((n, n), (n, n)).copy_from(&z);
    // C1 = [R; −C] acts on the first n coordinates, C2 = [Bᵀ; 0] on the rest.
    let mut c = DMatrix::zeros(4, 2 * n);
    for j in 0..n {
        c[(0, j)] = r[j];
        c[(1, j)] = -sys.c[j];
        c[(2, n + j)] = sys.b[j];
    }
    let l = symplectic(n) * c.transpose() * symplectic(2);
    QuadratureSystem::new(a, l, c, DMatrix::identity(4, 4))
}

/// Parameters of the embedded Padé delay-line bank; block `k` delays by `k·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PadeConfig {
    pub blocks: usize,
    pub num_degree: usize,
    pub den_degree: usize,
    pub margin: f64,
    pub dt: f64,
}

impl Default for PadeConfig {
    fn default() -> Self {
        Self {
            blocks: 14,
            num_degree: 7,
            den_degree: 8,
            margin: 0.1,
            dt: 0.01,
        }
    }
}

/// Embedded quantum system of block `k` (delay `k·dt`).
pub fn pade_block(cfg: &PadeConfig, k: usize) -> Result<QuadratureSystem> {
    if cfg.blocks == 0 || k == 0 {
        return Err(Error::InvalidParameter("Padé blocks are numbered from 1".into()));
    }
    let siso = pade_delay_realization(k as f64 * cfg.dt, cfg.num_degree, cfg.den_degree)?;
    let r = stabilizing_gain(&siso.a, &siso.b, cfg.margin)?;
    embed_classical_siso(&siso, &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qss::is_completely_passive;
    use approx::assert_relative_eq;

    #[test]
    fn first_order_pade() {
        let (p, q) = pade_coefficients(1, 1);
        assert_relative_eq!(p[0], 1.0);
        assert_relative_eq!(p[1], -0.5);
        assert_relative_eq!(q[0], 1.0);
        assert_relative_eq!(q[1], 0.5);
        let tau = 0.3;
        let sys = pade_delay_realization(tau, 1, 1).unwrap();
        for &s in &[0.0, 0.7, 3.0, 11.0] {
            let want = (1.0 - s * tau / 2.0) / (1.0 + s * tau / 2.0);
            assert_relative_eq!(sys.transfer_real(s).unwrap(), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn unit_dc_gain_and_strictly_proper() {
        let sys = pade_delay_realization(0.04, 7, 8).unwrap();
        assert_eq!(sys.d, 0.0);
        assert!((sys.transfer_real(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(sys.is_stable());
        assert_eq!(controllability_rank(&sys.a, &sys.b), 8);
    }

    #[test]
    fn transfer_matches_rational_function() {
        let (p, q) = pade_coefficients(7, 8);
        let tau = 0.1;
        let sys = pade_delay_realization(tau, 7, 8).unwrap();
        for &s in &[0.5, 4.0, 30.0] {
            let x = s * tau;
            let num: f64 = p.iter().enumerate().map(|(k, c)| c * x.powi(k as i32)).sum();
            let den: f64 = q.iter().enumerate().map(|(k, c)| c * x.powi(k as i32)).sum();
            assert_relative_eq!(sys.transfer_real(s).unwrap(), num / den, max_relative = 1e-10);
        }
    }

    fn rk4_step_response(sys: &ClassicalSISO, t_end: f64, h: f64) -> Vec<(f64, f64)> {
        let f = |x: &DVector<f64>| &sys.a * x + &sys.b;
        let mut x = DVector::zeros(sys.order());
        let steps = (t_end / h).round() as usize;
        let mut out = Vec::with_capacity(steps);
        for k in 1..=steps {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (h / 2.0)));
            let k3 = f(&(&x + &k2 * (h / 2.0)));
            let k4 = f(&(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            out.push((k as f64 * h, sys.c.dot(&x) + sys.d));
        }
        out
    }

    #[test]
    fn step_response_is_delayed_step() {
        let sys = pade_delay_realization(0.1, 7, 8).unwrap();
        let resp = rk4_step_response(&sys, 0.3, 2e-5);
        let at = |t: f64| resp.iter().min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs())).unwrap().1;
        assert!((at(0.3) - 1.0).abs() < 1e-3, "{}", at(0.3));
        assert!(at(0.05).abs() < 0.05, "{}", at(0.05));
    }

    #[test]
    fn delay_error_shrinks_with_order() {
        let tau = 0.1;
        let mut prev = f64::INFINITY;
        for n in 2..=8 {
            let sys = pade_delay_realization(tau, n - 1, n).unwrap();
            let h = tau / 400.0;
            let resp = rk4_step_response(&sys, 50.0 * tau, h);
            let err: f64 = resp
                .iter()
                .map(|&(t, y)| {
                    let want = if t >= tau { 1.0 } else { 0.0 };
                    (y - want).powi(2) * h
                })
                .sum::<f64>()
                .sqrt();
            assert!(err < prev, "order {n}: {err} vs {prev}");
            prev = err;
        }
    }

    #[test]
    fn scalar_gains() {
        let one = DMatrix::from_element(1, 1, -1.0);
        let b = DVector::from_element(1, 1.0);
        let r = stabilizing_gain(&one, &b, 0.1).unwrap();
        assert!(1.0 - r[0] < -0.1);
        let r = stabilizing_gain(&DMatrix::zeros(1, 1), &b, 0.1).unwrap();
        assert!(r[0] > 0.1);
    }

    #[test]
    fn pade_gain_has_margin() {
        let sys = pade_delay_realization(0.04, 7, 8).unwrap();
        let r = stabilizing_gain(&sys.a, &sys.b, 0.1).unwrap();
        let bm = DMatrix::from_column_slice(8, 1, sys.b.as_slice());
        assert!(spectral_abscissa(&(-&sys.a - bm * r.transpose())) < -0.1);
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0]));
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(controllability_rank(&a, &b), 1);
        let a2 = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        assert_eq!(controllability_rank(&a2, &DVector::from_vec(vec![1.0, 1.0])), 2);
        assert!(matches!(
            stabilizing_gain(&a, &b, 0.1),
            Err(Error::RankDeficient { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn scalar_embedding() {
        let sys = ClassicalSISO::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            0.0,
        )
        .unwrap();
        let q = embed_classical_siso(&sys, &DVector::from_element(1, 2.0)).unwrap();
        assert!(q.realizability().max() < 1e-12);
        for k in 1..20 {
            let t = 0.25 * k as f64;
            let h = &q.c * expm(&(&q.a * t)).unwrap() * &q.l;
            assert_relative_eq!(h[(PADE_OUTPUT, PADE_INPUT)], (-t).exp(), max_relative = 1e-12);
        }
        assert!(!is_completely_passive(&q.to_hamiltonian_spec().unwrap()));
        let spectrum = q.a.clone().complex_eigenvalues();
        assert!(spectrum.iter().all(|z| z.re < 0.0));
    }

    #[test]
    fn unstable_z_rejected() {
        let sys = ClassicalSISO::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            0.0,
        )
        .unwrap();
        assert!(embed_classical_siso(&sys, &DVector::from_element(1, 0.5)).is_err());
    }

    #[test]
    fn padeqw_block_response() {
        let cfg = PadeConfig::default();
        let q = pade_block(&cfg, 4).unwrap();
        assert!(q.realizability().max() < 1e-9, "{:?}", q.realizability());
        let siso = pade_delay_realization(0.04, 7, 8).unwrap();
        for k in 1..30 {
            let t = 0.01 * k as f64;
            let h = &q.c * expm(&(&q.a * t)).unwrap() * &q.l;
            let want = siso.impulse(t).unwrap();
            assert!((h[(PADE_OUTPUT, PADE_INPUT)] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }
}
