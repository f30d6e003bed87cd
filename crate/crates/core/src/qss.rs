//! Linear quantum networks in quadrature coordinates.
//!
//! A network with `n` modes driven by `s` bosonic fields is described at the
//! Hamiltonian level by complex matrices `(M1, M2, N1, N2, S)` and in real
//! quadrature form by `(A, L, C, D)`. Quadratures are ordered with all `q`
//! components before all `p` components.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, symplectic};

/// Default tolerance for algebraic identities.
pub const TOL: f64 = 1e-9;
const SPEC_TOL: f64 = 1e-10;

pub type CMatrix = DMatrix<Complex64>;

/// Hamiltonian / coupling description of a linear quantum network.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    n: usize,
    s: usize,
    m1: CMatrix,
    m2: CMatrix,
    n1: CMatrix,
    n2: CMatrix,
    scatter: CMatrix,
}

fn cmax_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn check_shape(name: &str, m: &CMatrix, r: usize, c: usize) -> Result<()> {
    if m.nrows() != r || m.ncols() != c {
        return Err(Error::Dimension(format!(
            "{name} must be {r}x{c}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl HamiltonianSpec {
    /// Validates shapes, Hermiticity of `[[M1, M2], [M2*, M1*]]` and unitarity of `S`.
    pub fn new(m1: CMatrix, m2: CMatrix, n1: CMatrix, n2: CMatrix, scatter: CMatrix) -> Result<Self> {
        let n = m1.nrows();
        let s = scatter.nrows();
        if n == 0 || s == 0 {
            return Err(Error::Dimension("n and s must be positive".into()));
        }
        check_shape("M1", &m1, n, n)?;
        check_shape("M2", &m2, n, n)?;
        check_shape("N1", &n1, s, n)?;
        check_shape("N2", &n2, s, n)?;
        check_shape("S", &scatter, s, s)?;
        for m in [&m1, &m2, &n1, &n2, &scatter] {
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite("Hamiltonian spec".into()));
            }
        }
        let herm = cmax_abs(&(&m1 - m1.adjoint())).max(cmax_abs(&(&m2 - m2.transpose())));
        if herm > SPEC_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let unit = cmax_abs(&(&scatter * scatter.adjoint() - CMatrix::identity(s, s)));
        if unit > SPEC_TOL {
            return Err(Error::NotUnitary(unit));
        }
        Ok(Self {
            n,
            s,
            m1,
            m2,
            n1,
            n2,
            scatter,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn s(&self) -> usize {
        self.s
    }
    pub fn m1(&self) -> &CMatrix {
        &self.m1
    }
    pub fn m2(&self) -> &CMatrix {
        &self.m2
    }
    pub fn n1(&self) -> &CMatrix {
        &self.n1
    }
    pub fn n2(&self) -> &CMatrix {
        &self.n2
    }
    pub fn scatter(&self) -> &CMatrix {
        &self.scatter
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSpec = serde_json::from_str(text)?;
        raw.into_spec()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RawSpec::from_spec(self))?)
    }
}

/// JSON shape: complex entries as `[re, im]`, matrices as row-major nested arrays.
#[derive(Serialize, Deserialize)]
pub struct RawSpec {
    pub n: usize,
    pub s: usize,
    #[serde(rename = "M1")]
    pub m1: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "M2")]
    pub m2: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "N1")]
    pub n1: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "N2")]
    pub n2: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "S")]
    pub scatter: Vec<Vec<[f64; 2]>>,
}

fn to_nested(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn from_nested(name: &str, rows: &[Vec<[f64; 2]>], r: usize, c: usize) -> Result<CMatrix> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("field {name} must be {r}x{c}")));
    }
    Ok(CMatrix::from_fn(r, c, |i, j| {
        Complex64::new(rows[i][j][0], rows[i][j][1])
    }))
}

impl RawSpec {
    fn from_spec(spec: &HamiltonianSpec) -> Self {
        Self {
            n: spec.n,
            s: spec.s,
            m1: to_nested(&spec.m1),
            m2: to_nested(&spec.m2),
            n1: to_nested(&spec.n1),
            n2: to_nested(&spec.n2),
            scatter: to_nested(&spec.scatter),
        }
    }

    pub fn into_spec(self) -> Result<HamiltonianSpec> {
        let (n, s) = (self.n, self.s);
        HamiltonianSpec::new(
            from_nested("M1", &self.m1, n, n)?,
            from_nested("M2", &self.m2, n, n)?,
            from_nested("N1", &self.n1, s, n)?,
            from_nested("N2", &self.n2, s, n)?,
            from_nested("S", &self.scatter, s, s)?,
        )
    }
}

/// Canonical symplectic form of dimension `2n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticForm {
    n: usize,
    j: DMatrix<f64>,
}

impl SymplecticForm {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            j: symplectic(n),
        }
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }
}

/// Real quadrature state-space model `(A, L, C, D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSystem {
    pub n: usize,
    pub s: usize,
    pub a: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Max-norm residuals of the three physical realizability identities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Realizability {
    /// `A J + J Aᵀ + L J_s Lᵀ`
    pub drift: f64,
    /// `J L + Cᵀ J_s D`
    pub coupling: f64,
    /// `D J_s Dᵀ − J_s`
    pub feedthrough: f64,
}

impl Realizability {
    pub fn max(&self) -> f64 {
        self.drift.max(self.coupling).max(self.feedthrough)
    }
    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

impl QuadratureSystem {
    pub fn new(a: DMatrix<f64>, l: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n2 = a.nrows();
        let s2 = d.nrows();
        if n2 == 0 || !n2.is_multiple_of(2) || s2 == 0 || !s2.is_multiple_of(2) {
            return Err(Error::Dimension("A and D must have even positive size".into()));
        }
        if a.ncols() != n2
            || d.ncols() != s2
            || l.shape() != (n2, s2)
            || c.shape() != (s2, n2)
        {
            return Err(Error::Dimension(format!(
                "inconsistent QSS shapes A {:?} L {:?} C {:?} D {:?}",
                a.shape(),
                l.shape(),
                c.shape(),
                d.shape()
            )));
        }
        for m in [&a, &l, &c, &d] {
            if !linalg::all_finite(m) {
                return Err(Error::NonFinite("quadrature system".into()));
            }
        }
        Ok(Self {
            n: n2 / 2,
            s: s2 / 2,
            a,
            l,
            c,
            d,
        })
    }

    pub fn realizability(&self) -> Realizability {
        check_physical_realizability(self)
    }

    /// Recovers the Hamiltonian description; fails if the recovered `M` is
    /// not Hermitian or `S` not unitary.
    pub fn to_hamiltonian_spec(&self) -> Result<HamiltonianSpec> {
        let (n, s) = (self.n, self.s);
        let cs = sharp_adjoint(&self.c, n, s)?;
        let ah = &self.a + (&cs * &self.c) * 0.5;
        let blk = |m: &DMatrix<f64>, r0: usize, c0: usize, r: usize, c: usize| {
            m.view((r0, c0), (r, c)).into_owned()
        };
        let (a11, a12, a21, a22) = (
            blk(&ah, 0, 0, n, n),
            blk(&ah, 0, n, n, n),
            blk(&ah, n, 0, n, n),
            blk(&ah, n, n, n, n),
        );
        let re_m1 = (&a12 - &a21) * 0.5;
        let re_m2 = (-&a21 - &a12) * 0.5;
        let im_m1 = (&a11 + &a22) * 0.5;
        let im_m2 = (&a11 - &a22) * 0.5;
        let (c11, c12, c21, c22) = (
            blk(&self.c, 0, 0, s, n),
            blk(&self.c, 0, n, s, n),
            blk(&self.c, s, 0, s, n),
            blk(&self.c, s, n, s, n),
        );
        let re_n1 = (&c11 + &c22) * 0.5;
        let re_n2 = (&c11 - &c22) * 0.5;
        let im_n1 = (&c21 - &c12) * 0.5;
        let im_n2 = (&c21 + &c12) * 0.5;
        let re_s = blk(&self.d, 0, 0, s, s);
        let im_s = blk(&self.d, s, 0, s, s);
        let cplx = |re: &DMatrix<f64>, im: &DMatrix<f64>| {
            CMatrix::from_fn(re.nrows(), re.ncols(), |i, j| Complex64::new(re[(i, j)], im[(i, j)]))
        };
        HamiltonianSpec::new(
            cplx(&re_m1, &im_m1),
            cplx(&re_m2, &im_m2),
            cplx(&re_n1, &im_n1),
            cplx(&re_n2, &im_n2),
            cplx(&re_s, &im_s),
        )
    }
}

fn re(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}
fn im(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.im)
}

fn blocks(b11: &DMatrix<f64>, b12: &DMatrix<f64>, b21: &DMatrix<f64>, b22: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, c1) = b11.shape();
    let (r2, c2) = b22.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(b11);
    out.view_mut((0, c1), (r1, c2)).copy_from(b12);
    out.view_mut((r1, 0), (r2, c1)).copy_from(b21);
    out.view_mut((r1, c1), (r2, c2)).copy_from(b22);
    out
}

/// Builds `(A, L, C, D)` from the Hamiltonian description.
pub fn build_quadrature_system(spec: &HamiltonianSpec) -> Result<QuadratureSystem> {
    let (n, s) = (spec.n, spec.s);
    let sc = &spec.scatter;
    let d = blocks(&re(sc), &(-im(sc)), &im(sc), &re(sc));
    let np = &spec.n1 + &spec.n2;
    let nm = &spec.n1 - &spec.n2;
    let c = blocks(&re(&np), &(-im(&nm)), &im(&np), &re(&nm));
    let mp = &spec.m1 + &spec.m2;
    let mm = &spec.m1 - &spec.m2;
    let ah = blocks(&im(&mp), &re(&mm), &(-re(&mp)), &im(&mm));
    let cs = sharp_adjoint(&c, n, s)?;
    let a = ah - (&cs * &c) * 0.5;
    let l = -(&cs * &d);
    QuadratureSystem::new(a, l, c, d)
}

/// `X♯ = −J_n Xᵀ J_s` for a real `2s×2n` matrix.
pub fn sharp_adjoint(x: &DMatrix<f64>, n: usize, s: usize) -> Result<DMatrix<f64>> {
    if x.shape() != (2 * s, 2 * n) {
        return Err(Error::Dimension(format!(
            "sharp adjoint expects {}x{}, got {:?}",
            2 * s,
            2 * n,
            x.shape()
        )));
    }
    Ok(-(symplectic(n) * x.transpose() * symplectic(s)))
}

pub fn check_physical_realizability(sys: &QuadratureSystem) -> Realizability {
    let j = symplectic(sys.n);
    let js = symplectic(sys.s);
    let drift = &sys.a * &j + &j * sys.a.transpose() + &sys.l * &js * sys.l.transpose();
    let coupling = &j * &sys.l + sys.c.transpose() * &js * &sys.d;
    let feed = &sys.d * &js * sys.d.transpose() - &js;
    Realizability {
        drift: max_abs(&drift),
        coupling: max_abs(&coupling),
        feedthrough: max_abs(&feed),
    }
}

pub fn is_completely_passive(spec: &HamiltonianSpec) -> bool {
    let r = re(&spec.m1);
    let i = im(&spec.m1);
    cmax_abs(&spec.m2) <= SPEC_TOL
        && cmax_abs(&spec.n2) <= SPEC_TOL
        && max_abs(&(&r - r.transpose())) <= SPEC_TOL
        && max_abs(&(&i + i.transpose())) <= SPEC_TOL
}

/// `e^{M t}` by order-13 Padé scaling and squaring.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() {
        return Err(Error::NonFinite("exponential time argument".into()));
    }
    linalg::expm(&(m * t))
}

/// Smallest eigenvalue of the Hermitian matrix `Q + (i/2) J`.
pub fn uncertainty_margin(q: &DMatrix<f64>, n: usize) -> Result<f64> {
    if q.shape() != (2 * n, 2 * n) {
        return Err(Error::Dimension(format!("covariance must be {0}x{0}", 2 * n)));
    }
    let asym = linalg::asymmetry(q);
    if asym > SPEC_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    // Real embedding [[Q, -J/2], [J/2, Q]] has the same spectrum, doubled.
    let hj = symplectic(n) * 0.5;
    let emb = blocks(&linalg::symmetrize(q), &(-&hj), &hj, &linalg::symmetrize(q));
    Ok(emb.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min))
}

pub fn is_valid_quantum_covariance(q: &DMatrix<f64>, n: usize) -> Result<bool> {
    Ok(uncertainty_margin(q, n)? >= -1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar(z: Complex64) -> CMatrix {
        CMatrix::from_element(1, 1, z)
    }

    pub(crate) fn random_spec(rng: &mut ChaCha8Rng, n: usize, s: usize) -> HamiltonianSpec {
        let mut g = |r, cc| CMatrix::from_fn(r, cc, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let x = g(n, n);
        let m1 = (&x + x.adjoint()) * c(0.5);
        let y = g(n, n);
        let m2 = (&y + y.transpose()) * c(0.5);
        let n1 = g(s, n);
        let n2 = g(s, n);
        let h = g(s, s);
        let h = (&h + h.adjoint()) * c(0.5);
        // unitary from the exponential of an anti-Hermitian matrix
        let eig = h.symmetric_eigen();
        let ph = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(0.0, l).exp()));
        let u = &eig.eigenvectors * ph * eig.eigenvectors.adjoint();
        HamiltonianSpec::new(m1, m2, n1, n2, u).unwrap()
    }

    #[test]
    fn oscillator_matrices() {
        let spec = HamiltonianSpec::new(
            scalar(c(-2.0)),
            scalar(c(0.0)),
            scalar(c(1.0)),
            scalar(c(0.0)),
            scalar(c(1.0)),
        )
        .unwrap();
        let sys = build_quadrature_system(&spec).unwrap();
        assert_eq!(sys.a, DMatrix::from_row_slice(2, 2, &[-0.5, -2.0, 2.0, -0.5]));
        assert_eq!(sys.l, -DMatrix::<f64>::identity(2, 2));
        assert_eq!(sys.c, DMatrix::<f64>::identity(2, 2));
        assert_eq!(sys.d, DMatrix::<f64>::identity(2, 2));
        assert!(sys.realizability().max() < 1e-12);
    }

    #[test]
    fn free_mode_is_trivial() {
        let z = scalar(c(0.0));
        let spec = HamiltonianSpec::new(z.clone(), z.clone(), z.clone(), z, scalar(c(1.0))).unwrap();
        let sys = build_quadrature_system(&spec).unwrap();
        assert_eq!(sys.a, DMatrix::zeros(2, 2));
        assert_eq!(sys.l, DMatrix::zeros(2, 2));
        assert_eq!(sys.c, DMatrix::zeros(2, 2));
        assert_eq!(sys.d, DMatrix::identity(2, 2));
    }

    #[test]
    fn random_specs_are_realizable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = random_spec(&mut rng, 2, 2);
        let sys = build_quadrature_system(&spec).unwrap();
        let r = sys.realizability();
        assert!(r.drift < 1e-10 && r.coupling < 1e-10 && r.feedthrough < 1e-10, "{r:?}");
    }

    #[test]
    fn rejects_bad_specs() {
        let z = scalar(c(0.0));
        let bad_m1 = scalar(Complex64::new(0.0, 1.0));
        assert!(matches!(
            HamiltonianSpec::new(bad_m1, z.clone(), z.clone(), z.clone(), scalar(c(1.0))),
            Err(Error::NotHermitian(_))
        ));
        assert!(matches!(
            HamiltonianSpec::new(z.clone(), z.clone(), z.clone(), z, scalar(c(1.1))),
            Err(Error::NotUnitary(_))
        ));
    }

    #[test]
    fn spec_round_trips_through_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_spec(&mut rng, 3, 2);
        let back = build_quadrature_system(&spec).unwrap().to_hamiltonian_spec().unwrap();
        assert!(cmax_abs(&(back.m1() - spec.m1())) < 1e-12);
        assert!(cmax_abs(&(back.m2() - spec.m2())) < 1e-12);
        assert!(cmax_abs(&(back.n1() - spec.n1())) < 1e-12);
        assert!(cmax_abs(&(back.n2() - spec.n2())) < 1e-12);
        assert!(cmax_abs(&(back.scatter() - spec.scatter())) < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_spec(&mut rng, 2, 1);
        let text = spec.to_json().unwrap();
        assert!(text.contains("\"M1\""));
        assert_eq!(HamiltonianSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn sharp_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(sharp_adjoint(&id, 1, 1).unwrap(), id);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            sharp_adjoint(&x, 1, 1).unwrap(),
            DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -3.0, 1.0])
        );
        assert!(sharp_adjoint(&x, 2, 1).is_err());
    }

    #[test]
    fn perturbed_drift_breaks_realizability() {
        let spec = HamiltonianSpec::new(
            scalar(c(-0.25)),
            scalar(c(0.0)),
            scalar(c(1.0)),
            scalar(c(0.0)),
            scalar(c(1.0)),
        )
        .unwrap();
        let mut sys = build_quadrature_system(&spec).unwrap();
        assert!(sys.realizability().max() < 1e-12);
        sys.a += DMatrix::<f64>::identity(2, 2);
        assert!(sys.realizability().drift >= 1.0);
    }

    #[test]
    fn passivity_threshold() {
        let one = scalar(c(1.0));
        let z = scalar(c(0.0));
        let passive = HamiltonianSpec::new(scalar(c(-0.3)), z.clone(), one.clone(), z.clone(), one.clone()).unwrap();
        assert!(is_completely_passive(&passive));
        let active = HamiltonianSpec::new(scalar(c(-0.3)), scalar(c(1e-6)), one.clone(), z, one).unwrap();
        assert!(!is_completely_passive(&active));
    }

    #[test]
    fn exponential_of_rotation_block() {
        let m = DMatrix::from_row_slice(2, 2, &[-0.5, -1.0, 1.0, -0.5]);
        let e = matrix_exponential(&m, std::f64::consts::PI).unwrap();
        let f = (-std::f64::consts::FRAC_PI_2).exp();
        assert_relative_eq!(e[(0, 0)], -f, epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)], -f, epsilon = 1e-14);
        assert!(e[(0, 1)].abs() < 1e-14 && e[(1, 0)].abs() < 1e-14);
        assert_relative_eq!(e[(0, 0)], -0.20788, epsilon = 1e-5);
    }

    #[test]
    fn covariance_validity() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(is_valid_quantum_covariance(&(&id * 0.5), 1).unwrap());
        assert!(!is_valid_quantum_covariance(&(&id * 0.25), 1).unwrap());
        let squeezed = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0 / 16.0]);
        assert!(is_valid_quantum_covariance(&squeezed, 1).unwrap());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(is_valid_quantum_covariance(&asym, 1).is_err());
        let m = uncertainty_margin(&(&id * 0.5), 1).unwrap();
        assert!(m.abs() < 1e-14);
    }
}
