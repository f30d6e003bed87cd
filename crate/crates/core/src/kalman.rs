//! Quantum Kalman filter for continuously measured linear quantum systems.
//!
//! Homodyne detection of the first quadrature of each output field gives
//! `C_q = [I_s 0] C` and `D_q = [I_s 0] D`. The conditional covariance obeys
//! a Riccati flow; the conditional mean is driven by the input and, when
//! measurement noise is simulated, by the innovation through the gain `G_t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, expm, max_abs, solve_care, spectral_abscissa, symmetrize};
use crate::qss::{uncertainty_margin, QuadratureSystem};

pub use crate::reservoirs::controllability_rank;

/// Conditional mean and covariance at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub pi: DVector<f64>,
    pub v: DMatrix<f64>,
    pub t: f64,
}

impl KalmanState {
    /// Vacuum initial condition: `π = 0`, `V = ½ I`.
    pub fn vacuum(n: usize) -> Self {
        Self {
            pi: DVector::zeros(2 * n),
            v: DMatrix::identity(2 * n, 2 * n) * 0.5,
            t: 0.0,
        }
    }
}

/// Vacuum field noise covariance `½ I_{2s}`.
pub fn vacuum_noise(s: usize) -> DMatrix<f64> {
    DMatrix::identity(2 * s, 2 * s) * 0.5
}

/// `C_q = [I_s 0] C`, `D_q = [I_s 0] D`.
pub fn measurement_restriction(sys: &QuadratureSystem) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = sys.s;
    let cq = sys.c.rows(0, s).into_owned();
    let dq = sys.d.rows(0, s).into_owned();
    let w = &dq * dq.transpose();
    if w.clone().cholesky().is_none() {
        return Err(Error::Singular("innovation covariance D_q D_qᵀ".into()));
    }
    Ok((cq, dq))
}

/// Precomputed pieces of the Riccati flow.
#[derive(Clone, Debug)]
pub struct Riccati {
    a: DMatrix<f64>,
    cq: DMatrix<f64>,
    w_inv: DMatrix<f64>,
    lql: DMatrix<f64>,
    lqd: DMatrix<f64>,
}

impl Riccati {
    pub fn new(sys: &QuadratureSystem, q: &DMatrix<f64>) -> Result<Self> {
        if q.shape() != (2 * sys.s, 2 * sys.s) {
            return Err(Error::Dimension(format!("Q must be {0}x{0}", 2 * sys.s)));
        }
        let asym = linalg::asymmetry(q);
        if asym > 1e-10 {
            return Err(Error::NotSymmetric(asym));
        }
        let (cq, dq) = measurement_restriction(sys)?;
        let w = &dq * dq.transpose();
        let w_inv = w
            .try_inverse()
            .ok_or_else(|| Error::Singular("innovation covariance D_q D_qᵀ".into()))?;
        Ok(Self {
            a: sys.a.clone(),
            lql: &sys.l * q * sys.l.transpose(),
            lqd: &sys.l * q * dq.transpose(),
            cq,
            w_inv,
        })
    }

    /// `G = V C_qᵀ + L Q D_qᵀ`.
    pub fn gain(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        v * self.cq.transpose() + &self.lqd
    }

    pub fn derivative(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let g = self.gain(v);
        &self.a * v + v * self.a.transpose() + &self.lql - &g * &self.w_inv * g.transpose()
    }

    fn rk4(&self, v: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let k1 = self.derivative(v);
        let k2 = self.derivative(&(v + &k1 * (h / 2.0)));
        let k3 = self.derivative(&(v + &k2 * (h / 2.0)));
        let k4 = self.derivative(&(v + &k3 * h));
        symmetrize(&(v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)))
    }

    /// RK4 step size safely inside the stability region.
    fn stable_step(&self, v: &DMatrix<f64>) -> f64 {
        let row_norm = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let gc = self.cq.transpose() * &self.w_inv * &self.cq;
        let rate = row_norm(&self.a) + row_norm(&gc) * row_norm(v).max(1.0);
        0.5 / rate.max(1e-3)
    }
}

/// Exact one-step map of the Riccati flow. With the cross term removed,
/// `Ã = A − S W⁻¹ C_q`, `Q̃ = LQLᵀ − S W⁻¹ Sᵀ`, `R = C_qᵀ W⁻¹ C_q`, the flow
/// linearizes as `X' = ÃX + Q̃Y`, `Y' = RX − ÃᵀY` with `V = X Y⁻¹`, so one
/// step is the linear-fractional map built from `exp(HΔ)`.
#[derive(Clone, Debug)]
pub struct RiccatiPropagator {
    phi: DMatrix<f64>,
    n: usize,
}

impl RiccatiPropagator {
    pub fn new(ric: &Riccati, dt: f64) -> Result<Self> {
        let n = ric.a.nrows();
        let s_w = &ric.lqd * &ric.w_inv;
        let a_t = &ric.a - &s_w * &ric.cq;
        let q_t = &ric.lql - &s_w * ric.lqd.transpose();
        let r = ric.cq.transpose() * &ric.w_inv * &ric.cq;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&a_t);
        h.view_mut((0, n), (n, n)).copy_from(&q_t);
        h.view_mut((n, 0), (n, n)).copy_from(&r);
        h.view_mut((n, n), (n, n)).copy_from(&(-a_t.transpose()));
        Ok(Self { phi: expm(&(h * dt))?, n })
    }

    pub fn step(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n;
        let p = |i: usize, j: usize| self.phi.view((i * n, j * n), (n, n));
        let x = p(0, 0) * v + p(0, 1);
        let y = p(1, 0) * v + p(1, 1);
        // V = X Y⁻¹  ⇔  Yᵀ Vᵀ = Xᵀ
        let vt = y
            .transpose()
            .lu()
            .solve(&x.transpose())
            .ok_or_else(|| Error::Singular("Riccati propagator denominator".into()))?;
        Ok(symmetrize(&vt.transpose()))
    }
}

/// `A V + V Aᵀ + L Q Lᵀ − G (D_q D_qᵀ)⁻¹ Gᵀ`.
pub fn riccati_derivative(v: &DMatrix<f64>, sys: &QuadratureSystem, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.shape() != sys.a.shape() {
        return Err(Error::Dimension("V must match A".into()));
    }
    let asym = linalg::asymmetry(v);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(Riccati::new(sys, q)?.derivative(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SteadyStateMethod {
    Flow,
    SignNewton,
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub v: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub method: SteadyStateMethod,
    pub residual: f64,
}

const FLOW_TOL: f64 = 1e-12;
/// Relative per-step change below which the simulated covariance is frozen.
const SETTLE_TOL: f64 = 1e-14;
const FLOW_BUDGET: usize = 20_000;

/// Steady-state covariance and gain of the filter, starting from the vacuum.
pub fn steady_state(sys: &QuadratureSystem, q: &DMatrix<f64>) -> Result<SteadyState> {
    let ric = Riccati::new(sys, q)?;
    let n2 = 2 * sys.n;
    let mut v = DMatrix::identity(n2, n2) * 0.5;
    let mut flow_ok = false;
    for _ in 0..FLOW_BUDGET {
        let dv = ric.derivative(&v);
        let r = max_abs(&dv);
        if !r.is_finite() {
            break;
        }
        if r < FLOW_TOL {
            flow_ok = true;
            break;
        }
        let h = ric.stable_step(&v);
        v = ric.rk4(&v, h);
    }
    let method = if flow_ok {
        SteadyStateMethod::Flow
    } else {
        // Dual form: Ã V + V Ãᵀ − V Gc V + Q̃ = 0
        let a_t = &ric.a - &ric.lqd * &ric.w_inv * &ric.cq;
        let q_t = symmetrize(&(&ric.lql - &ric.lqd * &ric.w_inv * ric.lqd.transpose()));
        let gc = symmetrize(&(ric.cq.transpose() * &ric.w_inv * &ric.cq));
        v = solve_care(&a_t.transpose(), &gc, &q_t)?;
        SteadyStateMethod::SignNewton
    };
    let residual = max_abs(&ric.derivative(&v));
    let scale = 1.0 + max_abs(&v) * max_abs(&ric.a) + max_abs(&ric.lql);
    if !(residual <= 1e-8 * scale) {
        return Err(Error::NotConverged {
            what: "Riccati steady state".into(),
            iterations: FLOW_BUDGET,
            residual,
        });
    }
    let g = ric.gain(&v);
    let closed = &ric.a - &g * &ric.w_inv * &ric.cq;
    let abscissa = spectral_abscissa(&closed);
    if abscissa >= 0.0 {
        return Err(Error::Unstable {
            what: "filter closed loop (detectability/stabilizability)".into(),
            max_re: abscissa,
        });
    }
    Ok(SteadyState {
        v,
        g,
        method,
        residual,
    })
}

/// Exact sampling of the linear dynamics at step `dt` with ZOH inputs.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub dt: f64,
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub c_q: DMatrix<f64>,
    pub d_q: DMatrix<f64>,
    pub w_d: DMatrix<f64>,
}

pub fn discretize(sys: &QuadratureSystem, q: &DMatrix<f64>, dt: f64) -> Result<Discretization> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    let (n2, s2) = (2 * sys.n, 2 * sys.s);
    let mut aug = DMatrix::zeros(n2 + s2, n2 + s2);
    aug.view_mut((0, 0), (n2, n2)).copy_from(&sys.a);
    aug.view_mut((0, n2), (n2, s2)).copy_from(&sys.l);
    let e = expm(&(aug * dt))?;
    let a_d = e.view((0, 0), (n2, n2)).into_owned();
    let b_d = e.view((0, n2), (n2, s2)).into_owned();

    let mut vl = DMatrix::zeros(2 * n2, 2 * n2);
    vl.view_mut((0, 0), (n2, n2)).copy_from(&(-&sys.a));
    vl.view_mut((0, n2), (n2, n2)).copy_from(&(&sys.l * q * sys.l.transpose()));
    vl.view_mut((n2, n2), (n2, n2)).copy_from(&sys.a.transpose());
    let f = expm(&(vl * dt))?;
    let f12 = f.view((0, n2), (n2, n2)).into_owned();
    let f22 = f.view((n2, n2), (n2, n2)).into_owned();
    let w_d = symmetrize(&(f22.transpose() * f12));
    let (c_q, d_q) = measurement_restriction(sys)?;
    Ok(Discretization {
        dt,
        a_d,
        b_d,
        c_q,
        d_q,
        w_d,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Off,
    On,
}

#[derive(Clone, Debug)]
pub struct SimulationOptions {
    pub dt: f64,
    pub noise: NoiseMode,
    /// Maps the scalar input onto the `2s` field components.
    pub input_direction: DVector<f64>,
    /// Add the instantaneous `D_q u` term to the outputs.
    pub include_feedthrough: bool,
    /// Field noise covariance, vacuum `½ I` when absent.
    pub q: Option<DMatrix<f64>>,
    pub initial: Option<KalmanState>,
    /// Keep the conditional-mean trajectory.
    pub record_means: bool,
}

impl SimulationOptions {
    pub fn new(dt: f64, input_direction: DVector<f64>) -> Self {
        Self {
            dt,
            noise: NoiseMode::Off,
            input_direction,
            include_feedthrough: false,
            q: None,
            initial: None,
            record_means: true,
        }
    }
}

/// Measured outputs on the grid `t_k = (k+1)Δ`, `k = 0..steps`; row `k` is
/// the output rate at the end of step `k` after input `u_k` acted on
/// `[kΔ, (k+1)Δ)`.
#[derive(Clone, Debug)]
pub struct MeasuredTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub inputs: Vec<f64>,
    /// steps × s
    pub outputs: DMatrix<f64>,
    /// steps × 2n (empty when means were not recorded)
    pub means: DMatrix<f64>,
    pub noise: NoiseMode,
    /// Smallest eigenvalue of `V + (i/2) J` seen at the 100-step checks.
    pub min_uncertainty_margin: Option<f64>,
    pub max_asymmetry: Option<f64>,
}

impl MeasuredTrajectory {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    /// Sum of the `s` measured outputs per step.
    pub fn summed_outputs(&self) -> Vec<f64> {
        (0..self.outputs.nrows()).map(|k| self.outputs.row(k).sum()).collect()
    }

    /// Output increments `Δ·y_k`.
    pub fn increments(&self) -> DMatrix<f64> {
        &self.outputs * self.dt
    }
}

/// Simulates the filtered measurement record for a scalar ZOH input.
pub fn simulate_measured<R: Rng + ?Sized>(
    sys: &QuadratureSystem,
    input: &[f64],
    opts: &SimulationOptions,
    rng: &mut R,
) -> Result<MeasuredTrajectory> {
    let (n2, s) = (2 * sys.n, sys.s);
    if opts.input_direction.len() != 2 * s {
        return Err(Error::Dimension(format!("input direction must have length {}", 2 * s)));
    }
    let q = opts.q.clone().unwrap_or_else(|| vacuum_noise(s));
    let disc = discretize(sys, &q, opts.dt)?;
    let b_eff = &disc.b_d * &opts.input_direction;
    let feed = if opts.include_feedthrough {
        &disc.d_q * &opts.input_direction
    } else {
        DVector::zeros(s)
    };
    let state = opts.initial.clone().unwrap_or_else(|| KalmanState::vacuum(sys.n));
    if state.pi.len() != n2 || state.v.shape() != (n2, n2) {
        return Err(Error::Dimension("initial state does not match the system".into()));
    }
    let steps = input.len();
    let mut outputs = DMatrix::zeros(steps, s);
    let mut means = if opts.record_means {
        DMatrix::zeros(steps, n2)
    } else {
        DMatrix::zeros(0, n2)
    };
    let mut pi = state.pi;
    let mut v = state.v;
    let mut next = DVector::zeros(n2);
    let mut y = DVector::zeros(s);

    let noisy = opts.noise == NoiseMode::On;
    let ric = if noisy { Some(Riccati::new(sys, &q)?) } else { None };
    let propagator = match &ric {
        Some(r) => Some(RiccatiPropagator::new(r, opts.dt)?),
        None => None,
    };
    let w = &disc.d_q * disc.d_q.transpose();
    let mut v_settled = false;
    let mut min_margin: Option<f64> = None;
    let mut max_asym: Option<f64> = None;
    let sqrt_dt = opts.dt.sqrt();

    for (k, &u) in input.iter().enumerate() {
        next.gemv(1.0, &disc.a_d, &pi, 0.0);
        next.axpy(u, &b_eff, 1.0);
        let mut xi = DVector::zeros(s);
        if let Some(ric) = &ric {
            for x in xi.iter_mut() {
                *x = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            }
            let g = ric.gain(&v);
            next += &g * &xi;
            if !v_settled {
                let prop = propagator.as_ref().expect("built with the Riccati data");
                let nv = prop.step(&v)?;
                if max_abs(&(&nv - &v)) <= SETTLE_TOL * max_abs(&nv).max(1.0) {
                    v_settled = true;
                }
                v = nv;
            }
            if k % 100 == 0 {
                let m = uncertainty_margin(&symmetrize(&v), sys.n)?;
                min_margin = Some(min_margin.map_or(m, |x| x.min(m)));
                let a = linalg::asymmetry(&v);
                max_asym = Some(max_asym.map_or(a, |x| x.max(a)));
            }
        }
        std::mem::swap(&mut pi, &mut next);
        if !pi.iter().all(|x| x.is_finite()) {
            return Err(Error::NanAtStep(k));
        }
        y.gemv(1.0, &disc.c_q, &pi, 0.0);
        y.axpy(u, &feed, 1.0);
        if noisy {
            y += &w * &xi / opts.dt;
        }
        outputs.row_mut(k).copy_from(&y.transpose());
        if opts.record_means {
            means.row_mut(k).copy_from(&pi.transpose());
        }
    }
    Ok(MeasuredTrajectory {
        dt: opts.dt,
        times: (1..=steps).map(|k| k as f64 * opts.dt).collect(),
        inputs: input.to_vec(),
        outputs,
        means,
        noise: opts.noise,
        min_uncertainty_margin: min_margin,
        max_asymmetry: max_asym,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoirs::{
        build_harmonic_oscillator, hqw_channel_system, hqw_input_direction, pade_block, sample_hqw_params,
        HqwConfig, PadeConfig,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn restriction_examples() {
        let sys = build_harmonic_oscillator(0.8, 0.3, 1.0, 1.0, 0.0).unwrap();
        let (cq, dq) = measurement_restriction(&sys).unwrap();
        assert_eq!(cq, DMatrix::from_row_slice(1, 2, &[0.8, -0.3]));
        assert_relative_eq!((&dq * dq.transpose())[(0, 0)], 1.0);
        for th in [0.1f64, 1.3, 2.9] {
            let sys = build_harmonic_oscillator(0.8, 0.0, 1.0, th.cos(), th.sin()).unwrap();
            let (_, dq) = measurement_restriction(&sys).unwrap();
            assert_relative_eq!((&dq * dq.transpose())[(0, 0)], 1.0, epsilon = 1e-15);
        }
        let pade = pade_block(&PadeConfig::default(), 1).unwrap();
        let (_, dq) = measurement_restriction(&pade).unwrap();
        assert_eq!(&dq * dq.transpose(), DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn vacuum_is_fixed_point_for_passive_oscillators() {
        let cfg = HqwConfig { n_c: 6, d: 1, seed: 3, ..Default::default() };
        let sys = hqw_channel_system(&sample_hqw_params(&cfg).unwrap()[0]).unwrap();
        let v = DMatrix::identity(12, 12) * 0.5;
        let dv = riccati_derivative(&v, &sys, &vacuum_noise(6)).unwrap();
        assert!(max_abs(&dv) < 1e-13);
    }

    #[test]
    fn closed_system_reduces() {
        let mut sys = build_harmonic_oscillator(1.0, 0.0, 0.5, 1.0, 0.0).unwrap();
        sys.l = DMatrix::zeros(2, 2);
        let v = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.9]);
        let (cq, dq) = measurement_restriction(&sys).unwrap();
        let w_inv = (&dq * dq.transpose()).try_inverse().unwrap();
        let want = &sys.a * &v + &v * sys.a.transpose() - &v * cq.transpose() * w_inv * &cq * &v;
        let got = riccati_derivative(&v, &sys, &vacuum_noise(1)).unwrap();
        assert!(max_abs(&(got - want)) < 1e-14);
    }

    #[test]
    fn derivative_matches_scalar_integrator() {
        // n=1 system, compare one tiny Euler step of the matrix flow with an
        // entrywise hand-coded expression.
        let sys = build_harmonic_oscillator(0.9, 0.2, 0.7, 0.6, 0.8).unwrap();
        let v = DMatrix::from_row_slice(2, 2, &[1.2, -0.3, -0.3, 0.8]);
        let q = vacuum_noise(1);
        let got = riccati_derivative(&v, &sys, &q).unwrap();
        let (a, l) = (&sys.a, &sys.l);
        let (c0, c1) = (sys.c[(0, 0)], sys.c[(0, 1)]);
        let (d0, d1) = (sys.d[(0, 0)], sys.d[(0, 1)]);
        let w = d0 * d0 + d1 * d1;
        let mut want = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let mut x = 0.0;
                for k in 0..2 {
                    x += a[(i, k)] * v[(k, j)] + v[(i, k)] * a[(j, k)];
                    x += 0.5 * l[(i, k)] * l[(j, k)];
                }
                let gi = v[(i, 0)] * c0 + v[(i, 1)] * c1 + 0.5 * (l[(i, 0)] * d0 + l[(i, 1)] * d1);
                let gj = v[(j, 0)] * c0 + v[(j, 1)] * c1 + 0.5 * (l[(j, 0)] * d0 + l[(j, 1)] * d1);
                want[(i, j)] = x - gi * gj / w;
            }
        }
        assert!(max_abs(&(got - want)) < 1e-12);
    }

    #[test]
    fn passive_channel_has_vacuum_steady_state() {
        let cfg = HqwConfig { n_c: 8, d: 1, seed: 1, ..Default::default() };
        let sys = hqw_channel_system(&sample_hqw_params(&cfg).unwrap()[0]).unwrap();
        let ss = steady_state(&sys, &vacuum_noise(8)).unwrap();
        assert!(max_abs(&(&ss.v - DMatrix::identity(16, 16) * 0.5)) < 1e-8);
        assert!(max_abs(&ss.g) < 1e-8);
        assert_eq!(ss.method, SteadyStateMethod::Flow);
    }

    #[test]
    fn active_block_has_back_action() {
        let sys = pade_block(&PadeConfig::default(), 3).unwrap();
        let ss = steady_state(&sys, &vacuum_noise(2)).unwrap();
        assert!(max_abs(&ss.g) > 1e-3);
        assert!(uncertainty_margin(&ss.v, sys.n).unwrap() > -1e-8);
    }

    #[test]
    fn scalar_quadratic_steady_state() {
        // dv/dt = −2a v + ℓ² q − (v c + ℓ q d)² / d², mode-wise decoupled toy:
        // one mode with A = −a I, C_q = (c, 0), L = 0 except through D.
        let a = 0.7;
        let c = 0.4;
        let mut sys = build_harmonic_oscillator(0.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        sys.a = DMatrix::identity(2, 2) * -a;
        sys.c = DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, 0.0]);
        sys.l = DMatrix::zeros(2, 2);
        let ss = steady_state(&sys, &vacuum_noise(1)).unwrap();
        // q-quadrature: −2a v − c² v² = 0 starting from v = ½ → v = 0 is the stable root
        // p-quadrature: −2a v = 0 → v = 0
        assert!(ss.v[(0, 0)].abs() < 1e-6);
        // with a driving term the root is the positive one of c² v² + 2a v − k = 0
        sys.l = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let ric = Riccati::new(&sys, &vacuum_noise(1)).unwrap();
        let v = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.2]);
        let dv = ric.derivative(&v);
        assert_relative_eq!(dv[(0, 0)], -2.0 * a * 0.3 - c * c * 0.09, epsilon = 1e-14);
    }

    #[test]
    fn scalar_quadratic_with_driving_noise() {
        let a = 0.7;
        let c = 0.4;
        let ell = 0.5;
        let mut sys = build_harmonic_oscillator(0.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        sys.a = DMatrix::identity(2, 2) * -a;
        sys.c = DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, 0.0]);
        // L drives only the q-quadrature from the second field component,
        // which is not measured, so the cross term L Q D_qᵀ vanishes.
        sys.l = DMatrix::from_row_slice(2, 2, &[0.0, ell, 0.0, 0.0]);
        let ss = steady_state(&sys, &vacuum_noise(1)).unwrap();
        let k = 0.5 * ell * ell;
        let root = (-2.0 * a + (4.0 * a * a + 4.0 * c * c * k).sqrt()) / (2.0 * c * c);
        assert_relative_eq!(ss.v[(0, 0)], root, max_relative = 1e-8);
    }

    #[test]
    fn discretize_trivial_cases() {
        let mut sys = build_harmonic_oscillator(0.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        sys.l = DMatrix::identity(2, 2);
        let q = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.4]);
        let d = discretize(&sys, &q, 0.01).unwrap();
        assert!(max_abs(&(&d.a_d - DMatrix::identity(2, 2))) < 1e-15);
        assert!(max_abs(&(&d.b_d - DMatrix::identity(2, 2) * 0.01)) < 1e-15);
        assert!(max_abs(&(&d.w_d - &q * 0.01)) < 1e-15);
        sys.a = DMatrix::identity(2, 2) * -1.0;
        let d = discretize(&sys, &q, 0.01).unwrap();
        assert_relative_eq!(d.a_d[(0, 0)], 0.990050, epsilon = 1e-6);
        assert!(discretize(&sys, &q, 0.0).is_err());
    }

    #[test]
    fn process_noise_matches_quadrature() {
        let cfg = HqwConfig { n_c: 2, d: 1, seed: 4, ..Default::default() };
        let sys = hqw_channel_system(&sample_hqw_params(&cfg).unwrap()[0]).unwrap();
        let q = vacuum_noise(2);
        let dt = 0.01;
        let d = discretize(&sys, &q, dt).unwrap();
        // composite Simpson with many panels
        let lql = &sys.l * &q * sys.l.transpose();
        let panels = 2000;
        let h = dt / panels as f64;
        let mut acc = DMatrix::zeros(4, 4);
        for i in 0..=panels {
            let s = i as f64 * h;
            let e = expm(&(&sys.a * s)).unwrap();
            let w = if i == 0 || i == panels { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += &e * &lql * e.transpose() * w;
        }
        acc *= h / 3.0;
        assert!(max_abs(&(d.w_d - acc)) < 1e-10);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let sys = build_harmonic_oscillator(1.0, 0.0, 0.3, 1.0, 0.0).unwrap();
        let opts = SimulationOptions::new(0.01, hqw_input_direction(1));
        let tr = simulate_measured(&sys, &vec![0.0; 50], &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(tr.outputs.iter().all(|&x| x == 0.0));
        assert_eq!(tr.steps(), 50);
        assert_relative_eq!(tr.times[49], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn step_response_matches_closed_form() {
        let sys = build_harmonic_oscillator(1.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        let opts = SimulationOptions::new(0.01, hqw_input_direction(1));
        let tr = simulate_measured(&sys, &vec![1.0; 100], &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((tr.outputs[(99, 0)] - (-0.78694)).abs() < 1e-4);
        let mut with_feed = opts.clone();
        with_feed.include_feedthrough = true;
        let tr2 = simulate_measured(&sys, &vec![1.0; 100], &with_feed, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_relative_eq!(tr2.outputs[(99, 0)] - tr.outputs[(99, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn passive_means_unaffected_by_measurement_noise() {
        let cfg = HqwConfig { n_c: 4, d: 1, seed: 8, ..Default::default() };
        let sys = hqw_channel_system(&sample_hqw_params(&cfg).unwrap()[0]).unwrap();
        let u: Vec<f64> = (0..300).map(|k| ((k / 7) % 2) as f64).collect();
        let mut opts = SimulationOptions::new(0.01, hqw_input_direction(4));
        let quiet = simulate_measured(&sys, &u, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        opts.noise = NoiseMode::On;
        let noisy = simulate_measured(&sys, &u, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(max_abs(&(&quiet.means - &noisy.means)) < 1e-8);
        assert!(max_abs(&(&quiet.outputs - &noisy.outputs)) > 1e-3);
    }

    #[test]
    fn pure_noise_output_variance() {
        let sys = build_harmonic_oscillator(1.0, 0.0, 0.3, 1.0, 0.0).unwrap();
        let mut opts = SimulationOptions::new(0.01, hqw_input_direction(1));
        opts.noise = NoiseMode::On;
        let tr = simulate_measured(&sys, &vec![0.0; 10_000], &opts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let inc = tr.increments();
        let n = inc.nrows() as f64;
        let mean = inc.column(0).sum() / n;
        let var = inc.column(0).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.01 - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn covariance_stays_physical_for_active_block() {
        let sys = pade_block(&PadeConfig::default(), 2).unwrap();
        let mut opts = SimulationOptions::new(0.01, DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        opts.noise = NoiseMode::On;
        let u: Vec<f64> = (0..400).map(|k| (k % 3) as f64).collect();
        let tr = simulate_measured(&sys, &u, &opts, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(tr.min_uncertainty_margin.unwrap() >= -1e-8);
        assert!(tr.max_asymmetry.unwrap() <= 1e-10);
    }

    #[test]
    fn propagator_matches_fine_rk4() {
        let sys = build_harmonic_oscillator(1.3, 0.4, 0.9, 0.6, 0.8).unwrap();
        let ric = Riccati::new(&sys, &vacuum_noise(1)).unwrap();
        let v0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.7]);
        let prop = RiccatiPropagator::new(&ric, 0.05).unwrap();
        let mut exact = v0.clone();
        let mut fine = v0;
        for _ in 0..10 {
            exact = prop.step(&exact).unwrap();
            for _ in 0..500 {
                fine = ric.rk4(&fine, 1e-4);
            }
        }
        assert!(max_abs(&(exact - fine)) < 1e-10);
    }

    #[test]
    fn nan_input_is_reported_with_step() {
        let sys = build_harmonic_oscillator(1.0, 0.0, 0.3, 1.0, 0.0).unwrap();
        let opts = SimulationOptions::new(0.01, hqw_input_direction(1));
        let mut u = vec![0.0; 10];
        u[6] = f64::NAN;
        match simulate_measured(&sys, &u, &opts, &mut ChaCha8Rng::seed_from_u64(0)) {
            Err(Error::NanAtStep(6)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
