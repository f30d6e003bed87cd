//! Gaussian-process readout: exact posterior, marginal likelihood and
//! hyperparameter search on log-transformed parameters.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Par, Side};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::ReadoutKernel;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

fn to_faer(x: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

/// Inner products and squared distances between the rows of two matrices.
struct PairGeometry {
    dot: Mat<f64>,
    sq: Mat<f64>,
}

impl PairGeometry {
    fn new(a: &Mat<f64>, b: &Mat<f64>) -> Self {
        let dot = a * b.transpose();
        let na: Vec<f64> = (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)].powi(2)).sum()).collect();
        let nb: Vec<f64> = (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[(i, j)].powi(2)).sum()).collect();
        let sq = Mat::from_fn(a.nrows(), b.nrows(), |i, j| (na[i] + nb[j] - 2.0 * dot[(i, j)]).max(0.0));
        Self { dot, sq }
    }

    fn gram(&self, kernel: &ReadoutKernel) -> Mat<f64> {
        Mat::from_fn(self.dot.nrows(), self.dot.ncols(), |i, j| {
            kernel.from_products(self.dot[(i, j)], self.sq[(i, j)])
        })
    }
}

struct Factored {
    llt: faer::linalg::solvers::Llt<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

fn factor(mut k: Mat<f64>, targets: &[f64]) -> Result<Factored> {
    let m = k.nrows();
    let mut jitter = 0.0;
    let llt = match k.llt(Side::Lower) {
        Ok(l) => l,
        Err(_) => {
            jitter = 1e-8 * (0..m).map(|i| k[(i, i)]).sum::<f64>() / m as f64;
            for i in 0..m {
                k[(i, i)] += jitter;
            }
            match k.llt(Side::Lower) {
                Ok(l) => l,
                Err(_) => {
                    let pivot = k
                        .self_adjoint_eigenvalues(Side::Lower)
                        .ok()
                        .and_then(|e| e.into_iter().reduce(f64::min))
                        .unwrap_or(f64::NAN);
                    return Err(Error::Factorization { pivot });
                }
            }
        }
    };
    let rhs = Mat::from_fn(m, 1, |i, _| targets[i]);
    let sol = llt.solve(&rhs);
    let alpha = (0..m).map(|i| sol[(i, 0)]).collect();
    Ok(Factored { llt, alpha, jitter })
}

/// Fitted Gaussian-process readout.
#[derive(Clone, Debug)]
pub struct GpReadout {
    pub kernel: ReadoutKernel,
    pub noise_var: f64,
    features: Mat<f64>,
    targets: Vec<f64>,
    llt: faer::linalg::solvers::Llt<f64>,
    alpha: Vec<f64>,
    /// Diagonal jitter added after a failed first factorization (0 if none).
    pub jitter: f64,
    /// False when hyperparameter search ended without a successful step.
    pub converged: bool,
}

/// Serializable summary of a fitted model.
#[derive(Clone, Debug, Serialize)]
pub struct GpSummary {
    pub kernel: ReadoutKernel,
    pub noise_var: f64,
    pub log_marginal_likelihood: f64,
    pub m: usize,
    pub d: usize,
    pub jitter: f64,
    pub converged: bool,
}

fn check_data(features: &DMatrix<f64>, targets: &[f64], noise_var: f64) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::InvalidParameter("need at least one training point".into()));
    }
    if features.nrows() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance must be > 0, got {noise_var}")));
    }
    if !features.iter().chain(targets).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    Ok(())
}

/// Exact posterior for fixed hyperparameters. `features` is `m × d`.
pub fn fit(features: &DMatrix<f64>, targets: &[f64], kernel: ReadoutKernel, noise_var: f64) -> Result<GpReadout> {
    check_data(features, targets, noise_var)?;
    kernel.validate()?;
    let x = to_faer(features);
    let geom = PairGeometry::new(&x, &x);
    fit_with_geometry(x, &geom, targets, kernel, noise_var)
}

fn fit_with_geometry(
    x: Mat<f64>,
    geom: &PairGeometry,
    targets: &[f64],
    kernel: ReadoutKernel,
    noise_var: f64,
) -> Result<GpReadout> {
    let mut k = geom.gram(&kernel);
    for i in 0..k.nrows() {
        k[(i, i)] += noise_var;
    }
    let f = factor(k, targets)?;
    Ok(GpReadout {
        kernel,
        noise_var,
        features: x,
        targets: targets.to_vec(),
        llt: f.llt,
        alpha: f.alpha,
        jitter: f.jitter,
        converged: true,
    })
}

impl GpReadout {
    pub fn m(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Posterior mean and latent variance at each query row.
    pub fn predict(&self, query: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if query.ncols() != self.d() {
            return Err(Error::Dimension(format!(
                "query has {} features, model has {}",
                query.ncols(),
                self.d()
            )));
        }
        let q = to_faer(query);
        let kq = PairGeometry::new(&q, &self.features).gram(&self.kernel);
        let mean = (0..q.nrows())
            .map(|i| (0..self.m()).map(|j| kq[(i, j)] * self.alpha[j]).sum())
            .collect();
        let mut v = kq.transpose().to_owned();
        solve_lower_triangular_in_place(self.llt.L(), v.as_mut(), Par::Seq);
        let var = (0..q.nrows())
            .map(|i| {
                let row: Vec<f64> = (0..q.ncols()).map(|j| q[(i, j)]).collect();
                let prior = self.kernel.eval(&row, &row).expect("matching lengths");
                let explained: f64 = (0..self.m()).map(|j| v[(j, i)].powi(2)).sum();
                (prior - explained).max(0.0)
            })
            .collect();
        Ok((mean, var))
    }

    /// Mean ± 1.96 √(variance + σ²).
    pub fn credible_interval(&self, query: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        let (mean, var) = self.predict(query)?;
        Ok(mean
            .iter()
            .zip(&var)
            .map(|(m, v)| {
                let h = 1.96 * (v + self.noise_var).sqrt();
                (m - h, m + h)
            })
            .collect())
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let m = self.m();
        let fit: f64 = self.targets.iter().zip(&self.alpha).map(|(o, a)| o * a).sum();
        let l = self.llt.L();
        let logdet: f64 = (0..m).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        -0.5 * fit - 0.5 * logdet - 0.5 * m as f64 * LOG_2PI
    }

    pub fn summary(&self) -> GpSummary {
        GpSummary {
            kernel: self.kernel,
            noise_var: self.noise_var,
            log_marginal_likelihood: self.log_marginal_likelihood(),
            m: self.m(),
            d: self.d(),
            jitter: self.jitter,
            converged: self.converged,
        }
    }
}

/// Log-parameters `[log σ_f, log ℓ | log c, log σ]` with a mask of free entries.
#[derive(Clone, Copy, Debug, PartialEq)]
struct LogParams {
    theta: [f64; 3],
    free: [bool; 3],
}

fn encode(kernel: &ReadoutKernel, noise_var: f64) -> LogParams {
    match *kernel {
        ReadoutKernel::Se { sigma_f, lengthscale } => LogParams {
            theta: [sigma_f.ln(), lengthscale.ln(), 0.5 * noise_var.ln()],
            free: [true; 3],
        },
        ReadoutKernel::Poly { sigma_f, offset, .. } => LogParams {
            theta: [sigma_f.ln(), if offset > 0.0 { offset.ln() } else { 0.0 }, 0.5 * noise_var.ln()],
            free: [true, offset > 0.0, true],
        },
    }
}

fn decode(template: &ReadoutKernel, p: &LogParams) -> (ReadoutKernel, f64) {
    let sigma_f = p.theta[0].exp();
    let kernel = match *template {
        ReadoutKernel::Se { .. } => ReadoutKernel::Se { sigma_f, lengthscale: p.theta[1].exp() },
        ReadoutKernel::Poly { offset, degree, .. } => ReadoutKernel::Poly {
            sigma_f,
            offset: if p.free[1] { p.theta[1].exp() } else { offset },
            degree,
        },
    };
    (kernel, (2.0 * p.theta[2]).exp())
}

/// Log marginal likelihood and its gradient in log-parameter space.
/// Log marginal likelihood at one point, with what its gradient needs.
struct Evaluation {
    lml: f64,
    kernel: ReadoutKernel,
    noise_var: f64,
    kf: Mat<f64>,
    factored: Factored,
}

fn evaluate(geom: &PairGeometry, targets: &[f64], template: &ReadoutKernel, p: &LogParams) -> Result<Evaluation> {
    let (kernel, noise_var) = decode(template, p);
    let m = targets.len();
    let kf = geom.gram(&kernel);
    let mut k = kf.clone();
    for i in 0..m {
        k[(i, i)] += noise_var;
    }
    let f = factor(k, targets)?;
    let fit: f64 = targets.iter().zip(&f.alpha).map(|(o, a)| o * a).sum();
    let l = f.llt.L();
    let logdet: f64 = 2.0 * (0..m).map(|i| l[(i, i)].ln()).sum::<f64>();
    let lml = -0.5 * fit - 0.5 * logdet - 0.5 * m as f64 * LOG_2PI;
    if !lml.is_finite() {
        return Err(Error::NonFinite("log marginal likelihood".into()));
    }
    Ok(Evaluation { lml, kernel, noise_var, kf, factored: f })
}

/// Gradient in log-parameter space: `∂LML/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)`.
fn gradient(e: &Evaluation, geom: &PairGeometry, p: &LogParams) -> [f64; 3] {
    let m = e.kf.nrows();
    let kinv = e.factored.llt.inverse();
    let a = &e.factored.alpha;
    let kf = &e.kf;
    let mut grad = [0.0; 3];
    for j in 0..m {
        for i in 0..m {
            let w = a[i] * a[j] - kinv[(i, j)];
            grad[0] += w * 2.0 * kf[(i, j)];
            let dk1 = match e.kernel {
                ReadoutKernel::Se { lengthscale, .. } => kf[(i, j)] * geom.sq[(i, j)] / (lengthscale * lengthscale),
                ReadoutKernel::Poly { sigma_f, offset, degree } => {
                    sigma_f * sigma_f * degree as f64 * (geom.dot[(i, j)] + offset).powi(degree as i32 - 1) * offset
                }
            };
            grad[1] += w * dk1;
        }
        grad[2] += (a[j] * a[j] - kinv[(j, j)]) * 2.0 * e.noise_var;
    }
    for (g, free) in grad.iter_mut().zip(p.free) {
        *g = if free { 0.5 * *g } else { 0.0 };
    }
    grad
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln σ_f, ln ℓ or ln c, ln σ)`. A fixed zero polynomial offset has a zero
/// entry.
pub fn lml_with_gradient(
    features: &DMatrix<f64>,
    targets: &[f64],
    kernel: ReadoutKernel,
    noise_var: f64,
) -> Result<(f64, [f64; 3])> {
    check_data(features, targets, noise_var)?;
    kernel.validate()?;
    let x = to_faer(features);
    let geom = PairGeometry::new(&x, &x);
    let p = encode(&kernel, noise_var);
    let e = evaluate(&geom, targets, &kernel, &p)?;
    Ok((e.lml, gradient(&e, &geom, &p)))
}

#[cfg(test)]
fn objective(geom: &PairGeometry, targets: &[f64], template: &ReadoutKernel, p: &LogParams) -> Result<(f64, [f64; 3])> {
    let e = evaluate(geom, targets, template, p)?;
    Ok((e.lml, gradient(&e, geom, p)))
}

/// Settings for marginal-likelihood maximization.
#[derive(Clone, Copy, Debug)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iter: 50, seed: 0 }
    }
}

/// Box in log space, relative to the data scales: `σ_f ∈ [1e-4, 1e2]·sd`,
/// `ℓ ∈ [1e-2, 1e2]·median distance`, `c ∈ [e^{−12}, e^{12}]`,
/// `σ ∈ [1e-5, 10]·sd`. Without the lower length bound an SE kernel can
/// collapse into a second white-noise term.
#[derive(Clone, Copy, Debug)]
struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn new(template: &ReadoutKernel, geom: &PairGeometry, targets: &[f64]) -> Self {
        let sd = target_std(targets).ln();
        let (lo1, hi1) = match template {
            ReadoutKernel::Se { .. } => {
                let med = median_distance(geom).ln();
                (med + 1e-2f64.ln(), med + 1e2f64.ln())
            }
            ReadoutKernel::Poly { .. } => (-12.0, 12.0),
        };
        Self {
            lo: [sd + 1e-4f64.ln(), lo1, sd + 1e-5f64.ln()],
            hi: [sd + 1e2f64.ln(), hi1, sd + 10f64.ln()],
        }
    }

    fn clamp(&self, p: &mut LogParams) {
        for i in 0..3 {
            if p.free[i] {
                p.theta[i] = p.theta[i].clamp(self.lo[i], self.hi[i]);
            }
        }
    }
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton ascent (BFGS inverse-Hessian update) with Armijo
/// backtracking. Returns the final point, its value and whether any step
/// succeeded.
fn ascend(
    geom: &PairGeometry,
    targets: &[f64],
    template: &ReadoutKernel,
    start: LogParams,
    bounds: &Bounds,
    max_iter: usize,
) -> Option<(LogParams, f64, bool)> {
    let mut p = start;
    bounds.clamp(&mut p);
    let start_eval = evaluate(geom, targets, template, &p).ok()?;
    let (mut f, mut g) = (start_eval.lml, gradient(&start_eval, geom, &p));
    let mut h = [[0.0; 3]; 3];
    let reset = |h: &mut [[f64; 3]; 3]| {
        *h = [[0.0; 3]; 3];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
    };
    reset(&mut h);
    let mut moved = false;
    for _ in 0..max_iter {
        // parameters pinned at a bound with the gradient pointing outward drop out
        let active: [bool; 3] = std::array::from_fn(|i| {
            p.free[i] && !(p.theta[i] >= bounds.hi[i] && g[i] > 0.0) && !(p.theta[i] <= bounds.lo[i] && g[i] < 0.0)
        });
        let pg: [f64; 3] = std::array::from_fn(|i| if active[i] { g[i] } else { 0.0 });
        if pg.iter().all(|x| x.abs() < 1e-6 * (1.0 + f.abs())) {
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                reset(&mut h);
            }
            let mut dir = [0.0; 3];
            for i in 0..3 {
                dir[i] = if active[i] { dot3(&h[i], &pg) } else { 0.0 };
            }
            let slope = dot3(&pg, &dir);
            if !(slope > 0.0) {
                continue;
            }
            // keep the first trial step inside a unit box in log space
            let longest = dir.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let mut eta = if longest > 1.0 { 1.0 / longest } else { 1.0 };
            for _ in 0..25 {
                let mut trial = p;
                trial.theta = std::array::from_fn(|i| p.theta[i] + eta * dir[i]);
                bounds.clamp(&mut trial);
                let taken: [f64; 3] = std::array::from_fn(|i| trial.theta[i] - p.theta[i]);
                if let Ok(e) = evaluate(geom, targets, template, &trial) {
                    if e.lml >= f + 1e-4 * dot3(&pg, &taken) && e.lml > f {
                        accepted = Some((trial, e.lml, gradient(&e, geom, &trial)));
                        break;
                    }
                }
                eta *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((np, nf, ng)) = accepted else { break };
        // BFGS on the negated objective: s = Δθ, y = −Δg
        let s: [f64; 3] = std::array::from_fn(|i| np.theta[i] - p.theta[i]);
        let y: [f64; 3] = std::array::from_fn(|i| if active[i] { g[i] - ng[i] } else { 0.0 });
        let sy = dot3(&s, &y);
        if sy > 1e-12 {
            if !moved {
                // scale the identity to the observed curvature before the first update
                let scale = sy / dot3(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            let rho = 1.0 / sy;
            let hy: [f64; 3] = std::array::from_fn(|i| dot3(&h[i], &y));
            let yhy = dot3(&y, &hy);
            let mut nh = h;
            for i in 0..3 {
                for j in 0..3 {
                    nh[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            h = nh;
        }
        let gain = nf - f;
        p = np;
        f = nf;
        g = ng;
        moved = true;
        if gain.abs() < 1e-8 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((p, f, moved))
}

fn median_distance(geom: &PairGeometry) -> f64 {
    let m = geom.sq.nrows();
    let stride = (m / 200).max(1);
    let mut d: Vec<f64> = Vec::new();
    for i in (0..m).step_by(stride) {
        for j in (i + 1..m).step_by(stride) {
            d.push(geom.sq[(i, j)].sqrt());
        }
    }
    d.retain(|x| *x > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    d[d.len() / 2]
}

fn target_std(targets: &[f64]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}

/// Data-driven starting point: `σ_f` = target std, `ℓ` = median pairwise
/// distance, `σ` = 0.1·target std.
pub fn heuristic_init(features: &DMatrix<f64>, targets: &[f64], template: &ReadoutKernel) -> (ReadoutKernel, f64) {
    let x = to_faer(features);
    let geom = PairGeometry::new(&x, &x);
    heuristic_from_geometry(&geom, targets, template)
}

fn heuristic_from_geometry(geom: &PairGeometry, targets: &[f64], template: &ReadoutKernel) -> (ReadoutKernel, f64) {
    let sd = target_std(targets);
    let kernel = match *template {
        ReadoutKernel::Se { .. } => ReadoutKernel::Se { sigma_f: sd, lengthscale: median_distance(geom) },
        ReadoutKernel::Poly { offset, degree, .. } => ReadoutKernel::Poly { sigma_f: sd, offset, degree },
    };
    (kernel, (0.1 * sd).powi(2))
}

/// Maximizes the log marginal likelihood over `(σ_f, ℓ or c, σ)`. The first
/// restart starts from `init`; the others from log-uniform draws around it.
/// A zero polynomial offset stays fixed.
pub fn optimize_hyperparams(
    features: &DMatrix<f64>,
    targets: &[f64],
    init: ReadoutKernel,
    init_noise_var: f64,
    opts: &OptimizeOptions,
) -> Result<GpReadout> {
    check_data(features, targets, init_noise_var)?;
    init.validate()?;
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be >= 1".into()));
    }
    let x = to_faer(features);
    let geom = PairGeometry::new(&x, &x);
    let base = encode(&init, init_noise_var);
    let bounds = Bounds::new(&init, &geom, targets);
    let mut rng = crate::rng::stream(opts.seed, "gp-restarts", &[]);
    let starts: Vec<LogParams> = (0..opts.restarts)
        .map(|r| {
            let mut p = base;
            if r > 0 {
                let ln10 = std::f64::consts::LN_10;
                p.theta[0] += ln10 * rng.random_range(-1.0..1.0);
                p.theta[1] += ln10 * rng.random_range(-1.0..1.0);
                p.theta[2] += ln10 * rng.random_range(-1.5..0.5);
            }
            p
        })
        .collect();
    let results: Vec<Option<(LogParams, f64, bool)>> = starts
        .par_iter()
        .map(|s| ascend(&geom, targets, &init, *s, &bounds, opts.max_iter))
        .collect();
    let best = results
        .iter()
        .flatten()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .copied();
    let Some((p, _, moved)) = best else {
        let mut model = fit_with_geometry(x, &geom, targets, init, init_noise_var)?;
        model.converged = false;
        return Ok(model);
    };
    let (kernel, noise_var) = decode(&init, &p);
    let mut model = fit_with_geometry(x, &geom, targets, kernel, noise_var)?;
    model.converged = moved || results.iter().flatten().any(|r| r.2);
    Ok(model)
}
