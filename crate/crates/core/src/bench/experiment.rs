use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::esn::{esn_reservoir, ridge_predict, ridge_select, sample_esn, EsnConfig};
use super::tasks::{generate_input, make_continuous_input, rmse, target, TaskSpec};
use crate::error::{Error, Result};
use crate::gp::{heuristic_init, optimize_hyperparams, OptimizeOptions};
use crate::kalman::{simulate_measured, NoiseMode, SimulationOptions};
use crate::kernels::{normalize_features, ReadoutKernel};
use crate::reservoirs::{
    hqw_channel_outputs, hqw_channel_system, hqw_input_direction, pade_block, sample_hqw_params, HqwConfig,
    LqwConfig, PadeConfig, ReservoirConfig, PADE_INPUT, PADE_OUTPUT,
};
use crate::rng::{derive_seed, stream};

/// Reservoir (or baseline) whose features feed the readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Hqw(HqwConfig),
    Lqw(LqwConfig),
    Padeqw(PadeConfig),
    Esn(EsnConfig),
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Hqw(c) => format!("HqW({})", c.n_c),
            ModelSpec::Lqw(c) => format!("LqW({})", c.n),
            ModelSpec::Padeqw(c) => format!("PadeqW({})", c.blocks),
            ModelSpec::Esn(c) => format!("ESN({})", c.units),
        }
    }

    /// Oscillators per network, where that notion applies.
    pub fn n_c(&self) -> Option<usize> {
        match self {
            ModelSpec::Hqw(c) => Some(c.n_c),
            ModelSpec::Lqw(c) => Some(c.n),
            _ => None,
        }
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        match self {
            ModelSpec::Hqw(c) => c.d,
            ModelSpec::Lqw(c) => {
                if c.internal_means {
                    2 * c.n
                } else {
                    c.d
                }
            }
            ModelSpec::Padeqw(c) => c.blocks,
            ModelSpec::Esn(c) => c.units,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    #[default]
    Se,
    /// Degree-3 polynomial kernel.
    Poly3,
}

impl ReadoutMode {
    fn template(&self) -> ReadoutKernel {
        match self {
            ReadoutMode::Se => ReadoutKernel::Se { sigma_f: 1.0, lengthscale: 1.0 },
            ReadoutMode::Poly3 => ReadoutKernel::Poly { sigma_f: 1.0, offset: 1.0, degree: 3 },
        }
    }
}

fn default_reps() -> usize {
    10
}
fn default_dt() -> f64 {
    0.01
}
fn default_gain() -> f64 {
    500.0
}
fn default_restarts() -> usize {
    5
}
fn default_max_iter() -> usize {
    50
}

/// One cell of a results table: a model on a task over Monte Carlo repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub task: TaskSpec,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub readout: ReadoutMode,
    #[serde(default)]
    pub washout: usize,
    #[serde(default = "default_restarts")]
    pub gp_restarts: usize,
    #[serde(default = "default_max_iter")]
    pub gp_max_iter: usize,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, task: TaskSpec) -> Self {
        Self {
            model,
            task,
            reps: default_reps(),
            seed: 0,
            dt: default_dt(),
            gain: default_gain(),
            noise: NoiseMode::Off,
            readout: ReadoutMode::Se,
            washout: 0,
            gp_restarts: default_restarts(),
            gp_max_iter: default_max_iter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.reps == 0 || self.gp_restarts == 0 {
            return Err(Error::InvalidParameter("reps and gp_restarts must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !(self.gain > 0.0) {
            return Err(Error::InvalidParameter("dt and gain must be positive".into()));
        }
        if self.washout >= self.task.split {
            return Err(Error::InvalidParameter("washout must be shorter than the train split".into()));
        }
        match &self.model {
            ModelSpec::Hqw(c) => c.validate(),
            ModelSpec::Lqw(c) => c.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepStatus {
    Ok,
    /// First attempt failed; the retry with a derived sub-seed succeeded.
    Retried,
    /// Hyperparameter search never took a step on either attempt.
    Unconverged,
    /// Both attempts failed; excluded from the median.
    Failed,
}

/// Test-split prediction of one repetition.
#[derive(Clone, Debug, PartialEq)]
pub struct TestPrediction {
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// Latent predictive variance (zero for ridge readouts).
    pub variance: Vec<f64>,
    pub noise_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepResult {
    pub rep: usize,
    pub rmse: Option<f64>,
    pub status: RepStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip)]
    pub prediction: Option<TestPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub model: String,
    pub task: String,
    pub tau: usize,
    pub n_c: Option<usize>,
    pub d: usize,
    pub seed: u64,
    pub reps: Vec<RepResult>,
    pub median: Option<f64>,
    pub config: ExperimentConfig,
}

impl RunResult {
    pub fn rmse_values(&self) -> Vec<f64> {
        self.reps.iter().filter(|r| r.status != RepStatus::Failed).filter_map(|r| r.rmse).collect()
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Rows are time steps (`k` ↦ features after input `u_k`), columns features.
pub fn model_features(
    model: &ModelSpec,
    u: &[f64],
    cfg: &ExperimentConfig,
    reservoir_seed: u64,
    noise_seed: u64,
) -> Result<DMatrix<f64>> {
    let scaled = make_continuous_input(u, cfg.dt, cfg.gain)?.values;
    let steps = u.len();
    let simulate = |sys: &crate::qss::QuadratureSystem, dir: DVector<f64>, j: usize| {
        let mut opts = SimulationOptions::new(cfg.dt, dir);
        opts.noise = cfg.noise;
        opts.record_means = false;
        simulate_measured(sys, &scaled, &opts, &mut stream(noise_seed, "measurement", &[j as u64]))
    };
    match model {
        ModelSpec::Hqw(c) => {
            let c = HqwConfig { seed: reservoir_seed, ..c.clone() };
            let params = sample_hqw_params(&c)?;
            let mut raw = DMatrix::zeros(c.d, steps);
            for (j, p) in params.iter().enumerate() {
                let y = match cfg.noise {
                    NoiseMode::Off => hqw_channel_outputs(p, &scaled, cfg.dt),
                    NoiseMode::On => simulate(&hqw_channel_system(p)?, hqw_input_direction(c.n_c), j)?.summed_outputs(),
                };
                raw.row_mut(j).copy_from_slice(&y);
            }
            Ok(normalize_features(&raw, c.n_c, None)?.transpose())
        }
        ModelSpec::Lqw(c) => {
            let systems = ReservoirConfig::Lqw(c.clone()).build_systems(reservoir_seed)?;
            let dir = DVector::from_vec(vec![1.0, 0.0]);
            if c.internal_means {
                let mut opts = SimulationOptions::new(cfg.dt, dir);
                opts.noise = cfg.noise;
                let tr = simulate_measured(&systems[0], &scaled, &opts, &mut stream(noise_seed, "measurement", &[0]))?;
                return Ok(tr.means);
            }
            let mut out = DMatrix::zeros(steps, systems.len());
            for (j, sys) in systems.iter().enumerate() {
                out.set_column(j, &simulate(sys, dir.clone(), j)?.outputs.column(0));
            }
            Ok(out)
        }
        ModelSpec::Padeqw(c) => {
            let mut out = DMatrix::zeros(steps, c.blocks);
            for k in 1..=c.blocks {
                let sys = pade_block(c, k)?;
                let dir = DVector::from_fn(2 * sys.s, |i, _| if i == PADE_INPUT { 1.0 } else { 0.0 });
                out.set_column(k - 1, &simulate(&sys, dir, k)?.outputs.column(PADE_OUTPUT));
            }
            Ok(out)
        }
        ModelSpec::Esn(c) => {
            let weights = sample_esn(c, &mut stream(reservoir_seed, "esn", &[]))?;
            Ok(esn_reservoir(c, &weights, u))
        }
    }
}

struct Attempt {
    rmse: f64,
    converged: bool,
    prediction: TestPrediction,
}

fn run_attempt(cfg: &ExperimentConfig, rep: usize, attempt: u64, reservoir_seed: u64) -> Result<Attempt> {
    let task = &cfg.task;
    let u = generate_input(task, &mut stream(cfg.seed, "input", &[rep as u64, task.input_family()]));
    let y = target(task, &u);
    let feats = model_features(
        &cfg.model,
        &u,
        cfg,
        reservoir_seed,
        derive_seed(cfg.seed, "noise", &[rep as u64, attempt]),
    )?;
    if !feats.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("reservoir features".into()));
    }
    let start = task.first_defined().max(cfg.washout);
    let train: Vec<usize> = (start..task.split).collect();
    let test: Vec<usize> = (task.split..task.length).collect();
    let pick = |rows: &[usize]| DMatrix::from_fn(rows.len(), feats.ncols(), |i, j| feats[(rows[i], j)]);
    let (x_train, x_test) = (pick(&train), pick(&test));
    let y_train: Vec<f64> = train.iter().map(|&t| y[t].expect("defined after first_defined")).collect();
    let truth: Vec<f64> = test.iter().map(|&t| y[t].expect("defined on the test split")).collect();

    if let ModelSpec::Esn(c) = &cfg.model {
        let (_, w) = ridge_select(&x_train, &y_train, &c.ridge_grid)?;
        let mean = ridge_predict(&x_test, &w);
        return Ok(Attempt {
            rmse: rmse(&mean, &truth)?,
            converged: true,
            prediction: TestPrediction { variance: vec![0.0; truth.len()], truth, mean, noise_var: 0.0 },
        });
    }

    // one global feature scale and a centred target: invertible reparametrizations
    let scale = (x_train.iter().map(|x| x * x).sum::<f64>() / x_train.nrows() as f64).sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let (x_train, x_test) = (x_train / scale, x_test / scale);
    let y_mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
    let centred: Vec<f64> = y_train.iter().map(|v| v - y_mean).collect();

    let (init, init_noise) = heuristic_init(&x_train, &centred, &cfg.readout.template());
    let opts = OptimizeOptions {
        restarts: cfg.gp_restarts,
        max_iter: cfg.gp_max_iter,
        seed: derive_seed(cfg.seed, "gp", &[rep as u64, attempt]),
    };
    let model = optimize_hyperparams(&x_train, &centred, init, init_noise, &opts)?;
    let (mean, variance) = model.predict(&x_test)?;
    let mean: Vec<f64> = mean.iter().map(|m| m + y_mean).collect();
    Ok(Attempt {
        rmse: rmse(&mean, &truth)?,
        converged: model.converged,
        prediction: TestPrediction { truth, mean, variance, noise_var: model.noise_var },
    })
}

fn run_rep(cfg: &ExperimentConfig, rep: usize) -> RepResult {
    let first = run_attempt(cfg, rep, 0, derive_seed(cfg.seed, "reservoir", &[rep as u64]));
    if let Ok(a) = &first {
        if a.converged {
            return RepResult { rep, rmse: Some(a.rmse), status: RepStatus::Ok, message: None, prediction: Some(a.prediction.clone()) };
        }
    }
    let retry = run_attempt(cfg, rep, 1, derive_seed(cfg.seed, "reservoir-retry", &[rep as u64]));
    match (first, retry) {
        (_, Ok(a)) if a.converged => RepResult {
            rep,
            rmse: Some(a.rmse),
            status: RepStatus::Retried,
            message: None,
            prediction: Some(a.prediction),
        },
        (_, Ok(a)) | (Ok(a), Err(_)) => RepResult {
            rep,
            rmse: Some(a.rmse),
            status: RepStatus::Unconverged,
            message: Some("hyperparameter search made no progress".into()),
            prediction: Some(a.prediction),
        },
        (Err(e1), Err(e2)) => RepResult {
            rep,
            rmse: None,
            status: RepStatus::Failed,
            message: Some(format!("{e1}; retry: {e2}")),
            prediction: None,
        },
    }
}

/// Worker count from `QWIENER_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("QWIENER_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every repetition (in parallel) and aggregates the median RMSE.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let work = || (0..cfg.reps).into_par_iter().map(|r| run_rep(cfg, r)).collect::<Vec<_>>();
    let reps = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut result = RunResult {
        model: cfg.model.label(),
        task: cfg.task.label(),
        tau: cfg.task.tau,
        n_c: cfg.model.n_c(),
        d: cfg.model.d(),
        seed: cfg.seed,
        reps,
        median: None,
        config: cfg.clone(),
    };
    result.median = median(&result.rmse_values());
    Ok(result)
}

pub const CSV_HEADER: &str = "model,task,tau,n_c,d,rep,rmse";

/// Per-repetition rows; failed repetitions have an empty RMSE field.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        for rep in &r.reps {
            let n_c = r.n_c.map(|n| n.to_string()).unwrap_or_default();
            let rmse = rep.rmse.map(|v| format!("{v:.16e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.model, r.task, r.tau, n_c, r.d, rep.rep, rmse);
        }
    }
    out
}

/// Median-RMSE table (tasks × models) plus the full per-run records.
pub fn results_json(results: &[RunResult]) -> serde_json::Value {
    let mut tasks: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for r in results {
        if !tasks.contains(&r.task) {
            tasks.push(r.task.clone());
        }
        let key = model_key(r);
        if !models.contains(&key) {
            models.push(key);
        }
    }
    let table: serde_json::Map<String, serde_json::Value> = tasks
        .iter()
        .map(|t| {
            let row: serde_json::Map<String, serde_json::Value> = results
                .iter()
                .filter(|r| &r.task == t)
                .map(|r| (model_key(r), serde_json::json!(r.median)))
                .collect();
            (t.clone(), serde_json::Value::Object(row))
        })
        .collect();
    serde_json::json!({
        "tasks": tasks,
        "models": models,
        "median_rmse": table,
        "runs": results,
    })
}

fn model_key(r: &RunResult) -> String {
    match r.config.readout {
        ReadoutMode::Se => r.model.clone(),
        ReadoutMode::Poly3 => format!("{} poly3", r.model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_hqw() -> ModelSpec {
        ModelSpec::Hqw(HqwConfig { n_c: 4, d: 8, ..Default::default() })
    }

    fn small_task(task: TaskSpec) -> TaskSpec {
        TaskSpec { length: 160, split: 120, ..task }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn zero_target_is_learned() {
        for model in [small_hqw(), ModelSpec::Esn(EsnConfig { units: 20, ..Default::default() })] {
            let mut cfg = ExperimentConfig::new(model, small_task(TaskSpec::new(super::super::TaskKind::Zero, 0)));
            cfg.reps = 2;
            cfg.gp_restarts = 2;
            let r = run_experiment(&cfg).unwrap();
            assert!(r.median.unwrap() < 1e-3, "{:?}", r.median);
        }
    }

    #[test]
    fn deterministic_csv() {
        let mut cfg = ExperimentConfig::new(small_hqw(), small_task(TaskSpec::delay(2)));
        cfg.reps = 2;
        cfg.gp_restarts = 2;
        let a = results_csv(&[run_experiment(&cfg).unwrap()]);
        let b = results_csv(&[run_experiment(&cfg).unwrap()]);
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
        assert_eq!(a.lines().count(), 3);
    }

    #[test]
    fn features_have_expected_shape() {
        let cfg = ExperimentConfig::new(small_hqw(), small_task(TaskSpec::delay(1)));
        let u = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        for model in [
            small_hqw(),
            ModelSpec::Lqw(LqwConfig { n: 3, d: 2, ..Default::default() }),
            ModelSpec::Lqw(LqwConfig { n: 3, internal_means: true, ..Default::default() }),
            ModelSpec::Padeqw(PadeConfig { blocks: 2, ..Default::default() }),
        ] {
            let f = model_features(&model, &u, &cfg, 1, 2).unwrap();
            assert_eq!(f.shape(), (5, model.d()), "{}", model.label());
        }
    }

    #[test]
    fn json_has_table_layout() {
        let mut cfg = ExperimentConfig::new(small_hqw(), small_task(TaskSpec::parity(1)));
        cfg.reps = 1;
        cfg.gp_restarts = 1;
        let v = results_json(&[run_experiment(&cfg).unwrap()]);
        assert!(v["median_rmse"]["parity(tau=1)"]["HqW(4)"].is_number());
    }

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::new(small_hqw(), TaskSpec::narma10());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let minimal: ExperimentConfig =
            serde_json::from_str(r#"{"model":{"kind":"padeqw"},"task":{"kind":"delay","tau":4}}"#).unwrap();
        assert_eq!(minimal.reps, 10);
        assert_eq!(minimal.gain, 500.0);
    }
}
