#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use qwiener::bench::{
    generate_input, make_continuous_input, results_csv, results_json, run_experiment, ExperimentConfig, ModelSpec, ReadoutMode,
    RunResult, TaskKind, TaskSpec,
};
use qwiener::io::{kernel_csv, oscillators_csv, trajectory_binary, trajectory_csv, write_file};
use qwiener::kalman::{simulate_measured, NoiseMode, SimulationOptions};
use qwiener::kernels::KernelFunction;
use qwiener::plot::{emit_plot, Band, Series};
use qwiener::reservoirs::{check_systems, sample_hqw_params, HqwConfig, LqwConfig, PadeConfig, ReservoirConfig};
use qwiener::rng::stream;
use qwiener::Error;

const REALIZABILITY_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "qwiener", version, about = "Quantum Wiener reservoir experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Realizability and passivity report for a reservoir config.
    Check(CheckArgs),
    /// Simulate the measured output of one reservoir system.
    Simulate(SimulateArgs),
    /// Tabulate a kernel on a grid.
    Kernel(KernelArgs),
    /// Run benchmark experiments and write result tables.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; 0 when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Oscillators per channel (HqW) or per network (LqW).
    #[arg(long)]
    nc: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// csv or binary.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    common: Common,
    /// Kernel kind, e.g. tc, quantum-tc, quantum-tc-mean, se-time.
    #[arg(long, default_value = "quantum-tc")]
    kind: String,
    #[arg(long, default_value_t = 0.01)]
    am: f64,
    #[arg(long = "aM", default_value_t = 20.0)]
    a_max: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.0)]
    omega0: f64,
    /// start:stop:step
    #[arg(long, default_value = "0:10:0.01")]
    grid: String,
    /// Second argument held fixed while the first sweeps the grid.
    #[arg(long, default_value_t = 1.0)]
    tprime: f64,
    /// Comma-separated subset of csv, json, svg.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long, value_enum)]
    readout: Option<ReadoutArg>,
    /// Comma-separated subset of csv, json, svg.
    #[arg(long, default_value = "csv,json")]
    format: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Hqw,
    Lqw,
    Padeqw,
    Esn,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Parity,
    Narma10,
    Delay,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    Se,
    Poly3,
}

impl From<NoiseArg> for NoiseMode {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::On => NoiseMode::On,
            NoiseArg::Off => NoiseMode::Off,
        }
    }
}

/// Failure with the stage that produced it; config problems exit 1,
/// numerical ones exit 2.
struct Failure {
    stage: String,
    error: Error,
}

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, Failure>;
}

impl<T, E: Into<Error>> Stage<T> for Result<T, E> {
    fn stage(self, name: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage: name.to_string(), error: e.into() })
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { stage: "config".into(), error: Error::InvalidParameter(msg.into()) }
}

fn read_config(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).stage(&format!("config {}", path.display()))
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, Failure> {
    serde_json::from_str(text).stage(&format!("config {}", path.display()))
}

fn formats(spec: &str, allowed: &[&str]) -> Result<Vec<String>, Failure> {
    let list: Vec<String> = spec.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = list.iter().find(|f| !allowed.contains(&f.as_str())) {
        return Err(config_error(format!("--format: unknown format '{bad}' (allowed: {})", allowed.join(", "))));
    }
    Ok(list)
}

fn apply_model_args(base: Option<ReservoirConfig>, args: &ModelArgs) -> Result<ReservoirConfig, Failure> {
    let mut cfg = match (args.model, base) {
        (Some(ModelKind::Hqw), _) => ReservoirConfig::Hqw(HqwConfig::default()),
        (Some(ModelKind::Lqw), _) => ReservoirConfig::Lqw(LqwConfig::default()),
        (Some(ModelKind::Padeqw), _) => ReservoirConfig::Padeqw(PadeConfig::default()),
        (Some(ModelKind::Esn), _) => return Err(config_error("--model esn has no quantum systems to check or simulate")),
        (None, Some(c)) => c,
        (None, None) => ReservoirConfig::Hqw(HqwConfig::default()),
    };
    match &mut cfg {
        ReservoirConfig::Hqw(c) => {
            c.n_c = args.nc.unwrap_or(c.n_c);
            c.d = args.d.unwrap_or(c.d);
            c.kappa = args.kappa.unwrap_or(c.kappa);
        }
        ReservoirConfig::Lqw(c) => {
            c.n = args.nc.unwrap_or(c.n);
            c.d = args.d.unwrap_or(c.d);
        }
        ReservoirConfig::Padeqw(c) => c.blocks = args.d.unwrap_or(c.blocks),
    }
    Ok(cfg)
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let base = match &args.common.config {
        Some(p) => Some(parse_json::<ReservoirConfig>(&read_config(p)?, p)?),
        None => None,
    };
    let cfg = apply_model_args(base, &args.model)?;
    let seed = args.common.seed.unwrap_or(0);
    let systems = cfg.build_systems(seed).stage("build")?;
    let reports = check_systems(&systems);
    println!("{} seed={seed} systems={}", cfg.label(), reports.len());
    println!("index,n,s,drift,coupling,feedthrough,passive");
    let mut worst: f64 = 0.0;
    for r in &reports {
        let passive = r.passive.map(|p| p.to_string()).unwrap_or_else(|| "n/a".into());
        println!(
            "{},{},{},{:.3e},{:.3e},{:.3e},{passive}",
            r.index, r.n, r.s, r.residuals.drift, r.residuals.coupling, r.residuals.feedthrough
        );
        worst = worst.max(r.residuals.max());
    }
    println!("max residual {worst:.3e}");
    if !(worst < REALIZABILITY_TOL) {
        return Err(Failure {
            stage: "realizability".into(),
            error: Error::NonFinite(format!("max residual {worst:.3e} exceeds {REALIZABILITY_TOL:e}")),
        });
    }
    Ok(())
}

/// Scalar input sequence for `simulate`.
#[derive(Deserialize, Debug)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum InputSpec {
    Step {
        length: usize,
        #[serde(default = "one")]
        level: f64,
    },
    Bits {
        length: usize,
    },
    Values {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(default = "default_reservoir")]
    reservoir: ReservoirConfig,
    /// Which channel, replica or block to simulate.
    #[serde(default)]
    system: usize,
    #[serde(default = "default_input")]
    input: InputSpec,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "one")]
    gain: f64,
    #[serde(default)]
    noise: NoiseMode,
    #[serde(default)]
    seed: u64,
}

fn default_reservoir() -> ReservoirConfig {
    ReservoirConfig::Hqw(HqwConfig { n_c: 1, d: 1, ..Default::default() })
}

fn default_input() -> InputSpec {
    InputSpec::Step { length: 100, level: 1.0 }
}

fn default_dt() -> f64 {
    0.01
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = match &args.common.config {
        Some(p) => parse_json::<SimulateConfig>(&read_config(p)?, p)?,
        None => parse_json::<SimulateConfig>("{}", Path::new("<defaults>"))?,
    };
    cfg.reservoir = apply_model_args(Some(cfg.reservoir), &args.model)?;
    if let Some(n) = args.noise {
        cfg.noise = n.into();
    }
    let seed = args.common.seed.unwrap_or(cfg.seed);
    let fmt = formats(&args.format, &["csv", "binary"])?;
    let u = match cfg.input {
        InputSpec::Step { length, level } => vec![level; length],
        InputSpec::Bits { length } => generate_input(
            &TaskSpec { length, ..TaskSpec::parity(0) },
            &mut stream(seed, "simulate-input", &[]),
        ),
        InputSpec::Values { values } => values,
    };
    let zoh = make_continuous_input(&u, cfg.dt, cfg.gain).stage("config")?;
    let systems = cfg.reservoir.build_systems(seed).stage("build")?;
    let sys = systems
        .get(cfg.system)
        .ok_or_else(|| config_error(format!("system: index {} out of range (0..{})", cfg.system, systems.len())))?;
    let mut opts = SimulationOptions::new(cfg.dt, cfg.reservoir.input_direction());
    opts.noise = cfg.noise;
    let tr = simulate_measured(sys, &zoh.values, &opts, &mut stream(seed, "simulate", &[cfg.system as u64]))
        .stage("simulate")?;
    let out = &args.common.out;
    for f in &fmt {
        match f.as_str() {
            "csv" => write_file(&out.join("trajectory.csv"), trajectory_csv(&tr)).stage("write")?,
            _ => write_file(&out.join("trajectory.bin"), trajectory_binary(&tr)).stage("write")?,
        }
    }
    if let ReservoirConfig::Hqw(c) = &cfg.reservoir {
        let params = sample_hqw_params(&HqwConfig { seed, ..c.clone() }).stage("build")?;
        write_file(&out.join("oscillators.csv"), oscillators_csv(&params)).stage("write")?;
    }
    println!("{} system {} steps {} -> {}", cfg.reservoir.label(), cfg.system, tr.steps(), out.display());
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| config_error(format!("--grid: {e}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(config_error("--grid: expected start:stop:step"));
    };
    if !(step > 0.0) || stop < start {
        return Err(config_error("--grid: need step > 0 and stop >= start"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn kernel_from_flags(args: &KernelArgs) -> Result<KernelFunction, Failure> {
    let value = serde_json::json!({
        "kind": args.kind,
        "a_m": args.am,
        "a_M": args.a_max,
        "kappa": args.kappa,
        "lengthscale": args.lengthscale,
        "omega0": args.omega0,
        "sigma_f": 1.0,
        "offset": 1.0,
        "degree": 3,
        "base": {"kind": "quantum-tc", "a_m": args.am, "a_M": args.a_max, "kappa": args.kappa},
    });
    serde_json::from_value(value).map_err(|e| config_error(format!("--kind {}: {e}", args.kind)))
}

fn kernel(args: KernelArgs) -> Result<(), Failure> {
    let k = match &args.common.config {
        Some(p) => parse_json::<KernelFunction>(&read_config(p)?, p)?,
        None => kernel_from_flags(&args)?,
    };
    let grid = parse_grid(&args.grid)?;
    let fmt = formats(&args.format, &["csv", "json", "svg"])?;
    let tp = args.tprime;
    let mut rows = Vec::with_capacity(grid.len());
    if k.is_time_kernel() {
        for &t in &grid {
            rows.push((t, tp, k.eval_time(t, tp).stage("kernel")?));
        }
    } else if let Some(readout) = k.readout().filter(|_| matches!(k, KernelFunction::PolyReadout { .. } | KernelFunction::SeReadout { .. })) {
        for &x in &grid {
            rows.push((x, tp, readout.eval(&[x], &[tp]).stage("kernel")?));
        }
    } else {
        // deep kernels: unit-step input on the grid spacing
        let dt = if grid.len() > 1 { grid[1] - grid[0] } else { 0.01 };
        let horizon = grid.last().copied().unwrap_or(0.0).max(tp);
        let u = vec![1.0; (horizon / dt).round() as usize + 1];
        for &t in &grid {
            rows.push((t, tp, k.eval_deep(&u, t, tp, dt).stage("kernel")?));
        }
    }
    let out = &args.common.out;
    let stem = k.name();
    for f in &fmt {
        match f.as_str() {
            "csv" => write_file(&out.join(format!("{stem}.csv")), kernel_csv(&rows)).stage("write")?,
            "json" => {
                let v = serde_json::json!({
                    "kernel": k,
                    "t_prime": tp,
                    "t": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
                    "k": rows.iter().map(|r| r.2).collect::<Vec<_>>(),
                });
                write_file(&out.join(format!("{stem}.json")), serde_json::to_string_pretty(&v).stage("write")?)
                    .stage("write")?
            }
            _ => emit_plot(
                &out.join(format!("{stem}.svg")),
                &format!("{stem}, t' = {tp}"),
                &[Series::new(stem, rows.iter().map(|r| r.2).collect())],
                None,
            )
            .stage("write")?,
        }
    }
    println!("{stem}: {} rows -> {}", rows.len(), out.display());
    Ok(())
}

#[derive(Deserialize)]
struct BenchMatrix {
    experiments: Vec<ExperimentConfig>,
}

fn bench_configs(args: &BenchArgs) -> Result<Vec<ExperimentConfig>, Failure> {
    let mut configs = match &args.common.config {
        Some(p) => {
            let text = read_config(p)?;
            let value: serde_json::Value = parse_json(&text, p)?;
            if value.get("experiments").is_some() {
                parse_json::<BenchMatrix>(&text, p)?.experiments
            } else {
                vec![parse_json::<ExperimentConfig>(&text, p)?]
            }
        }
        None => {
            let task = args.task.ok_or_else(|| config_error("bench needs --task or --config"))?;
            vec![ExperimentConfig::new(ModelSpec::Hqw(HqwConfig::default()), task_spec(task, args.tau.unwrap_or(0)))]
        }
    };
    for cfg in &mut configs {
        if let Some(kind) = args.model.model {
            cfg.model = match kind {
                ModelKind::Hqw => ModelSpec::Hqw(HqwConfig::default()),
                ModelKind::Lqw => ModelSpec::Lqw(LqwConfig::default()),
                ModelKind::Padeqw => ModelSpec::Padeqw(PadeConfig::default()),
                ModelKind::Esn => ModelSpec::Esn(Default::default()),
            };
        }
        match &mut cfg.model {
            ModelSpec::Hqw(c) => {
                c.n_c = args.model.nc.unwrap_or(c.n_c);
                c.d = args.model.d.unwrap_or(c.d);
                c.kappa = args.model.kappa.unwrap_or(c.kappa);
            }
            ModelSpec::Lqw(c) => {
                c.n = args.model.nc.unwrap_or(c.n);
                c.d = args.model.d.unwrap_or(c.d);
            }
            ModelSpec::Padeqw(c) => c.blocks = args.model.d.unwrap_or(c.blocks),
            ModelSpec::Esn(c) => c.units = args.model.d.unwrap_or(c.units),
        }
        if args.common.config.is_some() {
            if let Some(task) = args.task {
                cfg.task = task_spec(task, args.tau.unwrap_or(cfg.task.tau));
            } else if let Some(tau) = args.tau {
                cfg.task.tau = tau;
            }
        }
        if let Some(seed) = args.common.seed {
            cfg.seed = seed;
        }
        if let Some(r) = args.reps {
            cfg.reps = r;
        }
        if let Some(n) = args.noise {
            cfg.noise = n.into();
        }
        if let Some(r) = args.readout {
            cfg.readout = match r {
                ReadoutArg::Se => ReadoutMode::Se,
                ReadoutArg::Poly3 => ReadoutMode::Poly3,
            };
        }
        cfg.validate().stage("config")?;
    }
    Ok(configs)
}

fn task_spec(task: TaskArg, tau: usize) -> TaskSpec {
    match task {
        TaskArg::Parity => TaskSpec::parity(tau),
        TaskArg::Narma10 => TaskSpec::narma10(),
        TaskArg::Delay => TaskSpec::delay(tau),
        TaskArg::Zero => TaskSpec::new(TaskKind::Zero, 0),
    }
}

fn plot_run(out: &Path, r: &RunResult, idx: usize) -> Result<(), Failure> {
    let Some(rep) = r.reps.iter().find(|rep| rep.prediction.is_some()) else {
        return Ok(());
    };
    let p = rep.prediction.as_ref().expect("checked above");
    let var: Vec<f64> = p.variance.iter().map(|v| v + p.noise_var).collect();
    let band = Band::from_moments("95% credible interval", &p.mean, &var, 1.96);
    let file = out.join(format!("plot_{idx:02}_{}.svg", sanitize(&format!("{}_{}", r.model, r.task))));
    emit_plot(
        &file,
        &format!("{} on {} (rep {})", r.model, r.task, rep.rep),
        &[Series::new("truth", p.truth.clone()), Series::new("prediction", p.mean.clone())],
        Some(&band),
    )
    .stage("write")
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let fmt = formats(&args.format, &["csv", "json", "svg"])?;
    let configs = bench_configs(&args)?;
    let mut results = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let r = run_experiment(cfg).stage(&format!("bench {} on {}", cfg.model.label(), cfg.task.label()))?;
        let failed = r.reps.iter().filter(|x| x.rmse.is_none()).count();
        match r.median {
            Some(m) => println!("{} {} median_rmse={m:.6e} failed_reps={failed}", r.model, r.task),
            None => println!("{} {} median_rmse=NA failed_reps={failed}", r.model, r.task),
        }
        results.push(r);
    }
    let out = &args.common.out;
    for f in &fmt {
        match f.as_str() {
            "csv" => write_file(&out.join("results.csv"), results_csv(&results)).stage("write")?,
            "json" => write_file(
                &out.join("results.json"),
                serde_json::to_string_pretty(&results_json(&results)).stage("write")?,
            )
            .stage("write")?,
            _ => {
                for (i, r) in results.iter().enumerate() {
                    plot_run(out, r, i)?;
                }
            }
        }
    }
    if results.iter().all(|r| r.median.is_none()) {
        return Err(Failure {
            stage: "bench".into(),
            error: Error::NonFinite("every repetition failed".into()),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Check(a) => check(a),
        Command::Simulate(a) => simulate(a),
        Command::Kernel(a) => kernel(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.stage, f.error);
            ExitCode::from(if f.error.is_config_error() { 1 } else { 2 })
        }
    }
}
