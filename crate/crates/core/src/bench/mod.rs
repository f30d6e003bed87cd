//! Parity, NARMA10 and delay benchmarks, the echo-state baseline and the
//! Monte Carlo experiment pipeline.

mod esn;
mod experiment;
mod tasks;

pub use esn::{esn_reservoir, ridge_fit, ridge_predict, ridge_select, sample_esn, spectral_radius, EsnConfig, EsnWeights};
pub use experiment::{
    median, model_features, results_csv, results_json, run_experiment, thread_cap, ExperimentConfig, ModelSpec,
    ReadoutMode, RepResult, RepStatus, RunResult, TestPrediction, CSV_HEADER,
};
pub use tasks::{generate_input, make_continuous_input, rmse, target, TaskKind, TaskSpec, ZohInput};
