//! Reservoir families: concatenated harmonic oscillators (HqW), Laplacian
//! oscillator networks (LqW) and embedded Padé delay lines (PadeqW).

mod hqw;
mod lqw;
mod pade;

pub use hqw::{
    build_harmonic_oscillator, concatenate, hqw_channel_outputs, hqw_channel_system,
    hqw_feedthrough, hqw_impulse_response, hqw_input_direction, sample_channel, sample_hqw_params,
    HqwConfig, Oscillator, OscillatorParams,
};
pub use lqw::{build_lqw, LqwConfig};
pub use pade::{
    embed_classical_siso, pade_block, pade_coefficients, pade_delay_realization, stabilizing_gain,
    controllability_rank, ClassicalSISO, PadeConfig, PADE_INPUT, PADE_OUTPUT,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::qss::{check_physical_realizability, is_completely_passive, QuadratureSystem, Realizability};

/// Declarative reservoir description, tagged by `kind` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReservoirConfig {
    Hqw(HqwConfig),
    Lqw(LqwConfig),
    Padeqw(PadeConfig),
}

impl ReservoirConfig {
    pub fn label(&self) -> String {
        match self {
            ReservoirConfig::Hqw(c) => format!("HqW({})", c.n_c),
            ReservoirConfig::Lqw(c) => format!("LqW({})", c.n),
            ReservoirConfig::Padeqw(c) => format!("PadeqW({})", c.blocks),
        }
    }

    /// Field direction the scalar input drives.
    pub fn input_direction(&self) -> DVector<f64> {
        match self {
            ReservoirConfig::Hqw(c) => hqw_input_direction(c.n_c),
            ReservoirConfig::Lqw(_) => DVector::from_vec(vec![1.0, 0.0]),
            ReservoirConfig::Padeqw(_) => DVector::from_fn(4, |i, _| if i == PADE_INPUT { 1.0 } else { 0.0 }),
        }
    }

    /// Measured output column that carries the feature.
    pub fn output_column(&self) -> usize {
        match self {
            ReservoirConfig::Padeqw(_) => PADE_OUTPUT,
            _ => 0,
        }
    }

    /// Builds every quantum system this config describes (all channels,
    /// replicas or blocks) with the given seed.
    pub fn build_systems(&self, seed: u64) -> Result<Vec<QuadratureSystem>> {
        match self {
            ReservoirConfig::Hqw(c) => {
                let mut c = c.clone();
                c.seed = seed;
                sample_hqw_params(&c)?.iter().map(hqw_channel_system).collect()
            }
            ReservoirConfig::Lqw(c) => {
                let replicas = if c.internal_means { 1 } else { c.d };
                (0..replicas)
                    .map(|r| build_lqw(c, &mut crate::rng::stream(seed, "lqw", &[r as u64])))
                    .collect()
            }
            ReservoirConfig::Padeqw(c) => (1..=c.blocks).map(|k| pade_block(c, k)).collect(),
        }
    }
}

/// Realizability and passivity report for one constructed system.
#[derive(Clone, Debug, Serialize)]
pub struct SystemReport {
    pub index: usize,
    pub n: usize,
    pub s: usize,
    pub residuals: Realizability,
    pub passive: Option<bool>,
}

pub fn check_systems(systems: &[QuadratureSystem]) -> Vec<SystemReport> {
    systems
        .iter()
        .enumerate()
        .map(|(index, sys)| SystemReport {
            index,
            n: sys.n,
            s: sys.s,
            residuals: check_physical_realizability(sys),
            passive: sys.to_hamiltonian_spec().ok().map(|s| is_completely_passive(&s)),
        })
        .collect()
}
