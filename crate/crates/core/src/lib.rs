//! Quantum Wiener reservoirs.
//!
//! Linear quantum networks in quadrature form, their continuously measured
//! dynamics under the quantum Kalman filter, reservoir-induced kernels and a
//! Gaussian-process readout, plus the parity / NARMA10 / delay benchmark
//! pipeline.

#![allow(non_snake_case)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod gp;
pub mod io;
pub mod kalman;
pub mod kernels;
pub mod linalg;
pub mod plot;
pub mod qss;
pub mod reservoirs;
pub mod rng;
pub mod vonmises;

pub use error::{Error, Result};
