use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Parity,
    Narma10,
    Delay,
    /// Diagnostic task with an all-zero target.
    Zero,
}

/// Benchmark task: target recursion, lag, sequence length and train split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default)]
    pub tau: usize,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_split")]
    pub split: usize,
}

fn default_length() -> usize {
    1000
}

fn default_split() -> usize {
    800
}

impl TaskSpec {
    pub fn new(kind: TaskKind, tau: usize) -> Self {
        Self {
            kind,
            tau,
            length: default_length(),
            split: default_split(),
        }
    }

    pub fn parity(tau: usize) -> Self {
        Self::new(TaskKind::Parity, tau)
    }

    pub fn narma10() -> Self {
        Self::new(TaskKind::Narma10, 0)
    }

    pub fn delay(tau: usize) -> Self {
        Self::new(TaskKind::Delay, tau)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length <= self.split {
            return Err(Error::InvalidParameter(format!(
                "length {} must exceed the train split {}",
                self.length, self.split
            )));
        }
        if self.first_defined() >= self.split {
            return Err(Error::InvalidParameter(format!(
                "lag {} leaves no training targets before split {}",
                self.tau, self.split
            )));
        }
        Ok(())
    }

    /// First index with a defined target.
    pub fn first_defined(&self) -> usize {
        match self.kind {
            TaskKind::Parity | TaskKind::Delay => self.tau,
            TaskKind::Narma10 => 10,
            TaskKind::Zero => 0,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            TaskKind::Parity => format!("parity(tau={})", self.tau),
            TaskKind::Narma10 => "NARMA10".into(),
            TaskKind::Delay => format!("delay(tau={})", self.tau),
            TaskKind::Zero => "zero".into(),
        }
    }

    /// Name of the input distribution, shared by tasks that draw the same input.
    pub fn input_family(&self) -> u64 {
        match self.kind {
            TaskKind::Parity | TaskKind::Delay | TaskKind::Zero => 0,
            TaskKind::Narma10 => 1,
        }
    }
}

/// Bernoulli(½) bits for parity/delay, `U[0, 0.5]` for NARMA10.
pub fn generate_input<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> Vec<f64> {
    match task.input_family() {
        0 => (0..task.length).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
        _ => (0..task.length).map(|_| 0.5 * rng.random::<f64>()).collect(),
    }
}

/// Target sequence; `None` where the recursion is undefined.
pub fn target(task: &TaskSpec, u: &[f64]) -> Vec<Option<f64>> {
    let tau = task.tau;
    match task.kind {
        TaskKind::Parity => (0..u.len())
            .map(|t| {
                (t >= tau).then(|| {
                    let ones = (0..=tau).filter(|&l| u[t - l] > 0.5).count();
                    (ones % 2) as f64
                })
            })
            .collect(),
        TaskKind::Delay => (0..u.len()).map(|t| (t >= tau).then(|| u[t - tau])).collect(),
        TaskKind::Narma10 => {
            let mut y = vec![0.0; u.len()];
            for t in 10..u.len() {
                let window: f64 = y[t - 10..t].iter().sum();
                y[t] = 0.3 * y[t - 1] + 0.05 * y[t - 1] * window + 1.5 * u[t - 10] * u[t - 1] + 0.1;
            }
            y.into_iter().enumerate().map(|(t, v)| (t >= 10).then_some(v)).collect()
        }
        TaskKind::Zero => vec![Some(0.0); u.len()],
    }
}

/// Zero-order-hold input `u(t) = gain·u_k` on `[kΔ, (k+1)Δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZohInput {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl ZohInput {
    pub fn at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.values.get((t / self.dt).floor() as usize).copied().unwrap_or(0.0)
    }

    /// `∫₀^{mΔ} u(t) dt`.
    pub fn integral(&self) -> f64 {
        self.dt * self.values.iter().sum::<f64>()
    }
}

pub fn make_continuous_input(u: &[f64], dt: f64, gain: f64) -> Result<ZohInput> {
    if !(gain > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("need gain > 0 and dt > 0, got {gain}, {dt}")));
    }
    Ok(ZohInput {
        dt,
        values: u.iter().map(|x| gain * x).collect(),
    })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parity_examples() {
        let t = TaskSpec::parity(1);
        let y = target(&t, &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(y, vec![None, Some(1.0), Some(1.0), Some(0.0)]);
    }

    #[test]
    fn delay_examples() {
        let y = target(&TaskSpec::delay(2), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(y, vec![None, None, Some(3.0), Some(4.0)]);
    }

    #[test]
    fn narma_fixed_point() {
        let y = target(&TaskSpec { length: 3000, ..TaskSpec::narma10() }, &vec![0.0; 3000]);
        let want = (0.7 - (0.49f64 - 0.2).sqrt()) / 1.0;
        assert_relative_eq!(want, 0.161483, epsilon = 1e-6);
        assert_relative_eq!(y[2999].unwrap(), want, epsilon = 1e-10);
        assert!(y[9].is_none() && y[10].is_some());
    }

    #[test]
    fn inputs() {
        let t = TaskSpec { length: 10_000, ..TaskSpec::parity(2) };
        let u = generate_input(&t, &mut ChaCha8Rng::seed_from_u64(1));
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        assert!((0.48..=0.52).contains(&mean));
        assert!(u.iter().all(|&x| x == 0.0 || x == 1.0));
        let n = generate_input(&TaskSpec::narma10(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(n.iter().all(|&x| (0.0..=0.5).contains(&x)));
        let again = generate_input(&t, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(u, again);
    }

    #[test]
    fn zoh_examples() {
        let z = make_continuous_input(&[1.0, 0.0], 0.01, 500.0).unwrap();
        assert_eq!(z.at(0.005), 500.0);
        assert_eq!(z.at(0.015), 0.0);
        assert_relative_eq!(z.integral(), 5.0);
        let p = make_continuous_input(&[0.3, 0.7], 0.01, 1.0).unwrap();
        assert_eq!(p.values, vec![0.3, 0.7]);
        assert!(make_continuous_input(&[1.0], 0.01, 0.0).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 3.53553, epsilon = 1e-5);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn validation() {
        assert!(TaskSpec { split: 1000, ..TaskSpec::delay(2) }.validate().is_err());
        assert!(TaskSpec::delay(900).validate().is_err());
        assert!(TaskSpec::narma10().validate().is_ok());
    }
}
