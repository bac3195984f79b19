use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mala::Preconditioner;

/// What is tuned during burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    StepOnly,
    #[default]
    StepAndCovariance,
}

/// Iterations since the previous call to [`Adapter::adapt`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptWindow<'a> {
    pub states: &'a [Vec<f64>],
    pub accepted: &'a [bool],
}

/// Fractions of burn-in at which the preconditioner is re-estimated from the
/// draws accumulated since the previous estimate. Accumulation starts at the
/// first entry; the stretch after the last entry tunes the step size only.
const COVARIANCE_SCHEDULE: [f64; 4] = [0.10, 0.25, 0.45, 0.75];

/// Burn-in tuning of the step size (stochastic approximation on `ln h`) and
/// of the proposal covariance (regularized empirical covariance).
#[derive(Debug, Clone)]
pub struct Adapter {
    target: f64,
    log_step: f64,
    round: u64,
    mode: Adaptation,
    dim: usize,
    schedule: Vec<usize>,
    seen: usize,
    shift: Option<Vec<f64>>,
    sum: Vec<f64>,
    sum_outer: Vec<f64>,
    count: usize,
    precond: Preconditioner,
}

impl Adapter {
    pub fn new(dim: usize, initial_step: f64, target: f64, mode: Adaptation, n_burnin: usize) -> Self {
        let schedule = COVARIANCE_SCHEDULE
            .iter()
            .map(|f| (f * n_burnin as f64).round() as usize)
            .collect();
        Self {
            target,
            log_step: initial_step.ln(),
            round: 0,
            mode,
            dim,
            schedule,
            seen: 0,
            shift: None,
            sum: vec![0.0; dim],
            sum_outer: vec![0.0; dim * dim],
            count: 0,
            precond: Preconditioner::identity(dim),
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.precond
    }

    /// Updates the kernel from one window of burn-in history.
    ///
    /// Returns the new step size and, when it changed, the new preconditioner.
    pub fn adapt(&mut self, window: &AdaptWindow<'_>) -> (f64, Option<Preconditioner>) {
        if !window.accepted.is_empty() {
            self.round += 1;
            let rate = window.accepted.iter().filter(|&&a| a).count() as f64 / window.accepted.len() as f64;
            let gain = (self.round as f64).powf(-0.6);
            self.log_step += gain * (rate - self.target);
        }

        let mut updated = None;
        if self.mode == Adaptation::StepAndCovariance {
            for x in window.states {
                self.seen += 1;
                if self.seen > self.schedule[0] {
                    self.accumulate(x);
                }
                if self.schedule[1..].contains(&self.seen) && self.count > 1 {
                    self.precond = self.estimate();
                    self.reset_accumulator();
                    // restart the step-size search for the new geometry
                    self.round = 0;
                    self.log_step = (0.7 * 1.65 * (self.dim as f64).powf(-1.0 / 6.0)).ln();
                    updated = Some(self.precond.clone());
                }
            }
        }
        (self.step_size(), updated)
    }

    fn accumulate(&mut self, x: &[f64]) {
        let shift = self.shift.get_or_insert_with(|| x.to_vec());
        let d = self.dim;
        let c: Vec<f64> = x.iter().zip(shift.iter()).map(|(a, b)| a - b).collect();
        for i in 0..d {
            self.sum[i] += c[i];
            let ci = c[i];
            let row = &mut self.sum_outer[i * d..i * d + i + 1];
            for (j, r) in row.iter_mut().enumerate() {
                *r += ci * c[j];
            }
        }
        self.count += 1;
    }

    fn reset_accumulator(&mut self) {
        self.shift = None;
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.sum_outer.iter_mut().for_each(|v| *v = 0.0);
        self.count = 0;
    }

    /// Empirical covariance plus a ridge of `1e-6` times the mean variance;
    /// falls back to the diagonal, then to the identity.
    fn estimate(&self) -> Preconditioner {
        let d = self.dim;
        let n = self.count as f64;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = (self.sum_outer[i * d + j] - self.sum[i] * self.sum[j] / n) / (n - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let mean_diag = (0..d).map(|i| cov[(i, i)]).sum::<f64>() / d as f64;
        if !(mean_diag > 0.0 && mean_diag.is_finite()) {
            return Preconditioner::identity(d);
        }
        let ridge = 1e-6 * mean_diag;
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        Preconditioner::dense(&cov)
            .or_else(|_| Preconditioner::diagonal((0..d).map(|i| cov[(i, i)].max(ridge)).collect()))
            .unwrap_or_else(|_| Preconditioner::identity(d))
    }
}
