use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Target;
use crate::error::{Error, Result};

/// Proposal covariance `M`, stored through its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    Identity(usize),
    Diagonal(Vec<f64>),
    /// Row-major lower-triangular Cholesky factor of `M`.
    Dense { dim: usize, chol: Vec<f64> },
}

impl Preconditioner {
    pub fn identity(dim: usize) -> Self {
        Preconditioner::Identity(dim)
    }

    /// Diagonal preconditioner from a vector of variances.
    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("diagonal preconditioner needs positive variances".into()));
        }
        Ok(Preconditioner::Diagonal(variances))
    }

    /// Dense preconditioner; fails if `cov` is not symmetric positive definite.
    pub fn dense(cov: &DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if cov.ncols() != dim || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance must be a finite square matrix".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
        let l = chol.l();
        let mut flat = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                flat[i * dim + j] = l[(i, j)];
            }
        }
        Ok(Preconditioner::Dense { dim, chol: flat })
    }

    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Identity(d) => *d,
            Preconditioner::Diagonal(v) => v.len(),
            Preconditioner::Dense { dim, .. } => *dim,
        }
    }

    /// `out = L x`.
    pub fn sqrt_apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Preconditioner::Identity(_) => out.copy_from_slice(x),
            Preconditioner::Diagonal(v) => {
                for i in 0..v.len() {
                    out[i] = v[i].sqrt() * x[i];
                }
            }
            Preconditioner::Dense { dim, chol } => {
                for i in 0..*dim {
                    let row = &chol[i * dim..i * dim + i + 1];
                    out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// `out = M x = L L^T x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Preconditioner::Identity(_) => out.copy_from_slice(x),
            Preconditioner::Diagonal(v) => {
                for i in 0..v.len() {
                    out[i] = v[i] * x[i];
                }
            }
            Preconditioner::Dense { dim, chol } => {
                let d = *dim;
                let mut tmp = vec![0.0; d];
                // tmp = L^T x
                for j in 0..d {
                    let xj = x[j];
                    for i in 0..=j {
                        tmp[i] += chol[j * d + i] * xj;
                    }
                }
                self.sqrt_apply(&tmp, out);
            }
        }
    }

    /// Solves `L out = z`.
    pub fn whiten(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Preconditioner::Identity(_) => out.copy_from_slice(z),
            Preconditioner::Diagonal(v) => {
                for i in 0..v.len() {
                    out[i] = z[i] / v[i].sqrt();
                }
            }
            Preconditioner::Dense { dim, chol } => {
                let d = *dim;
                for i in 0..d {
                    let row = &chol[i * d..i * d + i];
                    let s: f64 = row.iter().zip(&out[..i]).map(|(a, b)| a * b).sum();
                    out[i] = (z[i] - s) / chol[i * d + i];
                }
            }
        }
    }
}

/// Position of a chain together with its cached log-density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
}

impl ChainState {
    pub fn new<T: Target + ?Sized>(target: &T, position: Vec<f64>) -> Result<Self> {
        let mut gradient = vec![0.0; position.len()];
        let log_density = target.log_density_and_gradient(&position, &mut gradient);
        if !log_density.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { position, log_density, gradient })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: ChainState,
    pub accepted: bool,
    /// Metropolis-Hastings acceptance probability of the proposal.
    pub accept_prob: f64,
}

/// One Metropolis-adjusted Langevin transition.
pub fn mala_step<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &ChainState,
    step_size: f64,
    precond: &Preconditioner,
    rng: &mut R,
) -> StepOutcome {
    let d = current.position.len();
    let h2 = step_size * step_size;

    let xi: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut noise = vec![0.0; d];
    precond.sqrt_apply(&xi, &mut noise);
    let mut drift = vec![0.0; d];
    precond.apply(&current.gradient, &mut drift);

    let proposal: Vec<f64> = (0..d)
        .map(|i| current.position[i] + 0.5 * h2 * drift[i] + step_size * noise[i])
        .collect();
    let mut prop_grad = vec![0.0; d];
    let prop_lp = target.log_density_and_gradient(&proposal, &mut prop_grad);

    let u: f64 = rng.random();
    if !prop_lp.is_finite() || prop_grad.iter().any(|g| !g.is_finite()) {
        return StepOutcome { state: current.clone(), accepted: false, accept_prob: 0.0 };
    }

    // forward: (x' - x - h^2/2 M g) = h L xi, so its whitened norm is |xi|^2
    let log_q_forward = -0.5 * xi.iter().map(|v| v * v).sum::<f64>();
    let mut back_drift = vec![0.0; d];
    precond.apply(&prop_grad, &mut back_drift);
    let diff: Vec<f64> = (0..d)
        .map(|i| current.position[i] - proposal[i] - 0.5 * h2 * back_drift[i])
        .collect();
    let mut white = vec![0.0; d];
    precond.whiten(&diff, &mut white);
    let log_q_backward = -0.5 * white.iter().map(|v| v * v).sum::<f64>() / h2;

    let log_ratio = prop_lp - current.log_density + log_q_backward - log_q_forward;
    let accept_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
    if u < accept_prob {
        StepOutcome {
            state: ChainState { position: proposal, log_density: prop_lp, gradient: prop_grad },
            accepted: true,
            accept_prob,
        }
    } else {
        StepOutcome { state: current.clone(), accepted: false, accept_prob }
    }
}
