//! Adaptive Metropolis-adjusted Langevin sampling.
//!
//! The kernel proposes
//!
//! ```text
//! x' = x + (h^2 / 2) M grad log p(x) + h L xi,    L L^T = M,  xi ~ N(0, I)
//! ```
//!
//! and accepts with the Metropolis-Hastings ratio using the Langevin proposal
//! density in both directions. During burn-in the step size `h` is tuned
//! toward a target acceptance rate and `M` is re-estimated from the chain's
//! own history. After burn-in the kernel is frozen.

mod adapt;
mod chain;
mod diagnostics;
mod kendall;
mod mala;

pub use adapt::{AdaptWindow, Adaptation, Adapter};
pub use chain::{
    decode_draws, decoded_names, default_initial_state, run_chain, run_chains, run_sampler, ChainOutput,
    DecodedDraws, SamplerConfig,
};
pub use diagnostics::{
    diagnostics, effective_sample_size, potential_scale_reduction, split_potential_scale_reduction,
    summarize, write_trace_csv, ParameterSummary, Summary, SUMMARY_LEVELS,
};
pub use kendall::{cross_series_correlation, KendallTau};
pub use mala::{mala_step, ChainState, Preconditioner, StepOutcome};

/// A differentiable log-density on `R^d`.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` (possibly `-inf`) and writes `grad log p(x)` into `grad`
    /// when the value is finite.
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}
