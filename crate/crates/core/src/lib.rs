//! Bayesian state-space inference for harvested populations observed through
//! effort-scaled index counts.
//!
//! Female and male abundances evolve on a half-year grid (breeding, then
//! hunting). Each year an index count with known effort is observed, and in
//! some years an unbiased survey estimate. The link between counts and
//! abundance, the *countability* `a_t`, may vary between years.
//!
//! * [`model`]: domain types, parameter constraints and dataset validation.
//! * [`likelihood`]: the log-posterior and its gradient.
//! * [`sampler`]: adaptive MALA, multi-chain runs and diagnostics.
//! * [`simulator`]: synthetic data and exact effort checks.
//! * [`management`]: next-year prediction and harvest strategies.
//! * [`io`]: dataset and draws files.
//!
//! ```
//! use countability::model::derive_variances;
//!
//! let v = derive_variances(0.4, 0.5, 1.0).unwrap();
//! assert!((v.sigma_f + v.sigma_a - 0.4).abs() < 1e-15);
//! ```

pub mod density;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod management;
pub mod model;
pub mod sampler;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result, Violation};
pub use likelihood::{log_posterior, LogPosteriorBreakdown, Posterior, StateLayout, UnconstrainedState};
pub use model::{
    validate_dataset, Dataset, ModelConfig, ModelParameters, PopulationTrajectory, PriorConfig,
    RawDataset, Variant, YearRecord,
};
pub use sampler::{run_chain, run_chains, ChainOutput, SamplerConfig};
