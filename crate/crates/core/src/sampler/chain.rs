use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{AdaptWindow, Adaptation, Adapter};
use super::mala::{mala_step, ChainState};
use super::Target;
use crate::error::{Error, Result};
use crate::likelihood::{grid_label, Posterior, StateLayout, UnconstrainedState};
use crate::model::{Dataset, ModelConfig, ModelParameters, PopulationTrajectory, PriorConfig};

const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_burnin: usize,
    pub n_iterations: usize,
    /// Store every `thin`-th post-burn-in iteration.
    pub thin: usize,
    pub seed: u64,
    pub initial_step: f64,
    pub target_acceptance: f64,
    /// Iterations between adaptation updates during burn-in.
    pub adapt_window: usize,
    pub adaptation: Adaptation,
    pub chains: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_burnin: 20_000,
            n_iterations: 100_000,
            thin: 20,
            seed: 1,
            initial_step: 0.01,
            target_acceptance: 0.574,
            adapt_window: 25,
            adaptation: Adaptation::StepAndCovariance,
            chains: 1,
        }
    }
}

impl SamplerConfig {
    pub fn check(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.n_iterations < self.thin {
            return Err(Error::InvalidArgument("n_iterations must be at least thin".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidArgument("initial_step must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("target_acceptance must lie in (0, 1)".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidArgument("adapt_window must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::InvalidArgument("chains must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stored draws and telemetry of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    /// Names of the unconstrained coordinates.
    pub names: Vec<String>,
    /// Thinned post-burn-in draws in unconstrained coordinates.
    pub draws: Vec<Vec<f64>>,
    /// 1-based post-burn-in iteration of each stored draw.
    pub draw_iterations: Vec<usize>,
    /// Mean of `accepted`.
    pub acceptance_rate: f64,
    pub burnin_acceptance_rate: f64,
    /// Accept flag of every post-burn-in iteration.
    pub accepted: Vec<bool>,
    /// Step size in force at every iteration, burn-in first.
    pub step_size_trace: Vec<f64>,
    /// Log-posterior after every iteration, burn-in first.
    pub log_posterior_trace: Vec<f64>,
    pub seed: u64,
    pub chain: u64,
}

impl ChainOutput {
    /// Log-posterior of each stored draw.
    pub fn draw_log_posterior(&self, n_burnin: usize) -> Vec<f64> {
        self.draw_iterations
            .iter()
            .map(|&i| self.log_posterior_trace[n_burnin + i - 1])
            .collect()
    }

    /// Values of one coordinate across stored draws.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

/// Runs burn-in with adaptation, then the frozen kernel.
pub fn run_sampler<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    init: Vec<f64>,
    names: Vec<String>,
    rng: &mut R,
    chain: u64,
) -> Result<ChainOutput> {
    config.check()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::InvalidArgument(format!("initial state has {} coordinates, target has {d}", init.len())));
    }
    let mut state = ChainState::new(target, init)?;
    let mut adapter = Adapter::new(
        d,
        config.initial_step,
        config.target_acceptance,
        config.adaptation,
        config.n_burnin,
    );
    let mut step = adapter.step_size();
    let mut precond = adapter.preconditioner().clone();

    let total = config.n_burnin + config.n_iterations;
    let mut step_size_trace = Vec::with_capacity(total);
    let mut log_posterior_trace = Vec::with_capacity(total);

    let keep_states = config.adaptation == Adaptation::StepAndCovariance;
    let mut win_states: Vec<Vec<f64>> = Vec::with_capacity(config.adapt_window);
    let mut win_flags: Vec<bool> = Vec::with_capacity(config.adapt_window);
    let mut burnin_accepts = 0usize;
    for _ in 0..config.n_burnin {
        step_size_trace.push(step);
        let out = mala_step(target, &state, step, &precond, rng);
        state = out.state;
        burnin_accepts += usize::from(out.accepted);
        log_posterior_trace.push(state.log_density);
        win_flags.push(out.accepted);
        if keep_states {
            win_states.push(state.position.clone());
        }
        if win_flags.len() == config.adapt_window {
            let (h, m) = adapter.adapt(&AdaptWindow { states: &win_states, accepted: &win_flags });
            step = h;
            if let Some(m) = m {
                precond = m;
            }
            win_states.clear();
            win_flags.clear();
        }
    }
    if !win_flags.is_empty() {
        let (h, m) = adapter.adapt(&AdaptWindow { states: &win_states, accepted: &win_flags });
        step = h;
        if let Some(m) = m {
            precond = m;
        }
    }

    let n_draws = config.n_iterations / config.thin;
    let mut draws = Vec::with_capacity(n_draws);
    let mut draw_iterations = Vec::with_capacity(n_draws);
    let mut accepted = Vec::with_capacity(config.n_iterations);
    for it in 1..=config.n_iterations {
        step_size_trace.push(step);
        let out = mala_step(target, &state, step, &precond, rng);
        state = out.state;
        accepted.push(out.accepted);
        log_posterior_trace.push(state.log_density);
        if it % config.thin == 0 {
            draws.push(state.position.clone());
            draw_iterations.push(it);
        }
    }
    let acceptance_rate = accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64;
    let burnin_acceptance_rate = if config.n_burnin > 0 {
        burnin_accepts as f64 / config.n_burnin as f64
    } else {
        f64::NAN
    };
    Ok(ChainOutput {
        names,
        draws,
        draw_iterations,
        acceptance_rate,
        burnin_acceptance_rate,
        accepted,
        step_size_trace,
        log_posterior_trace,
        seed: config.seed,
        chain,
    })
}

/// Starting point derived from the data: abundances from index counts scaled by
/// the prior mean countability and effort, held above the harvest.
pub fn default_initial_state(data: &Dataset, priors: &PriorConfig, config: ModelConfig) -> UnconstrainedState {
    let a0 = priors.mu_abar.abs().max(f64::MIN_POSITIVE);
    let t = data.years();
    let mut nf = Vec::with_capacity(2 * t);
    let mut nm = Vec::with_capacity(2 * t);
    for rec in data.records() {
        for (count, h, out) in [
            (rec.count_female, rec.harvest_female, &mut nf),
            (rec.count_male, rec.harvest_male, &mut nm),
        ] {
            let pre = (count.max(1) as f64 / (a0 * rec.effort)).max(1.05 * h + 1.0);
            out.push(pre);
            out.push(pre - h);
        }
    }
    let params = ModelParameters {
        r: priors.mu_r,
        k: if config.density_dependence { 0.01 } else { 0.0 },
        tau: 0.5,
        omega: 0.5,
        nu: 1.0,
        a_bar: a0,
        a_t: vec![a0; t],
    };
    let traj = PopulationTrajectory { n_female: nf, n_male: nm };
    UnconstrainedState::encode(StateLayout::new(t, config), &traj, &params)
        .expect("data-derived initial state is in the domain")
}

fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

fn find_start(post: &Posterior, start: &UnconstrainedState, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; start.values.len()];
    let mut x = start.values.clone();
    for attempt in 0..INIT_ATTEMPTS {
        let lp = post.value_and_gradient(&x, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(x);
        }
        if attempt + 1 == INIT_ATTEMPTS {
            break;
        }
        x = start
            .values
            .iter()
            .map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
    }
    let state = UnconstrainedState { layout: start.layout, values: x };
    let (traj, params) = state.decode();
    let dump = serde_json::json!({
        "trajectory": traj,
        "parameters": params,
        "breakdown": post.breakdown(&state.values),
    })
    .to_string();
    Err(Error::Initialization { attempts: INIT_ATTEMPTS, dump })
}

fn run_one(
    post: &Posterior,
    config: &SamplerConfig,
    init: Option<&UnconstrainedState>,
    chain: u64,
) -> Result<ChainOutput> {
    let mut rng = chain_rng(config.seed, chain);
    let default;
    let start = match init {
        Some(s) => s,
        None => {
            default = default_initial_state(post.data(), post.priors(), post.layout().config());
            &default
        }
    };
    if start.layout != post.layout() {
        return Err(Error::InvalidArgument("initial state layout does not match the model".into()));
    }
    let x0 = find_start(post, start, &mut rng)?;
    run_sampler(post, config, x0, post.layout().names(), &mut rng, chain)
}

/// Fits the model with a single chain (chain index 0).
pub fn run_chain(
    data: &Dataset,
    priors: &PriorConfig,
    config: &SamplerConfig,
    model: ModelConfig,
    init: Option<&UnconstrainedState>,
) -> Result<ChainOutput> {
    config.check()?;
    let post = Posterior::new(data.clone(), priors.clone(), model)?;
    run_one(&post, config, init, 0)
}

/// Runs `config.chains` independent chains in parallel. Chain `c` draws from
/// stream `c` of the seeded generator, so chain 0 equals [`run_chain`].
pub fn run_chains(
    data: &Dataset,
    priors: &PriorConfig,
    config: &SamplerConfig,
    model: ModelConfig,
    init: Option<&UnconstrainedState>,
) -> Result<Vec<ChainOutput>> {
    config.check()?;
    let post = Posterior::new(data.clone(), priors.clone(), model)?;
    (0..config.chains as u64)
        .into_par_iter()
        .map(|c| run_one(&post, config, init, c))
        .collect()
}

/// Draws on the natural scale with derived standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedDraws {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DecodedDraws {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Names of the natural-scale columns produced by [`decode_draws`].
pub fn decoded_names(years: usize) -> Vec<String> {
    let mut names = Vec::new();
    for sex in ["nf", "nm"] {
        for g in 0..2 * years {
            names.push(format!("{sex}[{}]", grid_label(g)));
        }
    }
    for i in 0..years {
        names.push(format!("a[{}]", i + 1));
    }
    for n in ["a_bar", "tau", "omega", "nu", "r", "k", "sigma_f", "sigma_m", "sigma_a"] {
        names.push(n.into());
    }
    names
}

/// Maps unconstrained draws to abundances, countabilities and parameters.
pub fn decode_draws(chain: &ChainOutput, layout: StateLayout) -> DecodedDraws {
    let rows = chain
        .draws
        .iter()
        .map(|x| {
            let (traj, p) = UnconstrainedState { layout, values: x.clone() }.decode();
            let s = p.variances().expect("decoded parameters are in the domain");
            let mut row = traj.n_female;
            row.extend(traj.n_male);
            row.extend(p.a_t.iter().copied());
            row.extend([p.a_bar, p.tau, p.omega, p.nu, p.r, p.k, s.sigma_f, s.sigma_m, s.sigma_a]);
            row
        })
        .collect();
    DecodedDraws { names: decoded_names(layout.years()), rows }
}
