//! Forward simulation of populations and observations, and exact checks of
//! how Poisson index counts behave as effort grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    Dataset, ModelParameters, PopulationTrajectory, Survey, YearRecord, BREEDING_FRACTION,
    HARVEST_FRACTION,
};

/// Rejection budget for one truncated breeding draw.
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarvestPolicy {
    /// Known `[female, male]` harvest per year.
    Fixed(Vec<[f64; 2]>),
    /// Harvest a fixed fraction of the pre-hunt population.
    Proportional { female: f64, male: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub female: f64,
    pub male: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyPlan {
    /// 0-based year index.
    pub year_index: usize,
    pub sd_log: f64,
}

/// Everything needed to generate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_first_year")]
    pub first_year: i32,
    pub years: usize,
    /// `a_t` is ignored: countabilities are drawn from the hierarchy.
    pub params: ModelParameters,
    pub initial: InitialState,
    pub harvest: HarvestPolicy,
    pub effort: Vec<f64>,
    #[serde(default)]
    pub surveys: Vec<SurveyPlan>,
    pub seed: u64,
}

fn default_first_year() -> i32 {
    1
}

impl SimulationSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.years == 0 {
            return bad("simulation needs at least one year".into());
        }
        self.params.variances()?;
        if !(self.params.a_bar > 0.0) || !(self.params.k >= 0.0) || !self.params.r.is_finite() {
            return bad("a_bar must be positive, k nonnegative and r finite".into());
        }
        if self.effort.len() != self.years {
            return bad(format!("effort has {} entries for {} years", self.effort.len(), self.years));
        }
        if self.effort.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return bad("effort must be nonnegative".into());
        }
        if !(self.initial.female > 0.0 && self.initial.male > 0.0) {
            return bad("initial abundances must be positive".into());
        }
        match &self.harvest {
            HarvestPolicy::Fixed(h) => {
                if h.len() != self.years {
                    return bad(format!("harvest schedule has {} entries for {} years", h.len(), self.years));
                }
                if h.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return bad("harvests must be nonnegative".into());
                }
            }
            HarvestPolicy::Proportional { female, male } => {
                if !((0.0..1.0).contains(female) && (0.0..1.0).contains(male)) {
                    return bad("harvest fractions must lie in [0, 1)".into());
                }
            }
        }
        for s in &self.surveys {
            if s.year_index >= self.years || !(s.sd_log > 0.0) {
                return bad(format!("invalid survey plan {s:?}"));
            }
        }
        Ok(())
    }

    /// Harvest of year `i` given its pre-hunt abundance.
    pub fn harvest_at(&self, i: usize, pre: (f64, f64)) -> (f64, f64) {
        match &self.harvest {
            HarvestPolicy::Fixed(h) => (h[i][0], h[i][1]),
            HarvestPolicy::Proportional { female, male } => (female * pre.0, male * pre.1),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `exp(mu + sd z)` redrawn until it exceeds `floor`.
fn truncated_lognormal(mu: f64, sd: f64, floor: f64, rng: &mut ChaCha8Rng, year_index: usize) -> Result<f64> {
    if sd == 0.0 {
        let x = mu.exp();
        return if x > floor {
            Ok(x)
        } else {
            Err(Error::InfeasibleHarvest { year_index, harvest: floor })
        };
    }
    for _ in 0..MAX_REJECTIONS {
        let x = (mu + sd * normal(rng)).exp();
        if x > floor {
            return Ok(x);
        }
    }
    Err(Error::InfeasibleHarvest { year_index, harvest: floor })
}

/// Draws the latent trajectory from the first-year abundance onward.
///
/// Breeding draws are redrawn until they exceed that year's harvest, so the
/// simulated process is the truncated one the likelihood describes.
pub fn simulate_trajectory(spec: &SimulationSpec) -> Result<PopulationTrajectory> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = &spec.params;
    let s = p.variances()?;
    let (bf, bm) = (BREEDING_FRACTION.sqrt() * s.sigma_f, BREEDING_FRACTION.sqrt() * s.sigma_m);
    let (hf, hm) = (HARVEST_FRACTION.sqrt() * s.sigma_f, HARVEST_FRACTION.sqrt() * s.sigma_m);

    let mut nf = Vec::with_capacity(2 * spec.years);
    let mut nm = Vec::with_capacity(2 * spec.years);
    let mut pre = (spec.initial.female, spec.initial.male);
    for i in 0..spec.years {
        let h = spec.harvest_at(i, pre);
        if pre.0 <= h.0 || pre.1 <= h.1 {
            return Err(Error::InfeasibleHarvest { year_index: i, harvest: h.0.max(h.1) });
        }
        nf.push(pre.0);
        nm.push(pre.1);
        let post = (
            ((pre.0 - h.0).ln() + hf * normal(&mut rng)).exp(),
            ((pre.1 - h.1).ln() + hm * normal(&mut rng)).exp(),
        );
        nf.push(post.0);
        nm.push(post.1);
        if i + 1 == spec.years {
            break;
        }
        let rt = p.recruitment(post.0);
        let mu_f = ((rt + 1.0) * post.0).ln();
        let mu_m = (post.1 + rt * post.0).ln();
        // the proportional rule is always below the drawn abundance, so no floor
        let floor = match &spec.harvest {
            HarvestPolicy::Fixed(h) => (h[i + 1][0], h[i + 1][1]),
            HarvestPolicy::Proportional { .. } => (0.0, 0.0),
        };
        pre = (
            truncated_lognormal(mu_f, bf, floor.0, &mut rng, i + 1)?,
            truncated_lognormal(mu_m, bm, floor.1, &mut rng, i + 1)?,
        );
    }
    PopulationTrajectory::new(nf, nm)
}

/// Observation records drawn for a trajectory, with the countabilities used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedObservations {
    pub records: Vec<YearRecord>,
    pub a_t: Vec<f64>,
}

impl SimulatedObservations {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_records(self.records.clone())
    }
}

fn poisson(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive rate").sample(rng) as u64
}

/// Draws countabilities, Poisson index counts and survey estimates.
///
/// Uses stream 1 of the spec's seed, independent of the trajectory draws.
pub fn simulate_observations(traj: &PopulationTrajectory, spec: &SimulationSpec) -> Result<SimulatedObservations> {
    spec.check()?;
    if traj.years() != spec.years {
        return Err(Error::InvalidArgument("trajectory length does not match the spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let p = &spec.params;
    let s = p.variances()?;
    let mut records = Vec::with_capacity(spec.years);
    let mut a_t = Vec::with_capacity(spec.years);
    for i in 0..spec.years {
        let a = if s.sigma_a == 0.0 {
            p.a_bar
        } else {
            (p.a_bar.ln() + s.sigma_a * normal(&mut rng)).exp()
        };
        a_t.push(a);
        let pre = traj.pre_hunt(i);
        let post = traj.post_hunt(i);
        let e = spec.effort[i];
        let count_female = poisson(a * e * pre.0, &mut rng);
        let count_male = poisson(a * e * pre.1, &mut rng);
        let survey = spec.surveys.iter().find(|sp| sp.year_index == i).map(|sp| Survey {
            est_female: (post.0.ln() + sp.sd_log * normal(&mut rng)).exp(),
            est_male: (post.1.ln() + sp.sd_log * normal(&mut rng)).exp(),
            sd_log: sp.sd_log,
        });
        let (harvest_female, harvest_male) = spec.harvest_at(i, pre);
        records.push(YearRecord {
            year: spec.first_year + i as i32,
            count_female,
            count_male,
            effort: e,
            harvest_female,
            harvest_male,
            survey,
        });
    }
    Ok(SimulatedObservations { records, a_t })
}

/// Trajectory and observations in one call.
pub fn simulate(spec: &SimulationSpec) -> Result<(PopulationTrajectory, SimulatedObservations)> {
    let traj = simulate_trajectory(spec)?;
    let obs = simulate_observations(&traj, spec)?;
    Ok((traj, obs))
}

/// Index-count law as a function of effort, for fixed abundance and countability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexLaw {
    /// `Po(intensity * e)`, with `intensity = a N`.
    Poisson { intensity: f64 },
    /// `Po(scale * sqrt(e))`: not effort-homogeneous.
    SqrtEffortPoisson { scale: f64 },
}

impl IndexLaw {
    pub fn mean(&self, effort: f64) -> f64 {
        match *self {
            IndexLaw::Poisson { intensity } => intensity * effort,
            IndexLaw::SqrtEffortPoisson { scale } => scale * effort.sqrt(),
        }
    }

    /// Probability mass at `0..len`.
    pub fn pmf(&self, effort: f64, len: usize) -> Vec<f64> {
        poisson_pmf(self.mean(effort), len)
    }
}

fn poisson_pmf(lambda: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| {
            if lambda == 0.0 {
                if k == 0 { 1.0 } else { 0.0 }
            } else {
                let kf = k as f64;
                (kf * lambda.ln() - lambda - ln_gamma(kf + 1.0)).exp()
            }
        })
        .collect()
}

/// Support length holding all but a negligible (< 1e-12) fraction of `Po(lambda)`.
fn support_len(lambda: f64) -> usize {
    (lambda + 20.0 * lambda.sqrt() + 50.0).ceil() as usize
}

/// Largest absolute pmf difference between an observation at effort `e` and the
/// sum of independent observations at efforts `a1 e` and `a2 e`.
pub fn effort_homogeneity_check(law: IndexLaw, effort: f64, split: (f64, f64)) -> Result<f64> {
    let (a1, a2) = split;
    if !(a1 >= 0.0 && a2 >= 0.0) || ((a1 + a2) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument("split must be nonnegative and sum to one".into()));
    }
    if !(effort >= 0.0 && effort.is_finite()) {
        return Err(Error::InvalidArgument("effort must be nonnegative".into()));
    }
    let lambdas = [law.mean(effort), law.mean(a1 * effort), law.mean(a2 * effort)];
    let len = support_len(lambdas[0].max(lambdas[1] + lambdas[2]));
    let whole = law.pmf(effort, len);
    let p1 = law.pmf(a1 * effort, len);
    let p2 = law.pmf(a2 * effort, len);
    let mut worst = 0.0f64;
    for k in 0..len {
        let conv: f64 = (0..=k).map(|j| p1[j] * p2[k - j]).sum();
        worst = worst.max((conv - whole[k]).abs());
    }
    Ok(worst)
}

/// Finite discrete distribution of abundance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationDistribution {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PopulationDistribution {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidArgument("support and probabilities must match and be nonempty".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("probabilities must be nonnegative and sum to one".into()));
        }
        if support.iter().any(|&n| !(n >= 0.0 && n.is_finite())) {
            return Err(Error::InvalidArgument("abundances must be nonnegative".into()));
        }
        Ok(Self { support, probs })
    }

    pub fn degenerate(n: f64) -> Self {
        Self { support: vec![n], probs: vec![1.0] }
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(n, p)| n * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support.iter().zip(&self.probs).map(|(n, p)| p * (n - m) * (n - m)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (n, p) in self.support.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *n;
            }
        }
        *self.support.last().unwrap()
    }
}

/// One effort level of the variance decomposition of `Y / e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRow {
    pub effort: f64,
    /// `Var(Y / e) = Var(a N) + E[a N] / e`.
    pub var_rate: f64,
    /// `Var(E[Y | N, E = 1]) = Var(a N)`, the limit as effort grows.
    pub limit: f64,
    /// `E[a N] / e`, the Poisson part that vanishes with effort.
    pub residual: f64,
}

/// Exact decomposition of the variance of the effort-scaled Poisson index.
pub fn variance_decomposition(pop: &PopulationDistribution, a: f64, efforts: &[f64]) -> Result<Vec<VarianceRow>> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::InvalidArgument("countability must be nonnegative".into()));
    }
    let limit = a * a * pop.variance();
    let mean_rate = a * pop.mean();
    efforts
        .iter()
        .map(|&e| {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument(format!("effort must be positive, got {e}")));
            }
            let residual = mean_rate / e;
            Ok(VarianceRow { effort: e, var_rate: limit + residual, limit, residual })
        })
        .collect()
}

/// Monte Carlo estimate of `Var(Y / e)` and its standard error.
pub fn monte_carlo_rate_variance<R: Rng + ?Sized>(
    pop: &PopulationDistribution,
    a: f64,
    effort: f64,
    replicates: usize,
    rng: &mut R,
) -> (f64, f64) {
    let xs: Vec<f64> = (0..replicates)
        .map(|_| {
            let n = pop.sample(rng);
            let lambda = a * effort * n;
            let y = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(rng) } else { 0.0 };
            y / effort
        })
        .collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let dev2: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = dev2.iter().sum::<f64>() / (n - 1.0);
    let m4 = dev2.iter().map(|d| d * d).sum::<f64>() / n;
    // large-sample standard error of the sample variance
    let se = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    (var, se)
}

/// Mean and variance of an index law at one effort, computed from its pmf.
pub fn index_moments(law: IndexLaw, effort: f64) -> (f64, f64) {
    let len = support_len(law.mean(effort));
    let pmf = law.pmf(effort, len);
    let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let var: f64 = pmf.iter().enumerate().map(|(k, p)| (k as f64 - mean).powi(2) * p).sum();
    (mean, var)
}
