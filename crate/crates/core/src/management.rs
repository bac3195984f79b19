//! One-year-ahead harvest analysis from posterior draws.
//!
//! For a candidate harvest `H` and current female abundance `n`, every
//! posterior draw is pushed through a hunting step and a breeding step:
//!
//! ```text
//! post = exp(ln(n - H) + sqrt(1/4) sigma_f z1)
//! next = exp(ln((1 + r_t) post) + sqrt(3/4) sigma_f z2),   r_t = exp(r - k ln post)
//! ```
//!
//! The standard normals `z` are drawn once and reused for every `H`, so each
//! simulated `next` is a deterministic, decreasing function of `H` and the
//! bisection below works on a monotone objective.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{recruitment_rate, BREEDING_FRACTION, HARVEST_FRACTION};
use crate::sampler::DecodedDraws;
use crate::stats::{quantile_sorted, quantiles};

/// Levels always present in a prediction.
pub const PREDICTION_LEVELS: [f64; 3] = [0.10, 0.50, 0.90];

/// The part of a posterior draw that drives next year's abundance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemographicDraw {
    pub r: f64,
    pub k: f64,
    pub sigma_f: f64,
    pub sigma_m: f64,
}

impl DemographicDraw {
    /// Reads the `r`, `k`, `sigma_f` and `sigma_m` columns of decoded draws.
    pub fn from_decoded(draws: &DecodedDraws) -> Result<Vec<DemographicDraw>> {
        let col = |name: &str| {
            draws
                .column(name)
                .ok_or_else(|| Error::InvalidArgument(format!("draws have no `{name}` column")))
        };
        let (r, k, sf, sm) = (col("r")?, col("k")?, col("sigma_f")?, col("sigma_m")?);
        Ok((0..r.len())
            .map(|i| DemographicDraw { r: r[i], k: k[i], sigma_f: sf[i], sigma_m: sm[i] })
            .collect())
    }

    fn check(&self) -> Result<()> {
        let ok = self.r.is_finite()
            && self.k >= 0.0
            && self.k.is_finite()
            && self.sigma_f >= 0.0
            && self.sigma_f.is_finite()
            && self.sigma_m >= 0.0
            && self.sigma_m.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid posterior draw {self:?}")))
        }
    }
}

/// Component-wise posterior median of the draws, for plug-in prediction.
pub fn median_draw(draws: &[DemographicDraw]) -> Result<DemographicDraw> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let med = |f: fn(&DemographicDraw) -> f64| {
        let mut v: Vec<f64> = draws.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, 0.5)
    };
    Ok(DemographicDraw {
        r: med(|d| d.r),
        k: med(|d| d.k),
        sigma_f: med(|d| d.sigma_f),
        sigma_m: med(|d| d.sigma_m),
    })
}

/// Posterior-predictive simulator with common random numbers.
#[derive(Debug, Clone)]
pub struct PredictiveSampler {
    draws: Vec<DemographicDraw>,
    n_rep: usize,
    /// Four normals per (draw, replicate): female hunt, female breed, male hunt, male breed.
    noise: Vec<[f64; 4]>,
}

impl PredictiveSampler {
    /// Draws `n_rep` noise vectors per posterior draw from `rng`.
    pub fn new<R: Rng + ?Sized>(draws: Vec<DemographicDraw>, n_rep: usize, rng: &mut R) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::InvalidArgument("no posterior draws".into()));
        }
        if n_rep == 0 {
            return Err(Error::InvalidArgument("n_rep must be positive".into()));
        }
        for d in &draws {
            d.check()?;
        }
        let noise = (0..draws.len() * n_rep)
            .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
            .collect();
        Ok(Self { draws, n_rep, noise })
    }

    /// Uses only the component-wise posterior median instead of the full draws.
    pub fn plug_in<R: Rng + ?Sized>(draws: &[DemographicDraw], n_rep: usize, rng: &mut R) -> Result<Self> {
        Self::new(vec![median_draw(draws)?], n_rep, rng)
    }

    pub fn draws(&self) -> &[DemographicDraw] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    /// Simulated next-year female abundances, one per (draw, replicate).
    ///
    /// Harvesting the whole population (`harvest >= n_now`) yields zeros.
    pub fn female_next(&self, n_now: f64, harvest: f64) -> Vec<f64> {
        let remaining = n_now - harvest;
        self.draws
            .par_iter()
            .zip(self.noise.par_chunks(self.n_rep))
            .flat_map_iter(|(d, zs)| zs.iter().map(move |z| female_path(d, remaining, z).1))
            .collect()
    }

    /// Simulated next-year male abundances given the male state and harvest.
    pub fn male_next(&self, n_now: f64, harvest: f64, n_male: f64, harvest_male: f64) -> Vec<f64> {
        let (remaining, remaining_m) = (n_now - harvest, n_male - harvest_male);
        let hm = HARVEST_FRACTION.sqrt();
        let bm = BREEDING_FRACTION.sqrt();
        self.draws
            .par_iter()
            .zip(self.noise.par_chunks(self.n_rep))
            .flat_map_iter(|(d, zs)| {
                zs.iter().map(move |z| {
                    let (post_f, _) = female_path(d, remaining, z);
                    if remaining_m <= 0.0 && post_f == 0.0 {
                        return 0.0;
                    }
                    let post_m = if remaining_m <= 0.0 {
                        0.0
                    } else {
                        (remaining_m.ln() + hm * d.sigma_m * z[2]).exp()
                    };
                    let rt = if post_f > 0.0 { recruitment_rate(d.r, d.k, post_f) } else { 0.0 };
                    ((post_m + rt * post_f).ln() + bm * d.sigma_m * z[3]).exp()
                })
            })
            .collect()
    }

    /// Quantiles of next year's female abundance at `levels`.
    pub fn female_quantiles(&self, n_now: f64, harvest: f64, levels: &[f64]) -> Vec<f64> {
        quantiles(&self.female_next(n_now, harvest), levels)
    }
}

/// `(post-hunt, next pre-hunt)` female abundance along one noise path.
fn female_path(d: &DemographicDraw, remaining: f64, z: &[f64; 4]) -> (f64, f64) {
    if remaining <= 0.0 {
        return (0.0, 0.0);
    }
    let post = (remaining.ln() + HARVEST_FRACTION.sqrt() * d.sigma_f * z[0]).exp();
    let rt = recruitment_rate(d.r, d.k, post);
    let next = (((1.0 + rt) * post).ln() + BREEDING_FRACTION.sqrt() * d.sigma_f * z[1]).exp();
    (post, next)
}

/// Inputs of a one-year-ahead prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextYearQuery {
    pub n_female: f64,
    pub harvest_female: f64,
    /// Current male abundance and male harvest, when a male prediction is wanted.
    #[serde(default)]
    pub male: Option<(f64, f64)>,
    /// Extra quantile levels beyond 10/50/90%.
    #[serde(default)]
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NextYearPrediction {
    pub harvest: f64,
    pub levels: Vec<f64>,
    pub female: Vec<f64>,
    pub male: Option<Vec<f64>>,
}

impl NextYearPrediction {
    /// Female quantile at `level`, if it was requested.
    pub fn female_at(&self, level: f64) -> Option<f64> {
        self.levels.iter().position(|&l| l == level).map(|i| self.female[i])
    }
}

/// Quantiles of next year's abundance after harvesting `query.harvest_female`.
pub fn predict_next_year(sampler: &PredictiveSampler, query: &NextYearQuery) -> Result<NextYearPrediction> {
    let n = query.n_female;
    let h = query.harvest_female;
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument("current female abundance must be positive".into()));
    }
    if !(h >= 0.0) {
        return Err(Error::InvalidArgument("harvest must be nonnegative".into()));
    }
    if h >= n {
        return Err(Error::InvalidArgument(format!("harvest {h} is not below the current population {n}")));
    }
    let mut levels = PREDICTION_LEVELS.to_vec();
    for &l in &query.levels {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::InvalidArgument(format!("quantile level {l} outside [0, 1]")));
        }
        if !levels.contains(&l) {
            levels.push(l);
        }
    }
    let female = sampler.female_quantiles(n, h, &levels);
    let male = match query.male {
        Some((m, hm)) => {
            if !(m > 0.0) || !(hm >= 0.0) || hm >= m {
                return Err(Error::InvalidArgument("male harvest must be below the male population".into()));
            }
            Some(quantiles(&sampler.male_next(n, h, m, hm), &levels))
        }
        None => None,
    };
    Ok(NextYearPrediction { harvest: h, levels, female, male })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Median of next year's population equals the target.
    Stable,
    /// Largest harvest keeping next year's population at or above the target with probability `prob`.
    HunterBiased,
    /// Smallest harvest bringing next year's population to or below the target with probability `prob`.
    ForestryBiased,
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Self::Stable),
            "hunter" | "hunter_biased" => Ok(Self::HunterBiased),
            "forestry" | "forestry_biased" => Ok(Self::ForestryBiased),
            _ => Err(Error::InvalidArgument(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub target: f64,
    pub prob: f64,
    pub current_female_pop: f64,
}

impl StrategySpec {
    pub fn check(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target.is_finite()) {
            return Err(Error::InvalidArgument("target must be positive".into()));
        }
        if !(self.prob > 0.0 && self.prob < 1.0) {
            return Err(Error::InvalidArgument("prob must lie in (0, 1)".into()));
        }
        if !(self.current_female_pop > 0.0 && self.current_female_pop.is_finite()) {
            return Err(Error::InvalidArgument("current female population must be positive".into()));
        }
        Ok(())
    }
}

/// Bisection stops once the bracket is narrower than this many animals.
pub const HARVEST_TOLERANCE: f64 = 0.5;

/// Harvest meeting a strategy, found by bisection on `[0, n_now]`.
///
/// The bracket is narrowed well below [`HARVEST_TOLERANCE`]: hunter-biased
/// returns the feasible end, forestry-biased the satisfying end and stable
/// the midpoint.
pub fn solve_harvest(sampler: &PredictiveSampler, strategy: &StrategySpec) -> Result<f64> {
    strategy.check()?;
    let n = strategy.current_female_pop;
    let target = strategy.target;
    let prob = strategy.prob;
    // `holds(H)` is true on [0, H*] and false beyond it.
    let holds = |h: f64| -> bool {
        let next = sampler.female_next(n, h);
        let m = next.len() as f64;
        match strategy.kind {
            StrategyKind::Stable => {
                let mut s = next;
                s.sort_by(f64::total_cmp);
                quantile_sorted(&s, 0.5) >= target
            }
            StrategyKind::HunterBiased => next.iter().filter(|&&x| x >= target).count() as f64 / m >= prob,
            StrategyKind::ForestryBiased => next.iter().filter(|&&x| x <= target).count() as f64 / m < prob,
        }
    };

    let (mut lo, mut hi) = (0.0, n);
    if !holds(lo) {
        return match strategy.kind {
            StrategyKind::ForestryBiased => Ok(0.0),
            StrategyKind::Stable => Err(Error::InfeasibleStrategy(format!(
                "median next-year population without harvest is below the target {target}"
            ))),
            StrategyKind::HunterBiased => Err(Error::InfeasibleStrategy(format!(
                "even without harvest P(N >= {target}) is below {prob}"
            ))),
        };
    }
    let width = (1e-6 * n).min(HARVEST_TOLERANCE);
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(match strategy.kind {
        StrategyKind::HunterBiased => lo,
        StrategyKind::Stable => 0.5 * (lo + hi),
        StrategyKind::ForestryBiased => hi,
    })
}

/// One point of the harvest sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub harvest: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

/// 10/50/90% quantiles of next year's females on a grid of harvests below `n_now`.
pub fn harvest_sweep(sampler: &PredictiveSampler, n_now: f64, harvests: &[f64]) -> Result<Vec<SweepRow>> {
    harvests
        .iter()
        .map(|&h| {
            if !(h >= 0.0 && h < n_now) {
                return Err(Error::InvalidArgument(format!("sweep harvest {h} outside [0, {n_now})")));
            }
            let q = sampler.female_quantiles(n_now, h, &PREDICTION_LEVELS);
            Ok(SweepRow { harvest: h, q10: q[0], q50: q[1], q90: q[2] })
        })
        .collect()
}

/// Writes `variant,harvest,q10,q50,q90` rows for one or more variants.
pub fn write_sweep_csv<W: Write>(out: W, sweeps: &[(&str, &[SweepRow])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "harvest", "q10", "q50", "q90"])?;
    for (variant, rows) in sweeps {
        for r in rows.iter() {
            w.write_record([
                variant.to_string(),
                r.harvest.to_string(),
                r.q10.to_string(),
                r.q50.to_string(),
                r.q90.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
