//! Log-posterior of the state-space model and its gradient.
//!
//! The posterior is split into five blocks plus the change-of-variables
//! correction:
//!
//! * `l1`: breeding transitions `N(t - 1/2) -> N(t)`, log-normal with variance `0.75 sigma^2`;
//! * `l2`: hunting transitions `N(t) -> N(t + 1/2)`, log-normal around `N(t) - H(t)`
//!   with variance `0.25 sigma^2`;
//! * `l3`: the normalizer of the breeding step truncated to `N(t) > H(t)`;
//! * `l4`: Poisson index counts and log-normal surveys;
//! * `l5`: priors, including the countability hierarchy and the first-year abundance.
//!
//! The sampler works on an unconstrained vector (log abundances, log
//! countabilities, `log tau`, `logit omega`, `log nu`, `r`, `log k`). The
//! [`Posterior`] type evaluates value and gradient in a single fused pass;
//! [`log_posterior`] assembles the same number term by term for inspection.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::density::{
    beta_ln_pdf, exponential_ln_pdf, gamma_ln_pdf, inverse_mills, ln_std_normal_cdf,
    lognormal_ln_pdf, normal_ln_pdf, poisson_ln_pmf, LN_SQRT_2PI,
};
use crate::error::{Error, Result};
use crate::model::{
    Dataset, ModelConfig, ModelParameters, PopulationTrajectory, PriorConfig, Variant,
    BREEDING_FRACTION, HARVEST_FRACTION,
};
use crate::sampler::Target;

/// Positions of each quantity inside the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    years: usize,
    config: ModelConfig,
}

impl StateLayout {
    pub fn new(years: usize, config: ModelConfig) -> Self {
        assert!(years > 0, "layout needs at least one year");
        Self { years, config }
    }

    pub fn years(&self) -> usize {
        self.years
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    fn variable(&self) -> bool {
        self.config.variant == Variant::Variable
    }

    pub fn log_n_female(&self, grid: usize) -> usize {
        grid
    }

    pub fn log_n_male(&self, grid: usize) -> usize {
        2 * self.years + grid
    }

    /// Index of `log a_t` for year index `i`; in the fixed model every year maps to `log a`.
    pub fn log_a(&self, i: usize) -> usize {
        if self.variable() {
            4 * self.years + i
        } else {
            self.log_a_bar()
        }
    }

    pub fn log_a_bar(&self) -> usize {
        4 * self.years + if self.variable() { self.years } else { 0 }
    }

    pub fn log_tau(&self) -> usize {
        self.log_a_bar() + 1
    }

    pub fn logit_omega(&self) -> Option<usize> {
        self.variable().then(|| self.log_tau() + 1)
    }

    pub fn log_nu(&self) -> usize {
        self.log_tau() + if self.variable() { 2 } else { 1 }
    }

    pub fn r(&self) -> usize {
        self.log_nu() + 1
    }

    pub fn log_k(&self) -> Option<usize> {
        self.config.density_dependence.then(|| self.r() + 1)
    }

    pub fn dim(&self) -> usize {
        self.r() + 1 + usize::from(self.config.density_dependence)
    }

    /// Coordinates that are logarithms of positive quantities.
    fn log_coordinates(&self) -> impl Iterator<Item = usize> + '_ {
        let n = 0..4 * self.years;
        let a = if self.variable() { 4 * self.years..5 * self.years } else { 0..0 };
        n.chain(a)
            .chain([self.log_a_bar(), self.log_tau(), self.log_nu()])
            .chain(self.log_k())
    }

    /// Names of the unconstrained coordinates, in order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        for sex in ["f", "m"] {
            for g in 0..2 * self.years {
                out.push(format!("log_n{sex}[{}]", grid_label(g)));
            }
        }
        if self.variable() {
            for i in 0..self.years {
                out.push(format!("log_a[{}]", i + 1));
            }
            out.push("log_a_bar".into());
            out.push("log_tau".into());
            out.push("logit_omega".into());
        } else {
            out.push("log_a".into());
            out.push("log_tau".into());
        }
        out.push("log_nu".into());
        out.push("r".into());
        if self.config.density_dependence {
            out.push("log_k".into());
        }
        out
    }
}

/// Label of a grid index: `1`, `1.5`, `2`, ...
pub fn grid_label(g: usize) -> String {
    if g.is_multiple_of(2) {
        format!("{}", g / 2 + 1)
    } else {
        format!("{}.5", g / 2 + 1)
    }
}

/// A point of the sampler's state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedState {
    pub layout: StateLayout,
    pub values: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl UnconstrainedState {
    /// Encodes natural-scale values. In the fixed model `a_bar` is taken as the
    /// common countability and `omega`/`a_t` are ignored.
    pub fn encode(
        layout: StateLayout,
        traj: &PopulationTrajectory,
        params: &ModelParameters,
    ) -> Result<Self> {
        let t = layout.years();
        if traj.years() != t {
            return Err(Error::InvalidArgument(format!(
                "trajectory covers {} years, layout expects {t}",
                traj.years()
            )));
        }
        params.check()?;
        let mut v = vec![0.0; layout.dim()];
        for g in 0..2 * t {
            v[layout.log_n_female(g)] = traj.n_female[g].ln();
            v[layout.log_n_male(g)] = traj.n_male[g].ln();
        }
        if layout.variable() {
            if params.a_t.len() != t {
                return Err(Error::InvalidArgument("need one a_t per year".into()));
            }
            for i in 0..t {
                v[layout.log_a(i)] = params.a_t[i].ln();
            }
            if !(params.omega > 0.0 && params.omega < 1.0) {
                return Err(Error::InvalidArgument(
                    "omega must lie strictly inside (0, 1) for the variable model".into(),
                ));
            }
            v[layout.logit_omega().unwrap()] = logit(params.omega);
        }
        v[layout.log_a_bar()] = params.a_bar.ln();
        if !(params.tau > 0.0 && params.nu > 0.0) {
            return Err(Error::InvalidArgument("tau and nu must be strictly positive".into()));
        }
        v[layout.log_tau()] = params.tau.ln();
        v[layout.log_nu()] = params.nu.ln();
        v[layout.r()] = params.r;
        if let Some(ik) = layout.log_k() {
            if params.k <= 0.0 {
                return Err(Error::InvalidArgument(
                    "k must be strictly positive when density dependence is enabled".into(),
                ));
            }
            v[ik] = params.k.ln();
        }
        Ok(Self { layout, values: v })
    }

    pub fn decode(&self) -> (PopulationTrajectory, ModelParameters) {
        let l = &self.layout;
        let v = &self.values;
        let t = l.years();
        let n_female = (0..2 * t).map(|g| v[l.log_n_female(g)].exp()).collect();
        let n_male = (0..2 * t).map(|g| v[l.log_n_male(g)].exp()).collect();
        let a_bar = v[l.log_a_bar()].exp();
        let params = ModelParameters {
            r: v[l.r()],
            k: l.log_k().map_or(0.0, |i| v[i].exp()),
            tau: v[l.log_tau()].exp(),
            omega: l.logit_omega().map_or(1.0, |i| sigmoid(v[i])),
            nu: v[l.log_nu()].exp(),
            a_bar,
            a_t: (0..t).map(|i| v[l.log_a(i)].exp()).collect(),
        };
        (PopulationTrajectory { n_female, n_male }, params)
    }

    /// Log-determinant of the map from unconstrained to natural coordinates.
    pub fn log_jacobian(&self) -> f64 {
        let l = &self.layout;
        let mut j: f64 = l.log_coordinates().map(|i| self.values[i]).sum();
        if let Some(i) = l.logit_omega() {
            let w = self.values[i];
            j += -softplus(-w) - softplus(w);
        }
        j
    }
}

/// Per-block contributions to the log-posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPosteriorBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub jacobian: f64,
    pub total: f64,
}

impl LogPosteriorBreakdown {
    fn from_parts(l1: f64, l2: f64, l3: f64, l4: f64, l5: f64, jacobian: f64) -> Self {
        let total = l1 + l2 + l3 + l4 + l5 + jacobian;
        let total = if total.is_nan() { f64::NEG_INFINITY } else { total };
        Self { l1, l2, l3, l4, l5, jacobian, total }
    }
}

/// Log-normal locations of the breeding step out of a post-hunt state.
pub fn breeding_locations(prev: (f64, f64), params: &ModelParameters) -> (f64, f64) {
    let rt = params.recruitment(prev.0);
    (((rt + 1.0) * prev.0).ln(), (prev.1 + rt * prev.0).ln())
}

/// Breeding step `(N_F, N_M)(t - 1/2) -> (N_F, N_M)(t)`, untruncated.
pub fn log_breeding_transition(prev: (f64, f64), next: (f64, f64), params: &ModelParameters) -> f64 {
    let Ok(s) = params.variances() else {
        return f64::NEG_INFINITY;
    };
    if prev.0 <= 0.0 || prev.1 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let (mu_f, mu_m) = breeding_locations(prev, params);
    let c = BREEDING_FRACTION.sqrt();
    sum_ln(
        lognormal_ln_pdf(next.0, mu_f, c * s.sigma_f),
        lognormal_ln_pdf(next.1, mu_m, c * s.sigma_m),
    )
}

/// Sum of two log-densities where an impossible term wins over a point mass.
fn sum_ln(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}

/// `-ln P(N(t) > H(t))` for the breeding step out of `prev`, summed over sexes.
///
/// A zero harvest contributes exactly zero. If the constraint has zero
/// probability (degenerate step below the harvest) the result is `-inf`.
pub fn log_truncation_normalizer(
    prev: (f64, f64),
    harvest: (f64, f64),
    params: &ModelParameters,
) -> f64 {
    let Ok(s) = params.variances() else {
        return f64::NEG_INFINITY;
    };
    let (mu_f, mu_m) = breeding_locations(prev, params);
    let c = BREEDING_FRACTION.sqrt();
    truncation_term(mu_f, harvest.0, c * s.sigma_f) + truncation_term(mu_m, harvest.1, c * s.sigma_m)
}

fn truncation_term(mu: f64, harvest: f64, sd: f64) -> f64 {
    if harvest <= 0.0 {
        return 0.0;
    }
    let lh = harvest.ln();
    if sd == 0.0 {
        return if mu > lh { 0.0 } else { f64::NEG_INFINITY };
    }
    -ln_std_normal_cdf((mu - lh) / sd)
}

/// Hunting step `(N_F, N_M)(t) -> (N_F, N_M)(t + 1/2)` given known harvest.
///
/// When `breeding_from` carries the previous post-hunt state, the truncation
/// normalizer of the breeding step that produced `pre` is included.
pub fn log_harvest_transition(
    pre: (f64, f64),
    post: (f64, f64),
    harvest: (f64, f64),
    params: &ModelParameters,
    breeding_from: Option<(f64, f64)>,
) -> f64 {
    let Ok(s) = params.variances() else {
        return f64::NEG_INFINITY;
    };
    if pre.0 <= harvest.0 || pre.1 <= harvest.1 {
        return f64::NEG_INFINITY;
    }
    let c = HARVEST_FRACTION.sqrt();
    let density = sum_ln(
        lognormal_ln_pdf(post.0, (pre.0 - harvest.0).ln(), c * s.sigma_f),
        lognormal_ln_pdf(post.1, (pre.1 - harvest.1).ln(), c * s.sigma_m),
    );
    match breeding_from {
        Some(prev) => sum_ln(density, log_truncation_normalizer(prev, harvest, params)),
        None => density,
    }
}

/// Index counts (Poisson around `a_t E_t N(t)`) and surveys (normal on the log scale).
pub fn log_observation(traj: &PopulationTrajectory, params: &ModelParameters, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for (i, rec) in data.records().iter().enumerate() {
        let (nf, nm) = traj.pre_hunt(i);
        let scale = params.a_t[i] * rec.effort;
        total += poisson_ln_pmf(rec.count_female, scale * nf);
        total += poisson_ln_pmf(rec.count_male, scale * nm);
        if let Some(s) = rec.survey {
            let (pf, pm) = traj.post_hunt(i);
            total += normal_ln_pdf(s.est_female.ln(), pf.ln(), s.sd_log);
            total += normal_ln_pdf(s.est_male.ln(), pm.ln(), s.sd_log);
        }
    }
    total
}

/// Sum of all prior log-densities, with full normalizing constants.
///
/// `priors.mu_n0` must be resolved (see [`PriorConfig::resolved`]).
pub fn log_prior(
    params: &ModelParameters,
    initial: (f64, f64),
    priors: &PriorConfig,
    config: ModelConfig,
) -> f64 {
    let Ok(s) = params.variances() else {
        return f64::NEG_INFINITY;
    };
    let mut total = exponential_ln_pdf(params.tau, priors.beta_tau)
        + gamma_ln_pdf(params.nu, priors.alpha_nu, priors.beta_nu)
        + normal_ln_pdf(params.a_bar, priors.mu_abar, priors.sigma_abar)
        + normal_ln_pdf(params.r, priors.mu_r, priors.sigma_r);
    if config.variant == Variant::Variable {
        total += beta_ln_pdf(params.omega, priors.alpha_b, priors.beta_b);
        let loc = params.a_bar.ln();
        total += params
            .a_t
            .iter()
            .map(|&a| lognormal_ln_pdf(a, loc, s.sigma_a))
            .sum::<f64>();
    }
    if config.density_dependence {
        total += exponential_ln_pdf(params.k, priors.beta_k);
    }
    let mu0 = priors.mu_n0.expect("initial-state prior location must be resolved");
    total += lognormal_ln_pdf(initial.0, mu0, priors.sigma_n0);
    total += lognormal_ln_pdf(initial.1, mu0, priors.sigma_n0);
    total
}

/// Term-by-term log-posterior at an unconstrained state.
pub fn log_posterior(state: &UnconstrainedState, data: &Dataset, priors: &PriorConfig) -> LogPosteriorBreakdown {
    let priors = priors.resolved(data);
    let (traj, params) = state.decode();
    let t = data.years();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut l3 = 0.0;
    for i in 0..t {
        let rec = data.year(i);
        let harvest = (rec.harvest_female, rec.harvest_male);
        if i > 0 {
            let prev = traj.post_hunt(i - 1);
            l1 += log_breeding_transition(prev, traj.pre_hunt(i), &params);
            l3 += log_truncation_normalizer(prev, harvest, &params);
        }
        l2 += log_harvest_transition(traj.pre_hunt(i), traj.post_hunt(i), harvest, &params, None);
    }
    let l4 = log_observation(&traj, &params, data);
    let l5 = log_prior(&params, traj.pre_hunt(0), &priors, state.layout.config());
    LogPosteriorBreakdown::from_parts(l1, l2, l3, l4, l5, state.log_jacobian())
}

/// Exact gradient of the log-posterior in unconstrained coordinates.
pub fn grad_log_posterior(state: &UnconstrainedState, data: &Dataset, priors: &PriorConfig) -> Result<Vec<f64>> {
    let post = Posterior::new(data.clone(), priors.clone(), state.layout.config())?;
    let mut g = vec![0.0; state.values.len()];
    let v = post.value_and_gradient(&state.values, &mut g);
    if v.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite)
    }
}

/// Log-posterior bound to a dataset, evaluated in a single pass with its gradient.
#[derive(Debug, Clone)]
pub struct Posterior {
    data: Dataset,
    priors: PriorConfig,
    layout: StateLayout,
    ln_effort: Vec<f64>,
    ln_count_factorials: Vec<(f64, f64)>,
    mu_n0: f64,
}

impl Posterior {
    pub fn new(data: Dataset, priors: PriorConfig, config: ModelConfig) -> Result<Self> {
        priors.check()?;
        let priors = priors.resolved(&data);
        let layout = StateLayout::new(data.years(), config);
        let ln_effort = data.records().iter().map(|r| r.effort.ln()).collect();
        let ln_count_factorials = data
            .records()
            .iter()
            .map(|r| (ln_gamma(r.count_female as f64 + 1.0), ln_gamma(r.count_male as f64 + 1.0)))
            .collect();
        let mu_n0 = priors.mu_n0.expect("resolved");
        Ok(Self { data, priors, layout, ln_effort, ln_count_factorials, mu_n0 })
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Priors with the initial-state location resolved.
    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    pub fn breakdown(&self, theta: &[f64]) -> LogPosteriorBreakdown {
        let state = UnconstrainedState { layout: self.layout, values: theta.to_vec() };
        log_posterior(&state, &self.data, &self.priors)
    }

    /// Returns the log-posterior and writes its gradient into `grad`.
    ///
    /// If the value is not finite, `grad` contents are unspecified.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let p = &self.priors;
        let t = l.years();
        debug_assert_eq!(theta.len(), l.dim());
        grad.iter_mut().for_each(|g| *g = 0.0);

        let variable = l.variable();
        let u = theta[l.log_tau()];
        let v = theta[l.log_nu()];
        let r = theta[l.r()];
        let (k, log_k) = match l.log_k() {
            Some(i) => (theta[i].exp(), theta[i]),
            None => (0.0, f64::NEG_INFINITY),
        };
        let (omega, ln_omega, ln_one_minus) = match l.logit_omega() {
            Some(i) => {
                let w = theta[i];
                (sigmoid(w), -softplus(-w), -softplus(w))
            }
            None => (1.0, 0.0, f64::NEG_INFINITY),
        };
        let ls_f = ln_omega + u;
        let ls_m = ls_f + v;
        let ls_a = ln_one_minus + u;
        let var_f = (2.0 * ls_f).exp();
        let var_m = (2.0 * ls_m).exp();

        let mut val = 0.0;
        let mut g_lsf = 0.0;
        let mut g_lsm = 0.0;
        let mut g_lsa = 0.0;
        let mut g_r = 0.0;
        let mut g_k = 0.0;

        let xf = |g: usize| theta[l.log_n_female(g)];
        let xm = |g: usize| theta[l.log_n_male(g)];

        // breeding (l1) and truncation (l3)
        let half_ln_b = 0.5 * BREEDING_FRACTION.ln();
        let sqrt_b = BREEDING_FRACTION.sqrt();
        let bvar_f = BREEDING_FRACTION * var_f;
        let bvar_m = BREEDING_FRACTION * var_m;
        for i in 1..t {
            let gp = 2 * i - 1;
            let gn = 2 * i;
            let y = xf(gp);
            let ym = xm(gp);
            let pf = y.exp();
            let pm = ym.exp();
            let rt = (r - k * y).exp();
            let share = rt / (1.0 + rt);
            let mu_f = y + rt.ln_1p();
            let d = pm + rt * pf;
            let mu_m = d.ln();
            let a = rt * pf / d;

            let dmuf_dy = 1.0 - k * share;
            let dmuf_dr = share;
            let dmuf_dk = -y * share;
            let dmum_dym = pm / d;
            let dmum_dy = a * (1.0 - k);
            let dmum_dr = a;
            let dmum_dk = -y * a;

            let res_f = xf(gn) - mu_f;
            let res_m = xm(gn) - mu_m;
            val += -xf(gn) - ls_f - half_ln_b - LN_SQRT_2PI - res_f * res_f / (2.0 * bvar_f);
            val += -xm(gn) - ls_m - half_ln_b - LN_SQRT_2PI - res_m * res_m / (2.0 * bvar_m);
            let zf = res_f / bvar_f;
            let zm = res_m / bvar_m;
            g_lsf += -1.0 + res_f * res_f / bvar_f;
            g_lsm += -1.0 + res_m * res_m / bvar_m;
            grad[l.log_n_female(gn)] += -1.0 - zf;
            grad[l.log_n_male(gn)] += -1.0 - zm;

            // total sensitivity to the two locations, breeding plus truncation
            let mut dmu_f = zf;
            let mut dmu_m = zm;

            let rec = self.data.year(i);
            if rec.harvest_female > 0.0 {
                let sd = sqrt_b * ls_f.exp();
                let q = (mu_f - rec.harvest_female.ln()) / sd;
                val -= ln_std_normal_cdf(q);
                let im = inverse_mills(q);
                dmu_f -= im / sd;
                g_lsf += im * q;
            }
            if rec.harvest_male > 0.0 {
                let sd = sqrt_b * ls_m.exp();
                let q = (mu_m - rec.harvest_male.ln()) / sd;
                val -= ln_std_normal_cdf(q);
                let im = inverse_mills(q);
                dmu_m -= im / sd;
                g_lsm += im * q;
            }

            grad[l.log_n_female(gp)] += dmu_f * dmuf_dy + dmu_m * dmum_dy;
            grad[l.log_n_male(gp)] += dmu_m * dmum_dym;
            g_r += dmu_f * dmuf_dr + dmu_m * dmum_dr;
            g_k += dmu_f * dmuf_dk + dmu_m * dmum_dk;
        }

        // hunting (l2)
        let half_ln_h = 0.5 * HARVEST_FRACTION.ln();
        let hvar_f = HARVEST_FRACTION * var_f;
        let hvar_m = HARVEST_FRACTION * var_m;
        for i in 0..t {
            let rec = self.data.year(i);
            let (gpre, gpost) = (2 * i, 2 * i + 1);
            for (x_pre, x_post, h, hvar, ls, ipre, ipost, g_ls) in [
                (xf(gpre), xf(gpost), rec.harvest_female, hvar_f, ls_f, l.log_n_female(gpre), l.log_n_female(gpost), &mut g_lsf),
                (xm(gpre), xm(gpost), rec.harvest_male, hvar_m, ls_m, l.log_n_male(gpre), l.log_n_male(gpost), &mut g_lsm),
            ] {
                let n = x_pre.exp();
                let left = n - h;
                if !(left > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let m = left.ln();
                let res = x_post - m;
                val += -x_post - ls - half_ln_h - LN_SQRT_2PI - res * res / (2.0 * hvar);
                let z = res / hvar;
                grad[ipost] += -1.0 - z;
                grad[ipre] += z * n / left;
                *g_ls += -1.0 + res * z;
            }
        }

        // observations (l4)
        for i in 0..t {
            let rec = self.data.year(i);
            let ia = l.log_a(i);
            let alpha = theta[ia];
            let (lf_f, lf_m) = self.ln_count_factorials[i];
            for (count, x, ix, lf) in [
                (rec.count_female, xf(2 * i), l.log_n_female(2 * i), lf_f),
                (rec.count_male, xm(2 * i), l.log_n_male(2 * i), lf_m),
            ] {
                let ln_lambda = alpha + self.ln_effort[i] + x;
                let lambda = ln_lambda.exp();
                let c = count as f64;
                val += c * ln_lambda - lambda - lf;
                grad[ix] += c - lambda;
                grad[ia] += c - lambda;
            }
            if let Some(s) = rec.survey {
                let prec = 1.0 / (s.sd_log * s.sd_log);
                for (est, ix) in [
                    (s.est_female, l.log_n_female(2 * i + 1)),
                    (s.est_male, l.log_n_male(2 * i + 1)),
                ] {
                    let res = est.ln() - theta[ix];
                    val += -0.5 * res * res * prec - s.sd_log.ln() - LN_SQRT_2PI;
                    grad[ix] += res * prec;
                }
            }
        }

        // priors (l5)
        let beta_abar = theta[l.log_a_bar()];
        let a_bar = beta_abar.exp();
        let tau = u.exp();
        let nu = v.exp();
        if variable {
            let var_a = (2.0 * ls_a).exp();
            for i in 0..t {
                let ia = l.log_a(i);
                let res = theta[ia] - beta_abar;
                val += -theta[ia] - ls_a - LN_SQRT_2PI - res * res / (2.0 * var_a);
                grad[ia] += -1.0 - res / var_a;
                grad[l.log_a_bar()] += res / var_a;
                g_lsa += -1.0 + res * res / var_a;
            }
            let iw = l.logit_omega().unwrap();
            val += beta_ln_pdf(omega, p.alpha_b, p.beta_b);
            grad[iw] += (p.alpha_b - 1.0) * (1.0 - omega) - (p.beta_b - 1.0) * omega;
        }
        val += p.beta_tau.ln() - p.beta_tau * tau;
        grad[l.log_tau()] += -p.beta_tau * tau;
        val += gamma_ln_pdf(nu, p.alpha_nu, p.beta_nu);
        grad[l.log_nu()] += (p.alpha_nu - 1.0) - p.beta_nu * nu;
        let res = a_bar - p.mu_abar;
        val += normal_ln_pdf(a_bar, p.mu_abar, p.sigma_abar);
        grad[l.log_a_bar()] += -res / (p.sigma_abar * p.sigma_abar) * a_bar;
        val += normal_ln_pdf(r, p.mu_r, p.sigma_r);
        g_r += -(r - p.mu_r) / (p.sigma_r * p.sigma_r);
        if l.log_k().is_some() {
            val += p.beta_k.ln() - p.beta_k * k;
            g_k += -p.beta_k;
        }
        let var0 = p.sigma_n0 * p.sigma_n0;
        for ix in [l.log_n_female(0), l.log_n_male(0)] {
            let x = theta[ix];
            let res = x - self.mu_n0;
            val += -x - p.sigma_n0.ln() - LN_SQRT_2PI - res * res / (2.0 * var0);
            grad[ix] += -1.0 - res / var0;
        }

        // change of variables
        for ix in l.log_coordinates() {
            val += theta[ix];
            grad[ix] += 1.0;
        }
        if let Some(iw) = l.logit_omega() {
            val += ln_omega + ln_one_minus;
            grad[iw] += 1.0 - 2.0 * omega;
            grad[iw] += (g_lsf + g_lsm) * (1.0 - omega) - g_lsa * omega;
        }

        grad[l.log_tau()] += g_lsf + g_lsm + g_lsa;
        grad[l.log_nu()] += g_lsm;
        grad[l.r()] += g_r;
        if let Some(ik) = l.log_k() {
            grad[ik] += g_k * log_k.exp();
        }

        if val.is_nan() {
            f64::NEG_INFINITY
        } else {
            val
        }
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.value_and_gradient(x, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HarvestRecord, IndexRecord, RawDataset, Survey, SurveyRecord};
    use crate::model::validate_dataset;

    fn params(tau: f64, omega: f64, nu: f64, r: f64, k: f64) -> ModelParameters {
        ModelParameters { r, k, tau, omega, nu, a_bar: 0.01, a_t: vec![0.01; 2] }
    }

    fn lognormal_pdf(x: f64, mu: f64, s: f64) -> f64 {
        let z = (x.ln() - mu) / s;
        (-0.5 * z * z).exp() / (x * s * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn breeding_at_both_medians() {
        // sigma_f = sigma_m = 1 via tau = 1, omega = 1, nu = 1; r_t = 1 via r = 0, k = 0
        let p = params(1.0, 1.0, 1.0, 0.0, 0.0);
        let got = log_breeding_transition((100.0, 50.0), (200.0, 150.0), &p);
        let norm = 0.75f64.sqrt() * (2.0 * std::f64::consts::PI).sqrt();
        let expected = -(200.0 * norm).ln() - (150.0 * norm).ln();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn breeding_matches_scalar_pdf_oracle() {
        let p = params(0.4, 0.7, 1.3, -0.5, 0.05);
        let prev = (321.0, 210.0);
        let next = (400.0, 290.0);
        let rt = (-0.5f64 - 0.05 * 321f64.ln()).exp();
        let sf = 0.4 * 0.7 * 0.75f64.sqrt();
        let sm = sf * 1.3;
        let expected = lognormal_pdf(400.0, ((rt + 1.0) * 321.0).ln(), sf).ln()
            + lognormal_pdf(290.0, (210.0 + rt * 321.0).ln(), sm).ln();
        assert!((log_breeding_transition(prev, next, &p) - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_breeding_off_path_is_minus_infinity() {
        let p = params(0.0, 1.0, 1.0, 0.0, 0.0);
        assert_eq!(log_breeding_transition((100.0, 50.0), (150.0, 150.0), &p), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_harvest_has_no_truncation() {
        let p = params(0.3, 0.5, 1.0, -0.7, 0.0);
        assert_eq!(log_truncation_normalizer((300.0, 200.0), (0.0, 0.0), &p), 0.0);
        let with = log_harvest_transition((400.0, 300.0), (390.0, 280.0), (0.0, 0.0), &p, Some((300.0, 200.0)));
        let without = log_harvest_transition((400.0, 300.0), (390.0, 280.0), (0.0, 0.0), &p, None);
        assert_eq!(with, without);
    }

    #[test]
    fn harvest_density_at_median() {
        // sigma_f = 1 so the hunting sd is 0.5
        let p = params(1.0, 1.0, 1.0, 0.0, 0.0);
        let female_only = log_harvest_transition((500.0, 300.0), (400.0, 250.0), (100.0, 50.0), &p, None)
            - lognormal_ln_pdf(250.0, 250f64.ln(), 0.5);
        let expected = -(400f64).ln() - 0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((female_only - expected).abs() < 1e-12);
    }

    #[test]
    fn harvest_exceeding_population_is_impossible() {
        let p = params(1.0, 1.0, 1.0, 0.0, 0.0);
        assert_eq!(
            log_harvest_transition((100.0, 300.0), (1.0, 250.0), (100.0, 50.0), &p, None),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn truncation_normalizes_the_breeding_density() {
        // integrate the constrained female breeding density over N(t) > H in log space
        let p = params(0.6, 0.8, 1.0, -0.6, 0.0);
        let prev = (250.0, 200.0);
        let harvest_f = 300.0;
        let trunc = log_truncation_normalizer(prev, (harvest_f, 0.0), &p);
        let (mu_f, _) = breeding_locations(prev, &p);
        let sd = 0.75f64.sqrt() * 0.6 * 0.8;
        let lo = harvest_f.ln();
        let hi = mu_f + 12.0 * sd;
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for j in 0..=n {
            let z = lo + j as f64 * h;
            let w = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            // density in N times dN/dz = N
            let x = z.exp();
            acc += w * (lognormal_ln_pdf(x, mu_f, sd) + z + trunc).exp();
        }
        acc *= h / 3.0;
        assert!((acc - 1.0).abs() < 1e-6, "integral {acc}");
    }

    fn toy_data() -> Dataset {
        let mut raw = RawDataset::default();
        for (y, (cf, cm)) in [(2001, (52u64, 40u64)), (2002, (47, 44))] {
            raw.index.push(IndexRecord { year: y, count_female: cf, count_male: cm, effort: 10.0 });
            raw.harvest.push(HarvestRecord { year: y, harvest_female: 100.0, harvest_male: 80.0 });
        }
        raw.surveys.push(SurveyRecord {
            year: 2002,
            survey: Survey { est_female: 320.0, est_male: 250.0, sd_log: 0.2 },
        });
        validate_dataset(raw).unwrap()
    }

    #[test]
    fn observation_examples() {
        let mut raw = RawDataset::default();
        raw.index.push(IndexRecord { year: 1, count_female: 20, count_male: 0, effort: 100.0 });
        raw.harvest.push(HarvestRecord { year: 1, harvest_female: 0.0, harvest_male: 0.0 });
        raw.surveys.push(SurveyRecord {
            year: 1,
            survey: Survey { est_female: 20.0, est_male: 30.0, sd_log: 0.1 },
        });
        let data = validate_dataset(raw).unwrap();
        let traj = PopulationTrajectory::new(vec![20.0, 20.0], vec![30.0, 30.0]).unwrap();
        let p = ModelParameters { r: 0.0, k: 0.0, tau: 1.0, omega: 0.5, nu: 1.0, a_bar: 0.01, a_t: vec![0.01] };
        let poisson_f = 20.0 * 20f64.ln() - 20.0 - ln_gamma(21.0);
        let poisson_m = -30.0;
        let survey = 2.0 * (-(0.1f64).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln());
        let got = log_observation(&traj, &p, &data);
        assert!((got - (poisson_f + poisson_m + survey)).abs() < 1e-10);
    }

    #[test]
    fn uniform_omega_prior_contributes_nothing_at_the_ends() {
        assert_eq!(beta_ln_pdf(0.0, 1.0, 1.0), 0.0);
        assert_eq!(beta_ln_pdf(1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn tau_prior_is_exponential() {
        let priors = PriorConfig { mu_n0: Some(5.0), ..PriorConfig::default() };
        let base = ModelParameters { r: 0.0, k: 0.0, tau: 1.0, omega: 1.0, nu: 1.0, a_bar: 0.001, a_t: vec![] };
        let cfg = ModelConfig { variant: Variant::Fixed, density_dependence: false };
        let at2 = log_prior(&ModelParameters { tau: 2.0, ..base.clone() }, (100.0, 100.0), &priors, cfg);
        let at0 = log_prior(&ModelParameters { tau: 0.0, ..base }, (100.0, 100.0), &priors, cfg);
        assert!((at2 - at0 + 2.0).abs() < 1e-12);
    }

    fn state(config: ModelConfig) -> UnconstrainedState {
        let traj = PopulationTrajectory::new(
            vec![410.0, 305.0, 470.0, 330.0],
            vec![300.0, 215.0, 360.0, 262.0],
        )
        .unwrap();
        let p = ModelParameters {
            r: -0.6,
            k: 0.05,
            tau: 0.4,
            omega: 0.6,
            nu: 1.2,
            a_bar: 0.012,
            a_t: vec![0.013, 0.011],
        };
        UnconstrainedState::encode(StateLayout::new(2, config), &traj, &p).unwrap()
    }

    #[test]
    fn round_trip_through_unconstrained_space() {
        let s = state(ModelConfig { variant: Variant::Variable, density_dependence: true });
        let (traj, p) = s.decode();
        let again = UnconstrainedState::encode(s.layout, &traj, &p).unwrap();
        for (a, b) in s.values.iter().zip(&again.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.layout.names().len(), s.layout.dim());
    }

    #[test]
    fn fused_value_equals_breakdown_total() {
        let data = toy_data();
        let priors = PriorConfig { mu_n0: Some(6.0), ..PriorConfig::default() };
        for variant in [Variant::Variable, Variant::Fixed] {
            for dd in [false, true] {
                let cfg = ModelConfig { variant, density_dependence: dd };
                let s = state(cfg);
                let post = Posterior::new(data.clone(), priors.clone(), cfg).unwrap();
                let mut g = vec![0.0; s.values.len()];
                let fused = post.value_and_gradient(&s.values, &mut g);
                let b = log_posterior(&s, &data, &priors);
                assert!((fused - b.total).abs() < 1e-9, "{variant:?} {dd}: {fused} vs {}", b.total);
                assert_eq!(b.total, b.l1 + b.l2 + b.l3 + b.l4 + b.l5 + b.jacobian);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = toy_data();
        let priors = PriorConfig { mu_n0: Some(6.0), ..PriorConfig::default() };
        for variant in [Variant::Variable, Variant::Fixed] {
            for dd in [false, true] {
                let cfg = ModelConfig { variant, density_dependence: dd };
                let s = state(cfg);
                let g = grad_log_posterior(&s, &data, &priors).unwrap();
                for i in 0..s.values.len() {
                    let h = 1e-5 * (1.0 + s.values[i].abs());
                    let mut up = s.clone();
                    up.values[i] += h;
                    let mut dn = s.clone();
                    dn.values[i] -= h;
                    let fd = (log_posterior(&up, &data, &priors).total
                        - log_posterior(&dn, &data, &priors).total)
                        / (2.0 * h);
                    let err = (fd - g[i]).abs() / fd.abs().max(1.0);
                    assert!(err < 1e-5, "{variant:?} dd={dd} coord {i}: fd {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn jacobian_gradient_is_one_per_log_coordinate() {
        let s = state(ModelConfig { variant: Variant::Fixed, density_dependence: false });
        let h = 1e-3;
        let i = s.layout.log_tau();
        let mut up = s.clone();
        up.values[i] += h;
        assert!(((up.log_jacobian() - s.log_jacobian()) / h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_and_variable_agree_on_likelihood_terms_when_countability_is_constant() {
        let data = toy_data();
        let priors = PriorConfig { mu_n0: Some(6.0), ..PriorConfig::default() };
        let traj = PopulationTrajectory::new(
            vec![410.0, 305.0, 470.0, 330.0],
            vec![300.0, 215.0, 360.0, 262.0],
        )
        .unwrap();
        let var_p = ModelParameters { r: -0.6, k: 0.0, tau: 0.5, omega: 0.6, nu: 1.2, a_bar: 0.012, a_t: vec![0.012; 2] };
        let fix_p = ModelParameters { tau: 0.3, omega: 1.0, ..var_p.clone() };
        let vs = UnconstrainedState::encode(
            StateLayout::new(2, ModelConfig { variant: Variant::Variable, density_dependence: false }),
            &traj,
            &var_p,
        )
        .unwrap();
        let fs = UnconstrainedState::encode(
            StateLayout::new(2, ModelConfig { variant: Variant::Fixed, density_dependence: false }),
            &traj,
            &fix_p,
        )
        .unwrap();
        let a = log_posterior(&vs, &data, &priors);
        let b = log_posterior(&fs, &data, &priors);
        for (x, y) in [(a.l1, b.l1), (a.l2, b.l2), (a.l3, b.l3), (a.l4, b.l4)] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn nonfinite_state_reports_error() {
        let data = toy_data();
        let priors = PriorConfig { mu_n0: Some(6.0), ..PriorConfig::default() };
        let mut s = state(ModelConfig::default());
        // pre-hunt female below the harvest of 100
        s.values[0] = 50f64.ln();
        assert_eq!(log_posterior(&s, &data, &priors).total, f64::NEG_INFINITY);
        assert!(matches!(grad_log_posterior(&s, &data, &priors), Err(Error::NonFinite)));
    }

    #[test]
    fn poisson_count_increment_changes_l4_by_pmf_ratio() {
        let data = toy_data();
        let priors = PriorConfig { mu_n0: Some(6.0), ..PriorConfig::default() };
        let s = state(ModelConfig::default());
        let (traj, p) = s.decode();
        let mut recs = data.records().to_vec();
        let lambda = p.a_t[0] * recs[0].effort * traj.n_female[0];
        let y = recs[0].count_female;
        recs[0].count_female += 1;
        let bumped = Dataset::from_records(recs).unwrap();
        let d = log_posterior(&s, &bumped, &priors).l4 - log_posterior(&s, &data, &priors).l4;
        assert!((d - (lambda / (y as f64 + 1.0)).ln()).abs() < 1e-10);
    }
}
