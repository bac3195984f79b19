//! Domain types of the population model.
//!
//! The latent state lives on a half-year grid. For year `t` (1-based) the
//! pre-hunt abundance sits at grid time `t` and the post-hunt abundance at
//! `t + 1/2`. Breeding moves the population from `t - 1/2` to `t`, hunting
//! from `t` to `t + 1/2`.
//!
//! Variability is parameterized by a total scale `tau`, a split `omega`
//! between process noise and countability noise, and a male/female ratio
//! `nu`:
//!
//! ```text
//! sigma_f = omega * tau
//! sigma_m = omega * tau * nu
//! sigma_a = (1 - omega) * tau
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Share of the process variance carried by the breeding step (nine of twelve months).
pub const BREEDING_FRACTION: f64 = 0.75;
/// Share of the process variance carried by the hunting step.
pub const HARVEST_FRACTION: f64 = 0.25;

/// Latent female and male abundances on the half-year grid.
///
/// Entry `2 * i` is the pre-hunt state of year `i + 1`, entry `2 * i + 1`
/// the post-hunt state of the same year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrajectory {
    pub n_female: Vec<f64>,
    pub n_male: Vec<f64>,
}

impl PopulationTrajectory {
    pub fn new(n_female: Vec<f64>, n_male: Vec<f64>) -> Result<Self> {
        if n_female.len() != n_male.len() || n_female.is_empty() || !n_female.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs two grid points per year for both sexes (got {} female, {} male)",
                n_female.len(),
                n_male.len()
            )));
        }
        if n_female
            .iter()
            .chain(n_male.iter())
            .any(|&n| !(n > 0.0 && n.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "abundances must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { n_female, n_male })
    }

    pub fn years(&self) -> usize {
        self.n_female.len() / 2
    }

    /// Grid times `1, 1.5, 2, ..., T + 0.5`.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_female.len()).map(|g| 1.0 + 0.5 * g as f64).collect()
    }

    /// Pre-hunt `(female, male)` abundance of year index `i` (0-based).
    pub fn pre_hunt(&self, i: usize) -> (f64, f64) {
        (self.n_female[2 * i], self.n_male[2 * i])
    }

    /// Post-hunt `(female, male)` abundance of year index `i` (0-based).
    pub fn post_hunt(&self, i: usize) -> (f64, f64) {
        (self.n_female[2 * i + 1], self.n_male[2 * i + 1])
    }
}

/// Which countability model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Annual countability `a_t` drawn around the mean `a_bar`.
    #[default]
    Variable,
    /// One countability `a` for every year; `omega` is pinned to 1.
    Fixed,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Variable => "variable",
            Variant::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variable" | "variable_a" => Ok(Variant::Variable),
            "fixed" | "fixed_a" => Ok(Variant::Fixed),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected `variable` or `fixed`)"
            ))),
        }
    }
}

/// Structural choices of the fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Whether the density-dependence parameter `k` is estimated. When off, `k = 0`.
    pub density_dependence: bool,
}

/// Demographic and observation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParameters {
    pub r: f64,
    pub k: f64,
    pub tau: f64,
    pub omega: f64,
    pub nu: f64,
    pub a_bar: f64,
    /// Per-year countabilities; empty in the fixed model.
    #[serde(default)]
    pub a_t: Vec<f64>,
}

impl ModelParameters {
    pub fn variances(&self) -> Result<Variances> {
        derive_variances(self.tau, self.omega, self.nu)
    }

    /// Recruitment rate for a post-hunt female abundance.
    pub fn recruitment(&self, n_female: f64) -> f64 {
        recruitment_rate(self.r, self.k, n_female)
    }

    pub fn check(&self) -> Result<()> {
        self.variances()?;
        if !self.r.is_finite() {
            return Err(Error::InvalidArgument("r must be finite".into()));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument("k must be nonnegative".into()));
        }
        if !(self.a_bar > 0.0 && self.a_bar.is_finite()) {
            return Err(Error::InvalidArgument("a_bar must be positive".into()));
        }
        if self.a_t.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("every a_t must be positive".into()));
        }
        Ok(())
    }
}

/// Standard deviations implied by `(tau, omega, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub sigma_f: f64,
    pub sigma_m: f64,
    pub sigma_a: f64,
}

/// Maps the interpretable scale parameters onto the three standard deviations.
pub fn derive_variances(tau: f64, omega: f64, nu: f64) -> Result<Variances> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidArgument(format!("omega must lie in [0, 1], got {omega}")));
    }
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("nu must be nonnegative, got {nu}")));
    }
    Ok(Variances {
        sigma_f: omega * tau,
        sigma_m: omega * tau * nu,
        sigma_a: (1.0 - omega) * tau,
    })
}

/// `exp(r - k ln n_female)`: per-female recruitment, damped by density when `k > 0`.
pub fn recruitment_rate(r: f64, k: f64, n_female: f64) -> f64 {
    if k == 0.0 {
        return r.exp();
    }
    (r - k * n_female.ln()).exp()
}

/// Reported unbiased estimate of the post-hunt population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub est_female: f64,
    pub est_male: f64,
    /// Standard deviation of the estimate on the log scale.
    pub sd_log: f64,
}

/// Everything known about one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRecord {
    pub year: i32,
    pub count_female: u64,
    pub count_male: u64,
    pub effort: f64,
    pub harvest_female: f64,
    pub harvest_male: f64,
    pub survey: Option<Survey>,
}

/// A validated dataset: one record per consecutive year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<YearRecord>,
}

impl Dataset {
    pub fn records(&self) -> &[YearRecord] {
        &self.records
    }

    pub fn years(&self) -> usize {
        self.records.len()
    }

    pub fn year(&self, i: usize) -> &YearRecord {
        &self.records[i]
    }

    pub fn survey_count(&self) -> usize {
        self.records.iter().filter(|r| r.survey.is_some()).count()
    }

    /// Builds a dataset from per-year records, running the same checks as
    /// [`validate_dataset`].
    pub fn from_records(records: Vec<YearRecord>) -> Result<Self> {
        let mut raw = RawDataset::default();
        for r in records {
            raw.index.push(IndexRecord {
                year: r.year,
                count_female: r.count_female,
                count_male: r.count_male,
                effort: r.effort,
            });
            raw.harvest.push(HarvestRecord {
                year: r.year,
                harvest_female: r.harvest_female,
                harvest_male: r.harvest_male,
            });
            if let Some(s) = r.survey {
                raw.surveys.push(SurveyRecord { year: r.year, survey: s });
            }
        }
        validate_dataset(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub year: i32,
    pub count_female: u64,
    pub count_male: u64,
    pub effort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestRecord {
    pub year: i32,
    pub harvest_female: f64,
    pub harvest_male: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub year: i32,
    pub survey: Survey,
}

/// Unchecked input, typically straight from a file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub index: Vec<IndexRecord>,
    pub harvest: Vec<HarvestRecord>,
    pub surveys: Vec<SurveyRecord>,
}

/// Checks a raw dataset and assembles it into consecutive yearly records.
///
/// All violations are collected; the error lists each with its year and field.
pub fn validate_dataset(raw: RawDataset) -> Result<Dataset> {
    let mut problems = Vec::new();
    let mut bad = |year: i32, field: &'static str, message: String| {
        problems.push(Violation { year, field, message })
    };

    if raw.index.is_empty() {
        bad(0, "index", "dataset contains no years".into());
    }

    let mut index = raw.index.clone();
    index.sort_by_key(|r| r.year);
    for w in index.windows(2) {
        if w[0].year == w[1].year {
            bad(w[1].year, "year", "duplicate index record".into());
        } else if w[1].year != w[0].year + 1 {
            for missing in w[0].year + 1..w[1].year {
                bad(missing, "year", "missing year between index records".into());
            }
        }
    }
    for r in &index {
        if !(r.effort > 0.0 && r.effort.is_finite()) {
            bad(r.year, "effort", format!("effort must be positive, got {}", r.effort));
        }
    }

    let has_index = |y: i32| index.iter().any(|r| r.year == y);
    let mut harvest_years = Vec::new();
    for h in &raw.harvest {
        if !has_index(h.year) {
            bad(h.year, "harvest", "harvest recorded for a year with no index record".into());
        }
        if harvest_years.contains(&h.year) {
            bad(h.year, "harvest", "duplicate harvest record".into());
        }
        harvest_years.push(h.year);
        for (field, v) in [("harvest_f", h.harvest_female), ("harvest_m", h.harvest_male)] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(h.year, field, format!("harvest must be nonnegative, got {v}"));
            }
        }
    }
    for r in &index {
        if !harvest_years.contains(&r.year) {
            bad(r.year, "harvest", "no harvest record for this year".into());
        }
    }

    let mut survey_years = Vec::new();
    for s in &raw.surveys {
        if !has_index(s.year) {
            bad(s.year, "survey", "survey refers to a year with no index record".into());
        }
        if survey_years.contains(&s.year) {
            bad(s.year, "survey", "duplicate survey record".into());
        }
        survey_years.push(s.year);
        for (field, v) in [
            ("survey_f", s.survey.est_female),
            ("survey_m", s.survey.est_male),
            ("survey_sd_log", s.survey.sd_log),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad(s.year, field, format!("must be positive, got {v}"));
            }
        }
    }

    if !problems.is_empty() {
        return Err(Error::InvalidDataset(problems));
    }

    let records = index
        .into_iter()
        .map(|r| {
            let h = raw.harvest.iter().find(|h| h.year == r.year).expect("checked above");
            YearRecord {
                year: r.year,
                count_female: r.count_female,
                count_male: r.count_male,
                effort: r.effort,
                harvest_female: h.harvest_female,
                harvest_male: h.harvest_male,
                survey: raw.surveys.iter().find(|s| s.year == r.year).map(|s| s.survey),
            }
        })
        .collect();
    Ok(Dataset { records })
}

/// Hyperparameters of every prior in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Rate of the exponential prior on `tau`.
    pub beta_tau: f64,
    pub alpha_b: f64,
    pub beta_b: f64,
    /// Shape and rate of the gamma prior on `nu`.
    pub alpha_nu: f64,
    pub beta_nu: f64,
    /// Normal prior on the mean countability (or on `a` in the fixed model).
    pub mu_abar: f64,
    pub sigma_abar: f64,
    pub mu_r: f64,
    pub sigma_r: f64,
    /// Rate of the exponential prior on `k`.
    pub beta_k: f64,
    /// Log-scale location of the first-year abundance prior, shared by both sexes.
    /// `None` centres it on the first index count scaled by `mu_abar` and effort.
    pub mu_n0: Option<f64>,
    pub sigma_n0: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta_tau: 1.0,
            alpha_b: 1.0,
            beta_b: 1.0,
            alpha_nu: 4.0,
            beta_nu: 4.0,
            mu_abar: 1e-3,
            sigma_abar: 1e-3,
            mu_r: -1.0,
            sigma_r: 1.0,
            beta_k: 10.0,
            mu_n0: None,
            sigma_n0: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("beta_tau", self.beta_tau),
            ("alpha_b", self.alpha_b),
            ("beta_b", self.beta_b),
            ("alpha_nu", self.alpha_nu),
            ("beta_nu", self.beta_nu),
            ("sigma_abar", self.sigma_abar),
            ("sigma_r", self.sigma_r),
            ("beta_k", self.beta_k),
            ("sigma_n0", self.sigma_n0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("prior {name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu_abar", self.mu_abar), ("mu_r", self.mu_r)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("prior {name} must be finite")));
            }
        }
        if let Some(m) = self.mu_n0 {
            if !m.is_finite() {
                return Err(Error::InvalidArgument("prior mu_n0 must be finite".into()));
            }
        }
        Ok(())
    }

    /// Returns a copy with `mu_n0` filled in from the data when unset.
    pub fn resolved(&self, data: &Dataset) -> PriorConfig {
        let mut p = self.clone();
        if p.mu_n0.is_none() {
            let first = data.year(0);
            let count = 0.5 * (first.count_female + first.count_male) as f64;
            p.mu_n0 = Some((count.max(1.0) / (self.mu_abar * first.effort)).ln());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn variances_at_zero_tau_are_zero() {
        let v = derive_variances(0.0, 0.3, 2.0).unwrap();
        assert_eq!((v.sigma_f, v.sigma_m, v.sigma_a), (0.0, 0.0, 0.0));
    }

    #[test]
    fn omega_one_puts_everything_in_process_noise() {
        let v = derive_variances(1.0, 1.0, 2.0).unwrap();
        assert_eq!((v.sigma_f, v.sigma_m, v.sigma_a), (1.0, 2.0, 0.0));
    }

    #[test]
    fn variances_direct_arithmetic() {
        let v = derive_variances(0.5, 0.4, 1.0).unwrap();
        assert!(close(v.sigma_f, 0.2));
        assert!(close(v.sigma_m, 0.2));
        assert!(close(v.sigma_a, 0.3));
    }

    #[test]
    fn variances_reject_out_of_domain() {
        assert!(derive_variances(-0.1, 0.5, 1.0).is_err());
        assert!(derive_variances(1.0, 1.5, 1.0).is_err());
        assert!(derive_variances(1.0, -0.5, 1.0).is_err());
        assert!(derive_variances(1.0, 0.5, -1.0).is_err());
        assert!(derive_variances(f64::NAN, 0.5, 1.0).is_err());
    }

    #[test]
    fn recruitment_examples() {
        assert_eq!(recruitment_rate(0.0, 0.0, 37.0), 1.0);
        assert!((recruitment_rate(0.5, 0.0, 100.0) - 1.648_721_270_700_128).abs() < 1e-12);
        let expected = (0.5f64 - 0.1 * 100f64.ln()).exp();
        assert!((recruitment_rate(0.5, 0.1, 100.0) - expected).abs() < 1e-12);
        assert!((recruitment_rate(0.5, 0.1, 100.0) - 1.04028).abs() < 1e-5);
    }

    #[test]
    fn recruitment_decreases_with_density() {
        let a = recruitment_rate(0.3, 0.2, 100.0);
        let b = recruitment_rate(0.3, 0.2, 200.0);
        assert!(b < a);
    }

    #[test]
    fn trajectory_rejects_odd_or_nonpositive() {
        assert!(PopulationTrajectory::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(PopulationTrajectory::new(vec![1.0, 0.0], vec![1.0, 2.0]).is_err());
        let t = PopulationTrajectory::new(vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(t.grid(), vec![1.0, 1.5, 2.0, 2.5]);
        assert_eq!(t.pre_hunt(1), (3.0, 7.0));
        assert_eq!(t.post_hunt(0), (2.0, 6.0));
    }

    fn raw(years: std::ops::Range<i32>) -> RawDataset {
        let mut raw = RawDataset::default();
        for y in years {
            raw.index.push(IndexRecord { year: y, count_female: 100, count_male: 80, effort: 1000.0 });
            raw.harvest.push(HarvestRecord { year: y, harvest_female: 50.0, harvest_male: 40.0 });
        }
        raw
    }

    #[test]
    fn well_formed_dataset_is_accepted() {
        let mut r = raw(2000..2014);
        r.surveys.push(SurveyRecord {
            year: 2005,
            survey: Survey { est_female: 400.0, est_male: 300.0, sd_log: 0.1 },
        });
        let d = validate_dataset(r).unwrap();
        assert_eq!(d.years(), 14);
        assert_eq!(d.survey_count(), 1);
        assert!(d.year(5).survey.is_some());
    }

    #[test]
    fn zero_effort_names_the_year() {
        let mut r = raw(2000..2014);
        r.index[3].effort = 0.0;
        match validate_dataset(r) {
            Err(Error::InvalidDataset(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].year, 2003);
                assert_eq!(v[0].field, "effort");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn survey_outside_index_years_is_rejected() {
        let mut r = raw(2000..2004);
        r.surveys.push(SurveyRecord {
            year: 2010,
            survey: Survey { est_female: 400.0, est_male: 300.0, sd_log: 0.1 },
        });
        match validate_dataset(r) {
            Err(Error::InvalidDataset(v)) => {
                assert!(v.iter().any(|x| x.year == 2010 && x.field == "survey"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn gaps_and_missing_harvest_are_reported() {
        let mut r = raw(2000..2006);
        r.index.remove(2);
        r.harvest.remove(2);
        r.harvest.remove(3);
        let Err(Error::InvalidDataset(v)) = validate_dataset(r) else {
            panic!("expected validation error");
        };
        assert!(v.iter().any(|x| x.year == 2002 && x.field == "year"));
        assert!(v.iter().any(|x| x.year == 2004 && x.field == "harvest"));
    }

    #[test]
    fn prior_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<PriorConfig>(r#"{"beta_tua": 2.0}"#);
        assert!(err.is_err());
        let ok: PriorConfig = serde_json::from_str(r#"{"beta_tau": 2.0}"#).unwrap();
        assert_eq!(ok.beta_tau, 2.0);
        assert_eq!(ok.alpha_b, 1.0);
    }

    proptest! {
        #[test]
        fn variances_are_homogeneous_in_tau(tau in 0.0..10.0f64, omega in 0.0..=1.0f64, nu in 0.0..5.0f64, c in 0.0..10.0f64) {
            let a = derive_variances(tau, omega, nu).unwrap();
            let b = derive_variances(c * tau, omega, nu).unwrap();
            prop_assert!((b.sigma_f - c * a.sigma_f).abs() <= 1e-12 * (1.0 + b.sigma_f));
            prop_assert!((b.sigma_m - c * a.sigma_m).abs() <= 1e-12 * (1.0 + b.sigma_m));
            prop_assert!((b.sigma_a - c * a.sigma_a).abs() <= 1e-12 * (1.0 + b.sigma_a));
        }

        #[test]
        fn female_and_countability_scales_sum_to_tau(tau in 0.0..10.0f64, omega in 0.0..=1.0f64, nu in 0.0..5.0f64) {
            let v = derive_variances(tau, omega, nu).unwrap();
            prop_assert!((v.sigma_f + v.sigma_a - tau).abs() <= 1e-12 * (1.0 + tau));
        }

        #[test]
        fn constant_recruitment_ignores_density(r in -3.0..3.0f64, n1 in 1e-3..1e6f64, n2 in 1e-3..1e6f64) {
            prop_assert_eq!(recruitment_rate(r, 0.0, n1), recruitment_rate(r, 0.0, n2));
        }
    }
}
