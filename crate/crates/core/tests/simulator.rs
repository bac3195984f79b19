use countability::density::lognormal_ln_pdf;
use countability::likelihood::{breeding_locations, log_breeding_transition, log_harvest_transition, log_truncation_normalizer};
use countability::model::ModelParameters;
use countability::simulator::{
    simulate_observations, simulate_trajectory, HarvestPolicy, InitialState, SimulationSpec,
};

fn params(tau: f64, omega: f64) -> ModelParameters {
    ModelParameters { r: 0.4f64.ln(), k: 0.0, tau, omega, nu: 1.0, a_bar: 2e-3, a_t: vec![] }
}

fn spec(years: usize, harvest: Vec<[f64; 2]>, p: ModelParameters, seed: u64) -> SimulationSpec {
    SimulationSpec {
        first_year: 1,
        years,
        params: p,
        initial: InitialState { female: 500.0, male: 400.0 },
        harvest: HarvestPolicy::Fixed(harvest),
        effort: vec![100.0; years],
        surveys: vec![],
        seed,
    }
}

#[test]
fn mean_log_abundance_matches_location() {
    // no harvest after the first year, so no truncation and exact log-normal algebra:
    // E ln N(t) = ln(N1 - H1) + (t - 1) ln(1 + e^r)
    let p = params(0.4, 1.0);
    let n = 10_000;
    let mut sums = [0.0f64; 2];
    let mut sq = [0.0f64; 2];
    for seed in 0..n {
        let t = simulate_trajectory(&spec(3, vec![[100.0, 50.0], [0.0, 0.0], [0.0, 0.0]], p.clone(), seed)).unwrap();
        for (j, year) in [1usize, 2].iter().enumerate() {
            let x = t.pre_hunt(*year).0.ln();
            sums[j] += x;
            sq[j] += x * x;
        }
    }
    for (j, steps) in [1.0, 2.0].iter().enumerate() {
        let expected = 400f64.ln() + steps * (1.0 + p.r.exp()).ln();
        let mean = sums[j] / n as f64;
        let var = sq[j] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "year {}: {mean} vs {expected} (se {se})", j + 2);
    }
}

#[test]
fn mean_count_matches_countability_times_effort_times_abundance() {
    let n = 10_000;
    for omega in [1.0, 0.5] {
        let p = params(0.4, omega);
        let s = spec(1, vec![[0.0, 0.0]], p.clone(), 0);
        let traj = simulate_trajectory(&s).unwrap();
        let sigma_a = (1.0 - omega) * p.tau;
        // log-normal countability with median a_bar has mean a_bar exp(sigma_a^2 / 2)
        let expected = p.a_bar * (0.5 * sigma_a * sigma_a).exp() * 100.0 * traj.pre_hunt(0).0;
        let counts: Vec<f64> = (0..n)
            .map(|seed| {
                let s = SimulationSpec { seed, ..s.clone() };
                simulate_observations(&traj, &s).unwrap().records[0].count_female as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "omega {omega}: {mean} vs {expected} (se {se})");
    }
}

/// Female-only log-density of (post-hunt year 1, pre-hunt year 2) on the log
/// scale, assembled from the likelihood's transition and truncation terms.
fn female_log_density(p: &ModelParameters, pre1: (f64, f64), h1: f64, h2: f64, u: f64, v: f64) -> f64 {
    let male_post = 350.0;
    let post1 = (u.exp(), male_post);
    let sigma = p.tau * p.omega;
    // the male factors do not depend on the female path below; remove them exactly
    let harvest_male = lognormal_ln_pdf(male_post, pre1.1.ln(), 0.5 * sigma * p.nu);
    let (_, mu_m) = breeding_locations(post1, p);
    let male_next = mu_m.exp();
    let breeding_male = lognormal_ln_pdf(male_next, mu_m, 0.75f64.sqrt() * sigma * p.nu);
    let harvest = log_harvest_transition(pre1, post1, (h1, 0.0), p, None) - harvest_male;
    let breeding = log_breeding_transition(post1, (v.exp(), male_next), p) - breeding_male;
    let truncation = log_truncation_normalizer(post1, (h2, 0.0), p);
    // change of variables to (u, v) = (ln post, ln pre)
    harvest + breeding + truncation + u + v
}

#[test]
fn simulator_frequencies_match_likelihood_density() {
    let p = params(0.3, 1.0);
    let (h1, h2) = (100.0f64, 500.0f64);
    let pre1 = (500.0, 400.0);
    let n = 200_000u64;
    let (u0, u1) = (400f64.ln() - 0.45, 400f64.ln() + 0.45);
    let (v0, v1) = (h2.ln(), 560f64.ln() + 0.8);
    let bins = 6;
    let bin = |x: f64, lo: f64, hi: f64| -> Option<usize> {
        if x < lo || x >= hi {
            None
        } else {
            Some(((x - lo) / (hi - lo) * bins as f64) as usize)
        }
    };

    let mut counts = vec![0u64; bins * bins];
    for seed in 0..n {
        let t = simulate_trajectory(&spec(2, vec![[h1, 0.0], [h2, 0.0]], p.clone(), seed)).unwrap();
        assert!(t.pre_hunt(1).0 > h2);
        if let (Some(i), Some(j)) = (bin(t.post_hunt(0).0.ln(), u0, u1), bin(t.pre_hunt(1).0.ln(), v0, v1)) {
            counts[i * bins + j] += 1;
        }
    }

    // midpoint rule on a 40 x 40 sub-grid per bin
    let sub = 40;
    let (du, dv) = ((u1 - u0) / (bins * sub) as f64, (v1 - v0) / (bins * sub) as f64);
    let mut worst = 0.0f64;
    for i in 0..bins {
        for j in 0..bins {
            let mut prob = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let u = u0 + ((i * sub + a) as f64 + 0.5) * du;
                    let v = v0 + ((j * sub + b) as f64 + 0.5) * dv;
                    prob += female_log_density(&p, pre1, h1, h2, u, v).exp() * du * dv;
                }
            }
            let observed = counts[i * bins + j] as f64 / n as f64;
            let se = (prob * (1.0 - prob) / n as f64).sqrt().max(1e-9);
            worst = worst.max((observed - prob).abs() / se);
            assert!((observed - prob).abs() < 4.5 * se + 1e-5, "bin ({i}, {j}): {observed} vs {prob}");
        }
    }
    assert!(worst < 4.5, "max z {worst}");
    let covered = counts.iter().sum::<u64>() as f64 / n as f64;
    assert!(covered > 0.8, "window holds only {covered} of the mass");
}
