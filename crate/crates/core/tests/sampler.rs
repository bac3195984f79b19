use countability::model::{ModelConfig, PriorConfig, Variant};
use countability::sampler::{
    decode_draws, default_initial_state, diagnostics, run_sampler, run_chains, ChainOutput, SamplerConfig, Target,
};
use countability::simulator::{simulate, HarvestPolicy, InitialState, SimulationSpec, SurveyPlan};
use countability::{run_chain, Dataset, Error, ModelParameters, StateLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct StdNormal(usize);

impl Target for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

fn gaussian_run(d: usize, iterations: usize, seed: u64) -> ChainOutput {
    let config = SamplerConfig { n_burnin: 4_000, n_iterations: iterations, thin: 1, seed, ..SamplerConfig::default() };
    let names = (0..d).map(|i| format!("x{i}")).collect();
    run_sampler(&StdNormal(d), &config, vec![1.0; d], names, &mut ChaCha8Rng::seed_from_u64(seed), 0).unwrap()
}

#[test]
fn moment_error_shrinks_like_inverse_root_ess() {
    for d in [1, 5, 20] {
        let mut points = Vec::new();
        for iterations in [1_000, 4_000, 16_000, 64_000] {
            let (mut sq_err, mut ess) = (0.0, 0.0);
            let reps = 12;
            for seed in 0..reps {
                let out = gaussian_run(d, iterations, 100 + seed);
                let summary = diagnostics(std::slice::from_ref(&out));
                for p in &summary.parameters {
                    sq_err += p.mean * p.mean;
                    ess += p.ess.unwrap();
                }
            }
            let k = (reps as usize * d) as f64;
            points.push(((ess / k).ln(), (sq_err / k).sqrt().ln()));
        }
        let n = points.len() as f64;
        let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / n, points.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.5).abs() < 0.15, "d = {d}: slope {slope}");
    }
}

fn small_dataset() -> Dataset {
    let spec = SimulationSpec {
        first_year: 2000,
        years: 5,
        params: ModelParameters { r: -0.8, k: 0.0, tau: 0.3, omega: 0.5, nu: 1.0, a_bar: 5e-4, a_t: vec![] },
        initial: InitialState { female: 600.0, male: 450.0 },
        harvest: HarvestPolicy::Proportional { female: 0.3, male: 0.3 },
        effort: vec![1000.0; 5],
        surveys: vec![SurveyPlan { year_index: 2, sd_log: 0.15 }],
        seed: 3,
    };
    simulate(&spec).unwrap().1.dataset().unwrap()
}

fn short_config(seed: u64, chains: usize) -> SamplerConfig {
    SamplerConfig { n_burnin: 1_000, n_iterations: 2_000, thin: 4, seed, chains, ..SamplerConfig::default() }
}

#[test]
fn model_fit_is_seeded_and_bookkept() {
    let data = small_dataset();
    let model = ModelConfig { variant: Variant::Variable, density_dependence: true };
    let a = run_chain(&data, &PriorConfig::default(), &short_config(5, 1), model, None).unwrap();
    let b = run_chain(&data, &PriorConfig::default(), &short_config(5, 1), model, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.draws.len(), 2_000 / 4);
    assert!((0.0..=1.0).contains(&a.acceptance_rate));
    let decoded = decode_draws(&a, StateLayout::new(5, model));
    assert!(decoded.column("k").unwrap().iter().all(|&k| k > 0.0));
}

#[test]
fn first_parallel_chain_equals_single_chain() {
    let data = small_dataset();
    let model = ModelConfig { variant: Variant::Fixed, density_dependence: false };
    let single = run_chain(&data, &PriorConfig::default(), &short_config(9, 1), model, None).unwrap();
    let many = run_chains(&data, &PriorConfig::default(), &short_config(9, 3), model, None).unwrap();
    assert_eq!(many.len(), 3);
    assert_eq!(many[0], single);
    assert_ne!(many[1].draws, many[0].draws);
    let summary = diagnostics(&many);
    assert!(summary.parameters.iter().all(|p| p.psrf.is_some() && p.split_psrf.is_some()));
}

#[test]
fn impossible_start_reports_a_dump() {
    let data = small_dataset();
    let model = ModelConfig { variant: Variant::Variable, density_dependence: false };
    let mut init = default_initial_state(&data, &PriorConfig::default(), model);
    // pre-hunt females far below the year's harvest
    init.values[init.layout.log_n_female(0)] = 0.0;
    match run_chain(&data, &PriorConfig::default(), &short_config(1, 1), model, Some(&init)) {
        Err(Error::Initialization { attempts, dump }) => {
            assert_eq!(attempts, 100);
            assert!(dump.contains("breakdown"));
        }
        other => panic!("expected an initialization error, got {other:?}"),
    }
}
