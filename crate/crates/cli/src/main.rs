//! `countability`: simulate datasets, fit the model and ask what-if harvest questions.
//!
//! Exit codes: 0 success, 1 replay mismatch, 2 validation or input error,
//! 3 numerical failure, 4 infeasible strategy.

mod manifest;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use countability::io::{read_dataset, read_draws, write_dataset};
use countability::likelihood::grid_label;
use countability::management::{
    harvest_sweep, solve_harvest, write_sweep_csv, DemographicDraw, PredictiveSampler, StrategyKind, StrategySpec,
    SweepRow,
};
use countability::model::{ModelConfig, ModelParameters, PopulationTrajectory, PriorConfig, Variant};
use countability::sampler::{decode_draws, run_chains, summarize, write_trace_csv, DecodedDraws, SamplerConfig, Summary};
use countability::simulator::{simulate, SimulationSpec};
use countability::{Error, StateLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use manifest::{now, sha256_file, RunManifest, MANIFEST_FILE};

const THREADS_ENV: &str = "COUNTABILITY_THREADS";

#[derive(Debug, Parser)]
#[command(name = "countability", version, about = "Abundance estimation from index counts with varying countability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a simulation spec (JSON).
    Simulate(SimulateArgs),
    /// Fit the model to a dataset CSV.
    Fit(FitArgs),
    /// Solve a harvest strategy from posterior draws and write the harvest sweep.
    Whatif(WhatifArgs),
    /// Re-run the command recorded in a manifest and compare artifact hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, env = "COUNTABILITY_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Prior hyperparameters (JSON); defaults when omitted.
    #[arg(long)]
    priors: Option<PathBuf>,
    /// Sampler settings (JSON); defaults when omitted.
    #[arg(long)]
    sampler: Option<PathBuf>,
    #[arg(long, default_value = "variable")]
    variant: Variant,
    #[arg(long)]
    density_dependence: bool,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, env = "COUNTABILITY_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct WhatifArgs {
    /// Draws file, optionally labelled: `[LABEL=]PATH`. Repeat to compare fits.
    #[arg(long, required = true)]
    draws: Vec<String>,
    /// `stable`, `hunter` or `forestry`.
    #[arg(long)]
    kind: StrategyKind,
    /// Target female population next year.
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = 0.9)]
    prob: f64,
    /// Current female population.
    #[arg(long)]
    pop: f64,
    /// Simulated futures per posterior draw.
    #[arg(long, default_value_t = 10)]
    n_rep: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use the posterior median of each parameter instead of the full draws.
    #[arg(long)]
    plug_in: bool,
    /// Harvest spacing of the sweep (default: pop / 50).
    #[arg(long)]
    sweep_step: Option<f64>,
    #[arg(long, env = "COUNTABILITY_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Input(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Mismatch(_) => 1,
            Failure::Input(_) => 2,
            Failure::Core(e) => match e {
                Error::NonFinite | Error::Initialization { .. } | Error::InfeasibleHarvest { .. } => 3,
                Error::InfeasibleStrategy(_) => 4,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Input(m) | Failure::Mismatch(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome<T> = Result<T, Failure>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", path.display()))
}

fn absolute(p: &Path) -> Outcome<PathBuf> {
    std::path::absolute(p).map_err(io_err(p))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Common bookkeeping for one command run.
struct Run {
    command: &'static str,
    args: Vec<String>,
    out: PathBuf,
    config_paths: Vec<PathBuf>,
    data_paths: Vec<PathBuf>,
    seed: Option<u64>,
    artifacts: Vec<&'static str>,
    started_at: String,
}

impl Run {
    fn new(command: &'static str, args: Vec<String>, out: PathBuf) -> Outcome<Self> {
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(Self {
            command,
            args,
            out,
            config_paths: vec![],
            data_paths: vec![],
            seed: None,
            artifacts: vec![],
            started_at: now(),
        })
    }

    fn path(&mut self, name: &'static str) -> PathBuf {
        self.artifacts.push(name);
        self.out.join(name)
    }

    fn finish(self) -> Outcome<RunManifest> {
        let mut artifacts = BTreeMap::new();
        for name in &self.artifacts {
            let p = self.out.join(name);
            artifacts.insert(name.to_string(), sha256_file(&p).map_err(io_err(&p))?);
        }
        let mut input_hashes = BTreeMap::new();
        for p in self.config_paths.iter().chain(&self.data_paths) {
            input_hashes.insert(p.display().to_string(), sha256_file(p).map_err(io_err(p))?);
        }
        let manifest = RunManifest {
            command: self.command.into(),
            args: self.args,
            config_paths: self.config_paths,
            data_paths: self.data_paths,
            input_hashes,
            seed: self.seed,
            output_dir: self.out,
            artifacts,
            started_at: self.started_at,
            finished_at: now(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        manifest.write().map_err(io_err(&manifest.output_dir))?;
        Ok(manifest)
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    params: &'a ModelParameters,
    trajectory: &'a PopulationTrajectory,
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome<RunManifest> {
    let spec_path = absolute(&a.spec)?;
    let out = absolute(&a.out)?;
    let args = vec!["simulate".into(), "--spec".into(), path_arg(&spec_path), "--out".into(), path_arg(&out)];
    let mut run = Run::new("simulate", args, out)?;
    run.config_paths.push(spec_path.clone());

    let spec: SimulationSpec = read_json(&spec_path)?;
    run.seed = Some(spec.seed);
    let (traj, obs) = simulate(&spec)?;
    let data = obs.dataset()?;
    write_dataset(create(&run.path("data.csv"))?, &data)?;
    let params = ModelParameters { a_t: obs.a_t.clone(), ..spec.params.clone() };
    write_json(&run.path("truth.json"), &Truth { params: &params, trajectory: &traj })?;
    println!("simulated {} years into {}", data.years(), run.out.display());
    run.finish()
}

#[derive(Serialize)]
struct FitSummary<'a> {
    variant: Variant,
    density_dependence: bool,
    sampler: &'a SamplerConfig,
    priors: &'a PriorConfig,
    diagnostics: &'a Summary,
}

fn cmd_fit(a: &FitArgs) -> Outcome<RunManifest> {
    let data_path = absolute(&a.data)?;
    let out = absolute(&a.out)?;
    let priors_path = a.priors.as_deref().map(absolute).transpose()?;
    let sampler_path = a.sampler.as_deref().map(absolute).transpose()?;

    let mut args = vec!["fit".into(), "--data".into(), path_arg(&data_path)];
    if let Some(p) = &priors_path {
        args.extend(["--priors".into(), path_arg(p)]);
    }
    if let Some(p) = &sampler_path {
        args.extend(["--sampler".into(), path_arg(p)]);
    }
    args.extend(["--variant".into(), a.variant.to_string()]);
    if a.density_dependence {
        args.push("--density-dependence".into());
    }
    for (flag, v) in [("--chains", a.chains), ("--burnin", a.burnin), ("--iterations", a.iterations), ("--thin", a.thin)] {
        if let Some(v) = v {
            args.extend([flag.into(), v.to_string()]);
        }
    }
    if let Some(s) = a.seed {
        args.extend(["--seed".into(), s.to_string()]);
    }
    args.extend(["--out".into(), path_arg(&out)]);

    let mut run = Run::new("fit", args, out)?;
    run.data_paths.push(data_path.clone());
    run.config_paths.extend(priors_path.iter().cloned());
    run.config_paths.extend(sampler_path.iter().cloned());

    let data = read_dataset(File::open(&data_path).map_err(io_err(&data_path))?)?;
    let priors: PriorConfig = match &priors_path {
        Some(p) => read_json(p)?,
        None => PriorConfig::default(),
    };
    let mut config: SamplerConfig = match &sampler_path {
        Some(p) => read_json(p)?,
        None => SamplerConfig::default(),
    };
    if let Some(v) = a.chains {
        config.chains = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.burnin {
        config.n_burnin = v;
    }
    if let Some(v) = a.iterations {
        config.n_iterations = v;
    }
    if let Some(v) = a.thin {
        config.thin = v;
    }
    run.seed = Some(config.seed);
    let model = ModelConfig { variant: a.variant, density_dependence: a.density_dependence };

    let chains = run_chains(&data, &priors, &config, model, None)?;
    let layout = StateLayout::new(data.years(), model);
    let decoded: Vec<DecodedDraws> = chains.iter().map(|c| decode_draws(c, layout)).collect();
    let traces: Vec<(u64, &[usize], &DecodedDraws)> =
        chains.iter().zip(&decoded).map(|(c, d)| (c.chain, c.draw_iterations.as_slice(), d)).collect();
    write_trace_csv(create(&run.path("draws.csv"))?, &traces)?;

    let summary = summarize(&decoded, chains.iter().map(|c| c.acceptance_rate).collect());
    let resolved = priors.resolved(&data);
    write_json(
        &run.path("summary.json"),
        &FitSummary {
            variant: a.variant,
            density_dependence: a.density_dependence,
            sampler: &config,
            priors: &resolved,
            diagnostics: &summary,
        },
    )?;
    write_states(&run.path("states.csv"), &data, &summary)?;

    let rates: Vec<String> = summary.acceptance_rates.iter().map(|r| format!("{r:.3}")).collect();
    println!(
        "{} chain(s), {} draws each, acceptance {}; output in {}",
        summary.n_chains,
        summary.draws_per_chain,
        rates.join(", "),
        run.out.display()
    );
    run.finish()
}

/// Per-year posterior summaries of abundances and countabilities.
fn write_states(path: &Path, data: &countability::Dataset, summary: &Summary) -> Outcome<()> {
    let by_name: BTreeMap<&str, &countability::sampler::ParameterSummary> =
        summary.parameters.iter().map(|p| (p.name.as_str(), p)).collect();
    let mut w = csv_writer(path)?;
    let header = ["quantity", "year", "mean", "sd", "q2.5", "q10", "q50", "q90", "q97.5"];
    w.write_record(header).map_err(csv_err)?;
    for (i, rec) in data.records().iter().enumerate() {
        let rows = [
            ("nf_pre", format!("nf[{}]", grid_label(2 * i))),
            ("nf_post", format!("nf[{}]", grid_label(2 * i + 1))),
            ("nm_pre", format!("nm[{}]", grid_label(2 * i))),
            ("nm_post", format!("nm[{}]", grid_label(2 * i + 1))),
            ("a", format!("a[{}]", i + 1)),
        ];
        for (label, name) in rows {
            let p = by_name[name.as_str()];
            let mut rec_out = vec![label.to_string(), rec.year.to_string(), p.mean.to_string(), p.sd.to_string()];
            rec_out.extend(p.quantiles.iter().map(|q| q.to_string()));
            w.write_record(&rec_out).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn csv_writer(path: &Path) -> Outcome<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Core(Error::Csv(e))
}

#[derive(Serialize)]
struct WhatifResult {
    strategy: StrategySpec,
    n_rep: usize,
    plug_in: bool,
    harvests: BTreeMap<String, f64>,
}

fn cmd_whatif(a: &WhatifArgs) -> Outcome<RunManifest> {
    let out = absolute(&a.out)?;
    let mut inputs = Vec::new();
    for (k, spec) in a.draws.iter().enumerate() {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), p),
            None if a.draws.len() == 1 => ("posterior".to_string(), spec.as_str()),
            None => (format!("posterior{}", k + 1), spec.as_str()),
        };
        inputs.push((label, absolute(Path::new(path))?));
    }
    let strategy = StrategySpec { kind: a.kind, target: a.target, prob: a.prob, current_female_pop: a.pop };
    strategy.check()?;
    let step = a.sweep_step.unwrap_or(a.pop / 50.0);
    if !(step > 0.0 && step.is_finite()) {
        return Err(Failure::Input("--sweep-step must be positive".into()));
    }

    let mut args = vec!["whatif".to_string()];
    for (label, path) in &inputs {
        args.extend(["--draws".into(), format!("{label}={}", path_arg(path))]);
    }
    args.extend([
        "--kind".into(),
        kind_arg(a.kind).into(),
        "--target".into(),
        a.target.to_string(),
        "--prob".into(),
        a.prob.to_string(),
        "--pop".into(),
        a.pop.to_string(),
        "--n-rep".into(),
        a.n_rep.to_string(),
        "--seed".into(),
        a.seed.to_string(),
    ]);
    if a.plug_in {
        args.push("--plug-in".into());
    }
    args.extend(["--sweep-step".into(), step.to_string(), "--out".into(), path_arg(&out)]);

    let grid: Vec<f64> = (0..).map(|k| k as f64 * step).take_while(|&h| h < a.pop).collect();
    let mut harvests = BTreeMap::new();
    let mut sweeps: Vec<(String, Vec<SweepRow>)> = Vec::new();
    for (label, path) in &inputs {
        let table = read_draws(File::open(path).map_err(io_err(path))?)?;
        let draws = DemographicDraw::from_decoded(&table.draws)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let sampler = if a.plug_in {
            PredictiveSampler::plug_in(&draws, a.n_rep, &mut rng)?
        } else {
            PredictiveSampler::new(draws, a.n_rep, &mut rng)?
        };
        let h = solve_harvest(&sampler, &strategy)?;
        println!("{label}: H={h:.1} ({} strategy, target {}, prob {}, population {})", kind_arg(a.kind), a.target, a.prob, a.pop);
        harvests.insert(label.clone(), h);
        sweeps.push((label.clone(), harvest_sweep(&sampler, a.pop, &grid)?));
    }

    let mut run = Run::new("whatif", args, out)?;
    run.data_paths.extend(inputs.iter().map(|(_, p)| p.clone()));
    run.seed = Some(a.seed);
    let borrowed: Vec<(&str, &[SweepRow])> = sweeps.iter().map(|(l, r)| (l.as_str(), r.as_slice())).collect();
    write_sweep_csv(create(&run.path("sweep.csv"))?, &borrowed)?;
    write_json(
        &run.path("result.json"),
        &WhatifResult { strategy, n_rep: a.n_rep, plug_in: a.plug_in, harvests },
    )?;
    run.finish()
}

fn kind_arg(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::Stable => "stable",
        StrategyKind::HunterBiased => "hunter",
        StrategyKind::ForestryBiased => "forestry",
    }
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_replay(a: &ReplayArgs) -> Outcome<RunManifest> {
    let recorded = RunManifest::read(&a.manifest).map_err(Failure::Input)?;
    let mut args = recorded.args.clone();
    if let Some(out) = &a.out {
        let out = absolute(out)?;
        match args.iter().position(|x| x == "--out") {
            Some(i) if i + 1 < args.len() => args[i + 1] = path_arg(&out),
            _ => return Err(Failure::Input("recorded arguments have no --out".into())),
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("countability".to_string()).chain(args))
        .map_err(|e| Failure::Input(format!("recorded arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Failure::Input("a manifest cannot replay another replay".into()));
    }
    let fresh = execute(&cli.command)?;
    let mut mismatches = Vec::new();
    for (name, hash) in &recorded.artifacts {
        match fresh.artifacts.get(name) {
            Some(h) if h == hash => println!("{name}: identical"),
            _ => mismatches.push(name.clone()),
        }
    }
    if mismatches.is_empty() {
        println!("replay reproduced all {} artifact(s)", recorded.artifacts.len());
        Ok(fresh)
    } else {
        Err(Failure::Mismatch(format!("replay differs in: {}", mismatches.join(", "))))
    }
}

fn execute(command: &Command) -> Outcome<RunManifest> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Whatif(a) => cmd_whatif(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var(THREADS_ENV) {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                // only fails if a pool already exists, which cannot happen here
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match execute(&cli.command) {
        Ok(m) => {
            eprintln!("wrote {}", m.output_dir.join(MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
