//! `ising-trw`: command-line pipeline for generating Ising models, computing
//! their statistics and reconstructing couplings from data.
//!
//! Exit codes: 0 on success, 1 on domain, convergence and I/O errors (with a
//! JSON object on stderr), 2 on usage errors.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use ising_trw::bench::{delta_j, run_sweep, SweepConfig};
use ising_trw::exact::exact_moments;
use ising_trw::inverse::{invert_all, recover_biases};
use ising_trw::learn::{gradient_ascent, Estimator, LearnConfig};
use ising_trw::model::generate_model;
use ising_trw::sampler::{gibbs_sample, statistics};
use ising_trw::spikes::{bin_spikes, spike_statistics, SpikeTrains, DEFAULT_BIN_WIDTH};
use ising_trw::trw::{trw_solve, SolverOptions};
use ising_trw::{EdgeAppearance, Graph, GraphSpec, IsingError, Method, Model, Regime, Rho, Stats};

#[derive(Debug, Parser)]
#[command(name = "ising-trw", version, about = "Inverse Ising reconstruction with tree-reweighted, Bethe, SM and IP formulas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Draw a random model on a graph.
    Generate(GenerateArgs),
    /// Exact log-partition and moments by enumeration (at most 24 spins).
    Oracle(OracleArgs),
    /// Gibbs samples and their statistics.
    Sample(SampleArgs),
    /// Tree-reweighted upper bound on the log-partition function.
    TrwBound(TrwBoundArgs),
    /// Couplings from means and covariances.
    Invert(InvertArgs),
    /// Boltzmann learning by gradient ascent.
    Learn(LearnArgs),
    /// Reconstruction sweep over a coupling-strength grid.
    Bench(BenchArgs),
    /// Bin a spike-train file into spin statistics.
    Spikes(SpikesArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    /// grid2d:WxH, grid3d:XxYxZ, complete:N, chain:N, cycle:N or tree:N:SEED
    #[arg(long, value_parser = parse_graph)]
    graph: GraphSpec,
    #[arg(long, value_parser = parse_regime)]
    regime: Regime,
    /// Coupling strength ω: J ~ u[0, ω] or u[−ω, ω].
    #[arg(long)]
    omega: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Recorded samples.
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long)]
    seed: u64,
    /// CSV of the recorded spins.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Statistics JSON; printed to stdout when omitted.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions<f64> {
        SolverOptions { tol: self.tol, max_iter: self.max_iter, damping: self.damping, ..SolverOptions::default() }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrwBoundArgs {
    #[arg(long)]
    model: PathBuf,
    /// `uniform`, `bethe` or a JSON file holding one value per edge.
    #[arg(long, default_value = "uniform")]
    rho: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GraphSource {
    /// Graph spec; the edges to reconstruct.
    #[arg(long, value_parser = parse_graph, conflicts_with = "graph_from")]
    graph: Option<GraphSpec>,
    /// Take the graph from a model JSON file.
    #[arg(long)]
    graph_from: Option<PathBuf>,
}

impl GraphSource {
    fn resolve(&self) -> Result<Graph, CliError> {
        match (&self.graph, &self.graph_from) {
            (Some(spec), None) => Ok(spec.build()),
            (None, Some(path)) => Ok(read_model(path)?.graph().clone()),
            _ => Err(CliError::Usage("give exactly one of --graph or --graph-from".into())),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct InvertArgs {
    #[arg(long)]
    stats: PathBuf,
    #[command(flatten)]
    graph: GraphSource,
    /// ip, bethe, sm, trw or all
    #[arg(long, default_value = "all")]
    method: String,
    #[arg(long, default_value = "uniform")]
    rho: String,
    /// Score each estimate with Δ_J against this model's couplings.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also report biases from the self-consistency equation (bethe, trw).
    #[arg(long)]
    biases: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct LearnArgs {
    #[arg(long)]
    stats: PathBuf,
    #[command(flatten)]
    graph: GraphSource,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10_000)]
    updates: usize,
    #[arg(long, default_value_t = 100)]
    mc_steps: usize,
    /// exact or mcmc
    #[arg(long, default_value = "exact")]
    estimator: String,
    #[arg(long)]
    seed: u64,
    /// Stop early once the max gradient component is at most this.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Sweep configuration, JSON or TOML (by extension).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Receives reconstruction.csv and reconstruction.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SpikesArgs {
    #[arg(long)]
    input: PathBuf,
    /// Bin width in seconds.
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    /// CSV of the binned spins.
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// Statistics JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(IsingError),
}

impl From<IsingError> for CliError {
    fn from(e: IsingError) -> Self {
        CliError::Run(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(IsingError::Parse { line: e.line(), message: e.to_string() })
    }
}

type CliResult<T> = Result<T, CliError>;

fn parse_graph(s: &str) -> Result<GraphSpec, String> {
    s.parse().map_err(|e: IsingError| e.to_string())
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: IsingError| e.to_string())
}

/// Provenance written next to every output file as `<file>.manifest.json`.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    config: &'a Command,
    seeds: Value,
    version: &'static str,
    inputs: Vec<&'a Path>,
    outputs: Vec<PathBuf>,
    wall_time_seconds: f64,
}

struct Run<'a> {
    command: &'a Command,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn name(&self) -> &'static str {
        match self.command {
            Command::Generate(_) => "generate",
            Command::Oracle(_) => "oracle",
            Command::Sample(_) => "sample",
            Command::TrwBound(_) => "trw-bound",
            Command::Invert(_) => "invert",
            Command::Learn(_) => "learn",
            Command::Bench(_) => "bench",
            Command::Spikes(_) => "spikes",
        }
    }

    fn seeds(&self) -> Value {
        match self.command {
            Command::Generate(a) => json!({ "model": a.seed }),
            Command::Sample(a) => json!({ "sampler": a.seed }),
            Command::Learn(a) => json!({ "chain": a.seed }),
            _ => json!({}),
        }
    }

    fn inputs(&self) -> Vec<&'a Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self.command {
            Command::Generate(_) => {}
            Command::Oracle(a) => v.push(&a.model),
            Command::Sample(a) => v.push(&a.model),
            Command::TrwBound(a) => v.push(&a.model),
            Command::Invert(a) => {
                v.push(&a.stats);
                v.extend(a.graph.graph_from.as_deref());
                v.extend(a.truth.as_deref());
            }
            Command::Learn(a) => {
                v.push(&a.stats);
                v.extend(a.graph.graph_from.as_deref());
            }
            Command::Bench(a) => v.push(&a.config),
            Command::Spikes(a) => v.push(&a.input),
        }
        v
    }

    /// Writes `content` to `path`, or to stdout when `path` is `None`.
    fn emit(&mut self, path: Option<&Path>, content: &str) -> CliResult<()> {
        match path {
            Some(p) => {
                fs::write(p, content)?;
                log::info!("wrote {}", p.display());
                self.outputs.push(p.to_path_buf());
            }
            None => {
                let mut out = io::stdout().lock();
                out.write_all(content.as_bytes())?;
                if !content.ends_with('\n') {
                    out.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    }

    fn write_manifests(&self) -> CliResult<()> {
        let manifest = RunManifest {
            subcommand: self.name(),
            config: self.command,
            seeds: self.seeds(),
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs(),
            outputs: self.outputs.clone(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        for p in &self.outputs {
            let mut name = p.as_os_str().to_owned();
            name.push(".manifest.json");
            fs::write(PathBuf::from(name), &text)?;
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Run(IsingError::Io(format!("{}: {e}", path.display()))))
}

fn read_model(path: &Path) -> CliResult<Model> {
    Ok(Model::from_json(&read_text(path)?)?)
}

fn read_stats(path: &Path) -> CliResult<Stats> {
    Ok(Stats::from_json(&read_text(path)?)?)
}

fn resolve_rho(spec: &str, graph: &Graph) -> CliResult<Rho> {
    match spec {
        "uniform" => Ok(EdgeAppearance::uniform(graph)?),
        "bethe" => Ok(EdgeAppearance::bethe(graph)),
        path => {
            let values: Vec<f64> = serde_json::from_str(&read_text(Path::new(path))?)?;
            Ok(EdgeAppearance::new(graph, values)?)
        }
    }
}

fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    if s == "all" {
        return Ok(Method::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse::<Method>().map_err(|e| CliError::Usage(e.to_string()))).collect()
}

fn pretty<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn generate(run: &mut Run, a: &GenerateArgs) -> CliResult<()> {
    let model = generate_model::<f64>(a.graph.build(), a.regime, a.omega, a.seed)?;
    run.emit(a.out.as_deref(), &model.to_json())
}

fn oracle(run: &mut Run, a: &OracleArgs) -> CliResult<()> {
    let model = read_model(&a.model)?;
    let ex = exact_moments(&model)?;
    let out = json!({
        "log_partition": ex.log_partition,
        "pair_moments": ex.pair_moments,
        "statistics": serde_json::to_value(ex.to_statistics())?,
    });
    run.emit(a.out.as_deref(), &pretty(&out)?)
}

fn sample(run: &mut Run, a: &SampleArgs) -> CliResult<()> {
    let model = read_model(&a.model)?;
    let thin = a.thin.max(1);
    let set = gibbs_sample(&model, a.samples.saturating_mul(thin), a.burn_in, a.thin, a.seed)?;
    if let Some(p) = &a.out {
        let mut buf = Vec::new();
        set.write_csv(&mut buf)?;
        run.emit(Some(p), &String::from_utf8(buf).expect("CSV is ASCII"))?;
    }
    let st = statistics::<f64>(&set)?;
    run.emit(a.stats.as_deref(), &st.to_json())
}

fn trw_bound(run: &mut Run, a: &TrwBoundArgs) -> CliResult<()> {
    let model = read_model(&a.model)?;
    let rho = resolve_rho(&a.rho, model.graph())?;
    let sol = trw_solve(&model, &rho, &a.solver.options())?;
    let out = json!({
        "log_partition_bound": sol.log_partition(),
        "free_energy": {
            "energy": sol.free_energy.energy,
            "entropy": sol.free_energy.entropy,
            "total": sol.free_energy.total,
        },
        "means": sol.pseudomarginals.means,
        "edge_covariances": sol.pseudomarginals.edge_covariances,
        "iterations": sol.fixed_point.iterations,
        "residual": sol.fixed_point.residual,
        "rho": rho.values(),
    });
    run.emit(a.out.as_deref(), &pretty(&out)?)
}

fn invert(run: &mut Run, a: &InvertArgs) -> CliResult<()> {
    let methods = parse_methods(&a.method)?;
    let st = read_stats(&a.stats)?;
    let graph = a.graph.resolve()?;
    let rho = resolve_rho(&a.rho, &graph)?;
    let truth = a.truth.as_deref().map(read_model).transpose()?;
    if let Some(t) = &truth {
        if t.graph().edges() != graph.edges() {
            return Err(CliError::Run(IsingError::InvalidInput("truth model has a different edge set".into())));
        }
    }
    let results = invert_all(&st, &graph, &rho, &methods)?;
    if methods.len() == 1 {
        if let Some((_, Err(e))) = results.first() {
            return Err(CliError::Run(e.clone()));
        }
    }
    let mut entries = Vec::new();
    for (method, r) in results {
        let entry = match r {
            Ok(est) => {
                let score = truth.as_ref().map(|t| delta_j(&est, t.couplings())).transpose()?;
                let biases = match method {
                    Method::Bethe if a.biases => Some(recover_biases(&st, &est, &graph, &EdgeAppearance::bethe(&graph))?),
                    Method::Trw if a.biases => Some(recover_biases(&st, &est, &graph, &rho)?),
                    _ => None,
                };
                json!({ "method": method, "estimate": serde_json::to_value(&est)?, "delta_j": score, "biases": biases, "error": null })
            }
            Err(e) => {
                log::warn!("{method}: {e}");
                json!({ "method": method, "estimate": null, "delta_j": null, "biases": null,
                        "error": { "kind": e.kind(), "message": e.to_string() } })
            }
        };
        entries.push(entry);
    }
    run.emit(a.out.as_deref(), &pretty(&json!({ "results": entries }))?)
}

fn learn(run: &mut Run, a: &LearnArgs) -> CliResult<()> {
    let st = read_stats(&a.stats)?;
    let graph = a.graph.resolve()?;
    let estimator: Estimator = a.estimator.parse().map_err(|e: IsingError| CliError::Usage(e.to_string()))?;
    let config = LearnConfig {
        learning_rate: a.learning_rate,
        n_updates: a.updates,
        mc_steps_per_gradient: a.mc_steps,
        estimator,
        rng_seed: a.seed,
        tol: a.tol,
    };
    let trace = gradient_ascent(&st, &graph, &config)?;
    let model: Value = serde_json::from_str(&trace.model.to_json())?;
    let out = json!({
        "model": model,
        "iterations": trace.iterations(),
        "final_max_gradient": trace.final_max_gradient(),
        "max_gradient": trace.max_gradient,
        "log_likelihood": trace.log_likelihood,
        "noise_floor": trace.noise_floor,
    });
    run.emit(a.out.as_deref(), &pretty(&out)?)
}

fn read_sweep_config(path: &Path) -> CliResult<SweepConfig> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| CliError::Run(IsingError::Parse { line: 0, message: e.to_string() }))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

fn bench(run: &mut Run, a: &BenchArgs) -> CliResult<()> {
    let config = read_sweep_config(&a.config)?;
    log::info!("sweep over {} cells on {} threads", config.omega_grid.len() * config.trials, a.jobs);
    let report = run_sweep(&config, a.jobs)?;
    fs::create_dir_all(&a.out_dir)?;
    run.emit(Some(&a.out_dir.join("reconstruction.csv")), &report.to_csv())?;
    run.emit(Some(&a.out_dir.join("reconstruction.json")), &report.to_json())
}

fn spikes(run: &mut Run, a: &SpikesArgs) -> CliResult<()> {
    let file = fs::File::open(&a.input).map_err(|e| CliError::Run(IsingError::Io(format!("{}: {e}", a.input.display()))))?;
    let trains = SpikeTrains::parse(BufReader::new(file))?;
    let series = bin_spikes(&trains, a.bin_width)?;
    if let Some(p) = &a.samples_out {
        let mut buf = Vec::new();
        series.as_samples().write_csv(&mut buf)?;
        run.emit(Some(p), &String::from_utf8(buf).expect("CSV is ASCII"))?;
    }
    let st = spike_statistics::<f64>(&series)?;
    run.emit(a.out.as_deref(), &st.to_json())
}

fn execute(command: &Command) -> CliResult<()> {
    let mut run = Run { command, started: Instant::now(), outputs: Vec::new() };
    match command {
        Command::Generate(a) => generate(&mut run, a)?,
        Command::Oracle(a) => oracle(&mut run, a)?,
        Command::Sample(a) => sample(&mut run, a)?,
        Command::TrwBound(a) => trw_bound(&mut run, a)?,
        Command::Invert(a) => invert(&mut run, a)?,
        Command::Learn(a) => learn(&mut run, a)?,
        Command::Bench(a) => bench(&mut run, a)?,
        Command::Spikes(a) => spikes(&mut run, a)?,
    }
    run.write_manifests()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISING_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun with --help for usage.");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
