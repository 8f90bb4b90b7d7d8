//! Subcommands of the `cacto` binary. Each `cmd_*` function returns the
//! process exit code; errors are reported on stderr.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cacto::config::TrainConfig;
use cacto::envs::{ModelKind, SampleRegion, TimeState};
use cacto::ilqr::{naive_warm_start, solve_batch, SolveOptions};
use cacto::nets::{Checkpoint, MlpParams};
use cacto::trainer::{evaluate_policy_detailed, toy1d_diagnostic, train_with, IterationReport, Trainer};
use cacto::Problem;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

pub const SEED_ENV: &str = "CACTO_SEED";

pub const REPORT_HEADER: [&str; 9] = [
    "iter",
    "episodes_cum",
    "eval_mean_cost",
    "to_mean_cost",
    "converged_frac",
    "critic_loss",
    "std_loss",
    "t_to_s",
    "t_nets_s",
];

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn runtime(e: impl fmt::Display) -> Self {
        Self::new(EXIT_RUNTIME, e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Uncertainty-biased starts with the reduced episode schedule.
    Bic,
    /// Uniform starts with the reduced episode schedule.
    Reduced,
    /// Uniform starts, full episode count every iteration.
    Baseline,
}

impl Variant {
    pub fn apply(self, config: &mut TrainConfig, reduced_fraction: f64) {
        let (bic, fraction) = match self {
            Variant::Bic => (true, reduced_fraction),
            Variant::Reduced => (false, reduced_fraction),
            Variant::Baseline => (false, 1.0),
        };
        config.trainer.bic = bic;
        config.trainer.episode_fraction = fraction;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionArg {
    Hard,
    Workspace,
}

impl From<RegionArg> for SampleRegion {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Hard => SampleRegion::HardRegion,
            RegionArg::Workspace => SampleRegion::Workspace,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cacto", version, about = "Trajectory optimization guided actor-critic training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train actor, critic and std-critic.
    Train(TrainArgs),
    /// Evaluate a checkpoint from the Hard Region or the workspace.
    Eval(EvalArgs),
    /// Value, critic and std-critic curves of the 1D example.
    Demo1d(DemoArgs),
    /// Time batched solves with one and with many workers.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Overrides CACTO_SEED and the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "bic")]
    pub variant: Variant,
    /// Override the configured number of iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Solver threads; defaults to the number of logical cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    pub checkpoint: PathBuf,
    /// Configuration of the model the checkpoint was trained on.
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "hard")]
    pub region: RegionArg,
    /// Refine every actor rollout with a trajectory optimization solve.
    #[arg(long)]
    pub with_to: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct DemoArgs {
    /// A toy1d configuration.
    pub config: PathBuf,
    #[arg(long, default_value = "runs/demo1d")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    pub config: PathBuf,
    /// Comma-separated numbers of problems per batch.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,250,500,1000")]
    pub batch_sizes: Vec<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Iterations per solve; the configured first-iteration cap or 100 when absent.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs/bench")]
    pub out: PathBuf,
}

/// Written once, before a run starts.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub config: TrainConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub variant: Option<Variant>,
    pub region: Option<RegionArg>,
    pub workers: usize,
}

/// Per-phase wall-clock totals, written when a run ends.
#[derive(Debug, Default, Serialize)]
pub struct RunTimings {
    pub to_s: f64,
    pub nets_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
}

pub fn build_id() -> String {
    option_env!("CACTO_BUILD_ID")
        .map(str::to_string)
        .unwrap_or_else(|| format!("cacto-cli {}", env!("CARGO_PKG_VERSION")))
}

/// Loads a configuration; a missing file or a malformed one is a config error.
pub fn load_config(path: &Path) -> CliResult<TrainConfig> {
    if !path.is_file() {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!("config file {} not found", path.display()),
        ));
    }
    TrainConfig::load(path).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))
}

/// Seed precedence: command-line flag, then `CACTO_SEED`, then the config.
pub fn resolve_seed(flag: Option<u64>, config: &TrainConfig) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::new(EXIT_CONFIG, format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(config.trainer.seed),
    }
}

fn pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::new(EXIT_CONFIG, "--workers must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    builder.build().map_err(CliError::runtime)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    fs::write(path, text + "\n").map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> CliResult<()> {
    let path = dir.join("manifest.json");
    write_json(&path, manifest)
}

fn report_row(r: &IterationReport, timings: bool) -> Vec<String> {
    let time = |v: f64| if timings { v.to_string() } else { String::new() };
    vec![
        r.iteration.to_string(),
        r.episodes_cum.to_string(),
        r.eval_mean_cost.to_string(),
        r.to_mean_cost.to_string(),
        r.converged_frac.to_string(),
        r.critic_loss.to_string(),
        r.std_loss.to_string(),
        time(r.t_to_s),
        time(r.t_nets_s),
    ]
}

fn save_checkpoint(path: &Path, trainer: &Trainer<f64>, hash: &str) -> cacto::Result<()> {
    Checkpoint::new(
        trainer.config.model.kind.name(),
        hash,
        trainer.iteration,
        &trainer.actor,
        &trainer.critic,
        &trainer.std_critic,
    )
    .save(path)
}

pub fn cmd_train(args: &TrainArgs) -> i32 {
    report(run_train(args))
}

pub fn run_train(args: &TrainArgs) -> CliResult<Vec<IterationReport>> {
    let mut config = load_config(&args.config)?;
    let reduced_fraction = config.trainer.episode_fraction;
    args.variant.apply(&mut config, reduced_fraction);
    config.trainer.seed = resolve_seed(args.seed, &config)?;
    if let Some(it) = args.iterations {
        config.trainer.iterations = it;
    }
    config.validate().map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    let workers = args.workers.or(config.cli.workers);
    let pool = pool(workers)?;
    let out = &args.out;
    create_dir(&out.join("checkpoints"))?;
    let hash = config.hash();
    write_manifest(
        out,
        &RunManifest {
            command: "train".into(),
            build: build_id(),
            config: config.clone(),
            config_hash: hash.clone(),
            seeds: vec![config.trainer.seed],
            output_dir: out.display().to_string(),
            variant: Some(args.variant),
            region: None,
            workers: pool.current_num_threads(),
        },
    )?;
    fs::write(out.join("config.toml"), config.to_toml_string()).map_err(CliError::runtime)?;

    let record_timings = config.cli.record_timings;
    let mut reports_csv = csv_writer(&out.join("reports.csv"))?;
    reports_csv.write_record(REPORT_HEADER).map_err(CliError::runtime)?;
    reports_csv.flush().map_err(CliError::runtime)?;

    let started = Instant::now();
    let mut timings = RunTimings::default();
    let iterations = config.trainer.iterations;
    let outcome = pool.install(|| {
        if iterations == 0 {
            let trainer: Trainer<f64> = Trainer::new(config.clone())?;
            save_checkpoint(&out.join("checkpoint.json"), &trainer, &hash)?;
            return Ok(Vec::new());
        }
        train_with::<f64>(config.clone(), |trainer, r| {
            reports_csv.write_record(report_row(r, record_timings))?;
            reports_csv.flush()?;
            timings.to_s += r.t_to_s;
            timings.nets_s += r.t_nets_s;
            timings.eval_s += r.t_eval_s;
            let name = format!("iter_{:04}.json", r.iteration);
            save_checkpoint(&out.join("checkpoints").join(name), trainer, &hash)?;
            save_checkpoint(&out.join("checkpoint.json"), trainer, &hash)
        })
        .map(|o| o.reports)
    });
    timings.total_s = started.elapsed().as_secs_f64();
    write_json(&out.join("timings.json"), &timings)?;
    let reports = outcome.map_err(CliError::runtime)?;
    if let Some(last) = reports.last() {
        println!(
            "trained {} iterations ({} episodes); eval mean cost {}",
            last.iteration, last.episodes_cum, last.eval_mean_cost
        );
    } else {
        println!("initialized networks; no iterations run");
    }
    Ok(reports)
}

/// Networks restored from a checkpoint and checked against the configuration.
pub fn load_networks(
    path: &Path,
    config: &TrainConfig,
) -> CliResult<(MlpParams<f64>, MlpParams<f64>, MlpParams<f64>)> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))?;
    let kind = config.model.kind;
    if ckpt.model != kind.name() {
        return Err(CliError::new(
            EXIT_CHECKPOINT,
            format!("checkpoint is for model '{}', config is for '{}'", ckpt.model, kind.name()),
        ));
    }
    let bad = |e: cacto::Error| CliError::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display()));
    let actor = ckpt.actor.to_params::<f64>().map_err(bad)?;
    let critic = ckpt.critic.to_params::<f64>().map_err(bad)?;
    let std_critic = ckpt.std_critic.to_params::<f64>().map_err(bad)?;
    let (n, m) = (kind.state_dim(), kind.control_dim());
    let dims_ok = actor.input_dim() == n + 1
        && actor.output_dim() == m
        && critic.input_dim() == n + 1
        && critic.output_dim() == 1
        && std_critic.input_dim() == n + 1
        && std_critic.output_dim() == 1;
    if !dims_ok {
        return Err(CliError::new(
            EXIT_CHECKPOINT,
            format!("checkpoint network sizes do not match model '{}'", kind.name()),
        ));
    }
    Ok((actor, critic, std_critic))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_cost: f64,
    pub costs: Vec<f64>,
    pub reached: usize,
}

pub fn cmd_eval(args: &EvalArgs) -> i32 {
    report(run_eval(args))
}

pub fn run_eval(args: &EvalArgs) -> CliResult<EvalSummary> {
    let mut config = load_config(&args.config)?;
    config.trainer.seed = resolve_seed(args.seed, &config)?;
    let (actor, _, _) = load_networks(&args.checkpoint, &config)?;
    let workers = args.workers.or(config.cli.workers);
    let pool = pool(workers)?;
    create_dir(&args.out)?;
    write_manifest(
        &args.out,
        &RunManifest {
            command: "eval".into(),
            build: build_id(),
            config_hash: config.hash(),
            config: config.clone(),
            seeds: vec![config.trainer.seed],
            output_dir: args.out.display().to_string(),
            variant: None,
            region: Some(args.region),
            workers: pool.current_num_threads(),
        },
    )?;
    let task = config.task::<f64>().map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    let starts = if args.region == RegionArg::Hard {
        // The frozen evaluation set used during training.
        Trainer::<f64>::new(config.clone()).map_err(CliError::runtime)?.eval_starts
    } else {
        task.model
            .sample_initial_states(config.trainer.eval_count, config.trainer.seed, args.region.into())
            .map_err(CliError::runtime)?
    };
    let opts: SolveOptions<f64> = config.solve_options(config.solver.max_iter_cap);
    let outcomes = pool
        .install(|| evaluate_policy_detailed(&actor, &task, &starts, args.with_to.then_some(&opts)))
        .map_err(CliError::runtime)?;

    let mut w = csv_writer(&args.out.join("eval_costs.csv"))?;
    let n = task.model.n();
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((0..n).map(|i| format!("x0_{i}")));
    header.extend(["rollout_cost", "to_cost", "reached_target"].map(String::from));
    w.write_record(&header).map_err(CliError::runtime)?;
    let mut costs = Vec::with_capacity(outcomes.len());
    let mut reached = 0;
    for (i, o) in outcomes.iter().enumerate() {
        let hit = task.field.in_target_neighborhood(&task.model.task_position(&o.final_state().x));
        reached += usize::from(hit);
        costs.push(o.cost());
        let mut row = vec![i.to_string()];
        row.extend(o.start.x.iter().map(|v| v.to_string()));
        row.push(o.rollout.total_cost().to_string());
        row.push(o.refined.as_ref().map(|r| r.cost.to_string()).unwrap_or_default());
        row.push(hit.to_string());
        w.write_record(&row).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    let mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
    println!("mean cost {mean_cost} over {} starts ({} reached the target)", costs.len(), reached);
    Ok(EvalSummary {
        mean_cost,
        costs,
        reached,
    })
}

pub fn cmd_demo1d(args: &DemoArgs) -> i32 {
    report(run_demo1d(args).map(|_| ()))
}

pub fn run_demo1d(args: &DemoArgs) -> CliResult<cacto::trainer::Toy1dDiagnostic> {
    let mut config = load_config(&args.config)?;
    if config.model.kind != ModelKind::Toy1d {
        return Err(CliError::new(
            EXIT_MODEL,
            format!("demo1d needs the toy1d model, the config has '{}'", config.model.kind),
        ));
    }
    config.trainer.seed = resolve_seed(args.seed, &config)?;
    create_dir(&args.out)?;
    write_manifest(
        &args.out,
        &RunManifest {
            command: "demo1d".into(),
            build: build_id(),
            config_hash: config.hash(),
            config: config.clone(),
            seeds: vec![config.trainer.seed],
            output_dir: args.out.display().to_string(),
            variant: None,
            region: None,
            workers: rayon::current_num_threads(),
        },
    )?;
    let diag = toy1d_diagnostic(&config).map_err(CliError::runtime)?;
    let mut w = csv_writer(&args.out.join("diagnostic.csv"))?;
    for row in &diag.rows {
        w.serialize(row).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;

    let task = config.task::<f64>().map_err(CliError::runtime)?;
    let mut w = csv_writer(&args.out.join("cost_curve.csv"))?;
    w.write_record(["x", "cost"]).map_err(CliError::runtime)?;
    for row in &diag.rows {
        let x = nalgebra::DVector::from_element(1, row.x0);
        w.write_record([row.x0.to_string(), task.terminal_cost(&x).to_string()])
            .map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    println!(
        "value jump between grid cells {} and {}; std-critic peak at cell {}",
        diag.jump_index,
        diag.jump_index + 1,
        diag.std_argmax
    );
    Ok(diag)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub workers: usize,
    pub wall_s: f64,
    pub per_problem_s: f64,
}

pub fn cmd_bench(args: &BenchArgs) -> i32 {
    report(run_bench(args).map(|_| ()))
}

pub fn run_bench(args: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    let mut config = load_config(&args.config)?;
    config.trainer.seed = resolve_seed(args.seed, &config)?;
    if args.batch_sizes.is_empty() || args.batch_sizes.contains(&0) {
        return Err(CliError::new(EXIT_CONFIG, "--batch-sizes needs positive sizes"));
    }
    let many = pool(args.workers.or(config.cli.workers))?;
    let single = pool(Some(1))?;
    create_dir(&args.out)?;
    write_manifest(
        &args.out,
        &RunManifest {
            command: "bench".into(),
            build: build_id(),
            config_hash: config.hash(),
            config: config.clone(),
            seeds: vec![config.trainer.seed],
            output_dir: args.out.display().to_string(),
            variant: None,
            region: None,
            workers: many.current_num_threads(),
        },
    )?;
    let task = config.task::<f64>().map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    let max_iter = args.max_iter.or(config.solver.max_iter_first).unwrap_or(100);
    let opts: SolveOptions<f64> = config.solve_options(max_iter);
    let largest = *args.batch_sizes.iter().max().expect("non-empty");
    let all_starts = task
        .model
        .sample_initial_states(largest, config.trainer.seed, SampleRegion::Workspace)
        .map_err(CliError::runtime)?;

    let mut rows = Vec::new();
    let mut w = csv_writer(&args.out.join("bench.csv"))?;
    for &size in &args.batch_sizes {
        let starts: Vec<TimeState<f64>> = all_starts[..size].to_vec();
        let warm: Vec<_> = starts.iter().map(|s| naive_warm_start(&task, s)).collect();
        let mut reference = None;
        for pool in [&single, &many] {
            let t0 = Instant::now();
            let results = pool
                .install(|| solve_batch(&task, &starts, &warm, &opts))
                .map_err(CliError::runtime)?;
            let wall_s = t0.elapsed().as_secs_f64();
            let costs: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().map(|s| s.cost)).collect();
            match &reference {
                None => reference = Some(costs),
                Some(r) if *r != costs => {
                    return Err(CliError::runtime("batched results differ between worker counts"));
                }
                Some(_) => {}
            }
            let row = BenchRow {
                batch_size: size,
                workers: pool.current_num_threads(),
                wall_s,
                per_problem_s: wall_s / size as f64,
            };
            w.serialize(&row).map_err(CliError::runtime)?;
            rows.push(row);
        }
    }
    w.flush().map_err(CliError::runtime)?;
    for r in &rows {
        println!("batch {:>6}  workers {:>3}  {:.4} s", r.batch_size, r.workers, r.wall_s);
    }
    Ok(rows)
}

fn report<T>(result: CliResult<T>) -> i32 {
    match result {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Demo1d(a) => cmd_demo1d(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

impl From<cacto::Error> for CliError {
    fn from(e: cacto::Error) -> Self {
        let code = match e {
            cacto::Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())
}
