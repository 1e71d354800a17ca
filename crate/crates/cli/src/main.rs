//! `tollgate`: generate markets, run tasks and benchmarks, sweep parameters,
//! calibrate predictors and validate trajectory logs.

mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use tollgate::bench::{
    run_batch, run_experiment, run_one, write_report, Backend, BenchError, Experiment, SyntheticBackend,
};
use tollgate::calibrate::{fit_temperature, read_samples, synthetic_samples};
use tollgate::log::{read_trajectories, to_jsonl, validate_trajectory};
use tollgate::money::{format_rational, parse_rational, Rational};
use tollgate::par::Execution;
use tollgate::simenv::{
    gen_markets, load_task_dir, perturb_prices, scale_budget, write_task_files, MarketGenConfig, SyntheticTask,
    TASK_SUFFIX,
};
use tollgate_llm::{ChatClient, HttpBackend};

use config::{BackendKind, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "tollgate", version, about = "Budget-gated tool-use agent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic task and ground-truth files.
    GenMarket(GenMarketArgs),
    /// Run one task and print a summary.
    Run(RunArgs),
    /// Run a batch and write metrics and trajectories.
    Bench(Overrides),
    /// Repeat the benchmark over a list of parameter values.
    Sweep(SweepArgs),
    /// Fit a predictor temperature from `score,label` samples.
    Calibrate(CalibrateArgs),
    /// Re-check a trajectory log against the engine invariants.
    Validate(ValidateArgs),
}

#[derive(Debug, clap::Args)]
struct GenMarketArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_tools: Option<usize>,
    #[arg(long)]
    n_facts: Option<usize>,
    /// Number of tasks; the same tasks `bench --tasks N --seed S` generates.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "tasks")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// A `.task.json` file; its `.truth.json` must sit beside it. Defaults to
    /// the first configured task.
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Gamma,
    Price,
    Budget,
    Market,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Comma-separated values: gammas, price factors, budget ratios or
    /// market sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Debug, clap::Args)]
struct CalibrateArgs {
    /// CSV of `score,label` rows with logit scores.
    #[arg(long, conflicts_with = "synthetic")]
    samples: Option<PathBuf>,
    /// Draw this many synthetic samples instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// True temperature of the synthetic samples.
    #[arg(long, default_value_t = 2.5)]
    t_star: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ValidateArgs {
    /// A trajectory JSON-lines log.
    log: PathBuf,
}

fn execution(config: &RunConfig) -> Execution {
    Execution::from_workers(config.workers)
}

fn backend(config: &RunConfig) -> Result<Box<dyn Backend>, CliError> {
    Ok(match config.backend {
        BackendKind::Scripted | BackendKind::Synthetic => {
            Box::new(SyntheticBackend { policy: config.fixture_policy(), ..SyntheticBackend::default() })
        }
        BackendKind::Http => {
            let client = ChatClient::new(config.endpoint.clone()).map_err(|e| CliError::Config(e.to_string()))?;
            Box::new(HttpBackend::new(client, config.predictor_temperature))
        }
    })
}

fn load_tasks(config: &RunConfig) -> Result<Vec<SyntheticTask>, CliError> {
    let tasks = match &config.tasks_dir {
        Some(dir) => load_task_dir(dir).map_err(|e| CliError::Config(e.to_string()))?,
        None => {
            let market = MarketGenConfig { seed: config.seed, ..config.market.clone() };
            gen_markets(&market, config.tasks, execution(config)).map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    if tasks.is_empty() {
        return Err(CliError::Config("no tasks found".into()));
    }
    transform(tasks, config)
}

fn transform(tasks: Vec<SyntheticTask>, config: &RunConfig) -> Result<Vec<SyntheticTask>, CliError> {
    let one = Rational::from_integer(1.into());
    tasks
        .into_iter()
        .map(|mut t| {
            if config.budget_ratio != one {
                t = scale_budget(&t, &config.budget_ratio)?;
            }
            if config.price_factor != one {
                t = perturb_prices(&t, &config.price_factor, config.price_selector)?;
            }
            Ok(t)
        })
        .collect::<Result<_, tollgate::simenv::SimError>>()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn gen_market_cmd(args: &GenMarketArgs) -> Result<(), CliError> {
    let mut market = match &args.config {
        Some(path) => config::load_file(path)?.market,
        None => MarketGenConfig::default(),
    };
    if let Some(s) = args.seed {
        market.seed = s;
    }
    if let Some(n) = args.n_tools {
        market.n_tools = n;
    }
    if let Some(n) = args.n_facts {
        market.n_facts = n;
    }
    if args.count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let tasks = gen_markets(&market, args.count, Execution::default()).map_err(|e| CliError::Config(e.to_string()))?;
    for task in &tasks {
        let (task_path, _) = write_task_files(&args.out, task).map_err(failed)?;
        println!("{}", task_path.display());
    }
    Ok(())
}

fn run_cmd(args: &RunArgs) -> Result<(), CliError> {
    let config = args.overrides.resolve()?;
    if args.overrides.dry_run {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let task = match &args.task {
        Some(path) => {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let id = name
                .strip_suffix(TASK_SUFFIX)
                .ok_or_else(|| CliError::Config(format!("{} is not a {TASK_SUFFIX} file", path.display())))?;
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let all = load_task_dir(dir).map_err(|e| CliError::Config(e.to_string()))?;
            let found = all.into_iter().find(|t| t.task.task_id == id);
            let found = found.ok_or_else(|| CliError::Config(format!("task `{id}` not found in {}", dir.display())))?;
            transform(vec![found], &config)?.remove(0)
        }
        None => load_tasks(&RunConfig { tasks: 1, ..config.clone() })?.remove(0),
    };
    let bench = config.bench();
    let outcome = run_one(&task, &bench, backend(&config)?.as_ref())?;
    let t = &outcome.trajectory;
    let path = config.out.join("trajectory.jsonl");
    write(&path, &to_jsonl(std::slice::from_ref(t)))?;
    let judge = t.judge_score.as_ref().map(format_rational).unwrap_or_default();
    println!("task        {}", t.task.task_id);
    println!("terminal    {:?}", t.terminal);
    println!("steps       {}", t.steps.len());
    println!("spent       {} of {}", t.total_cost, t.task.budget);
    println!("feasible    {}", t.is_feasible());
    println!("judge       {judge}");
    println!("passed      {}", t.judge_score.as_ref().is_some_and(|s| tollgate::money::rational_to_f64(s) >= bench.pass_threshold));
    println!("log         {}", path.display());
    if bench.mode.enforcing() && !t.is_feasible() {
        return Err(failed("budget exceeded under an enforcing oracle"));
    }
    Ok(())
}

fn bench_cmd(overrides: &Overrides) -> Result<(), CliError> {
    let config = overrides.resolve()?;
    if overrides.dry_run {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let tasks = load_tasks(&config)?;
    let result = run_batch(&tasks, &config.bench(), backend(&config)?.as_ref(), execution(&config))?;
    write_report(&config.out, &result)?;
    write(&config.out.join("config.toml"), &config.to_toml())?;
    println!("{}", serde_json::to_string_pretty(&result.metrics).expect("metrics serialize"));
    if config.mode.enforcing() && result.metrics.n_feasible < result.metrics.n_tasks {
        return Err(failed("budget exceeded under an enforcing oracle"));
    }
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let config = args.overrides.resolve()?;
    if args.overrides.dry_run {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let rationals = || {
        args.values
            .iter()
            .map(|v| parse_rational(v).map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()
    };
    let experiment = match args.kind {
        SweepKind::Gamma => Experiment::GammaSweep { gammas: rationals()? },
        SweepKind::Price => Experiment::PricePerturb { factors: rationals()?, selector: config.price_selector },
        SweepKind::Budget => Experiment::BudgetScale { ratios: rationals()? },
        SweepKind::Market => Experiment::MarketScale {
            sizes: args
                .values
                .iter()
                .map(|v| v.trim().parse().map_err(|_| CliError::Config(format!("bad market size `{v}`"))))
                .collect::<Result<_, _>>()?,
            market: MarketGenConfig { seed: config.seed, ..config.market.clone() },
            count: config.tasks,
        },
    };
    let tasks = match args.kind {
        SweepKind::Market => Vec::new(),
        _ => load_tasks(&config)?,
    };
    let points = run_experiment(&experiment, &config.bench(), &tasks, backend(&config)?.as_ref(), execution(&config))?;
    let json = serde_json::to_string_pretty(&points).expect("points serialize");
    write(&config.out.join("sweep.json"), &(json + "\n"))?;
    println!("{:>12} {:>9} {:>9} {:>10}", "parameter", "pass", "feasible", "avg_cost");
    for p in &points {
        println!("{:>12} {:>9.3} {:>9.3} {:>10.3}", p.parameter, p.metrics.pass_rate, p.metrics.feasible_rate, p.metrics.avg_cost);
    }
    Ok(())
}

fn calibrate_cmd(args: &CalibrateArgs) -> Result<(), CliError> {
    let samples = match (&args.samples, args.synthetic) {
        (Some(path), _) => {
            let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            read_samples(file).map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, Some(n)) => synthetic_samples(n, args.t_star, 6.0, args.seed),
        (None, None) => return Err(CliError::Config("pass --samples FILE or --synthetic N".into())),
    };
    let result = fit_temperature(&samples).map_err(failed)?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes") + "\n";
    if let Some(out) = &args.out {
        write(out, &json)?;
    }
    print!("{json}");
    Ok(())
}

fn validate_cmd(args: &ValidateArgs) -> Result<(), CliError> {
    let file = fs::File::open(&args.log).map_err(|e| CliError::Config(format!("{}: {e}", args.log.display())))?;
    let trajectories = read_trajectories(&mut BufReader::new(file)).map_err(|e| failed(format!("[parse] {e}")))?;
    let mut bad = 0;
    for t in &trajectories {
        for v in validate_trajectory(t) {
            bad += 1;
            let step = v.step.map(|s| format!(" step {s}")).unwrap_or_default();
            println!("{}{step} [{}]: {}", t.task.task_id, v.rule, v.detail);
        }
    }
    if bad > 0 {
        return Err(failed(format!("{bad} violation(s) in {} trajectories", trajectories.len())));
    }
    println!("ok: {} trajectories", trajectories.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenMarket(a) => gen_market_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Bench(o) => bench_cmd(o),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Validate(a) => validate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tollgate: {e}");
            ExitCode::from(e.code())
        }
    }
}
