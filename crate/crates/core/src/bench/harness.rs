use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{compute_metrics, config_digest, Backend, BenchConfig, BenchError, MetricsReport, Mode};
use crate::domain::{compute_reward, Trajectory};
use crate::engine::{run_soft, run_task, SoftMode};
use crate::log;
use crate::oracle::{IntentOracle, MonteCarloOracle};
use crate::par::{self, Execution};
use crate::rng;
use crate::simenv::{synthetic_judge, SyntheticEnvironment, SyntheticTask};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub trajectory: Trajectory,
    pub elapsed: Duration,
}

/// Wall-clock figures, kept apart from the deterministic metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub e2e_seconds: f64,
    pub mean_latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub trajectories: Vec<Trajectory>,
    pub metrics: MetricsReport,
    pub timing: Timing,
}

/// Runs and judges one task. Every random stream derives from the task seed.
pub fn run_one(task: &SyntheticTask, config: &BenchConfig, backend: &dyn Backend) -> Result<TaskOutcome, BenchError> {
    let parts = backend.components(task, config)?;
    let env = SyntheticEnvironment::new(task.clone());
    let oracle_rng = rng::stream(task.task.seed, rng::ORACLE);
    let market = task.task.market.clone();
    let start = Instant::now();
    let run = match config.mode {
        Mode::Raw => run_soft(&task.task, parts.policy.as_ref(), &env, &config.engine, SoftMode::Raw),
        Mode::Prompt => run_soft(&task.task, parts.policy.as_ref(), &env, &config.engine, SoftMode::Prompt),
        Mode::Mco => {
            let mut oracle = MonteCarloOracle::new(
                parts.policy.as_ref(),
                parts.world.as_ref(),
                market,
                config.mco.clone(),
                oracle_rng,
            );
            run_task(&task.task, parts.policy.as_ref(), &env, &mut oracle, &config.engine)
        }
        Mode::Intent => {
            let mut oracle = IntentOracle::new(
                parts.policy.as_ref(),
                parts.predictor.as_ref(),
                parts.generator.as_ref(),
                market,
                config.intent.clone(),
                oracle_rng,
            );
            run_task(&task.task, parts.policy.as_ref(), &env, &mut oracle, &config.engine)
        }
    };
    let mut trajectory = run.map_err(|source| BenchError::Run { task_id: task.task.task_id.clone(), source })?;
    let elapsed = start.elapsed();
    let score = synthetic_judge(task, trajectory.terminal.answer());
    compute_reward(&mut trajectory, &score)?;
    Ok(TaskOutcome { trajectory, elapsed })
}

/// Runs every task and computes the batch metrics. Output order follows
/// `tasks` regardless of `exec`.
pub fn run_batch(
    tasks: &[SyntheticTask],
    config: &BenchConfig,
    backend: &dyn Backend,
    exec: Execution,
) -> Result<BatchResult, BenchError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(BenchError::Empty);
    }
    let start = Instant::now();
    let outcomes = par::map_indexed(tasks.len(), exec, |i| run_one(&tasks[i], config, backend));
    let e2e = start.elapsed();
    let mut trajectories = Vec::with_capacity(tasks.len());
    let mut latency = Duration::ZERO;
    for outcome in outcomes {
        let outcome = outcome?;
        latency += outcome.elapsed;
        trajectories.push(outcome.trajectory);
    }
    let solvability: BTreeMap<String, Option<bool>> =
        tasks.iter().map(|t| (t.task.task_id.clone(), t.ground_truth_solvable())).collect();
    let metrics = compute_metrics(&trajectories, &solvability, config.pass_threshold, &config_digest(config))?;
    let timing = Timing {
        e2e_seconds: e2e.as_secs_f64(),
        mean_latency_seconds: latency.as_secs_f64() / tasks.len() as f64,
    };
    Ok(BatchResult { trajectories, metrics, timing })
}

/// Writes `metrics.json`, `metrics.csv`, `trajectories.jsonl` and
/// `timing.json` into `dir`.
pub fn write_report(dir: &Path, result: &BatchResult) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&result.metrics).expect("metrics serialize");
    fs::write(dir.join("metrics.json"), json + "\n")?;
    fs::write(dir.join("metrics.csv"), format!("{}\n{}\n", MetricsReport::CSV_HEADER, result.metrics.csv_row()))?;
    fs::write(dir.join("trajectories.jsonl"), log::to_jsonl(&result.trajectories))?;
    let timing = serde_json::to_string_pretty(&result.timing).expect("timing serializes");
    fs::write(dir.join("timing.json"), timing + "\n")?;
    Ok(())
}
