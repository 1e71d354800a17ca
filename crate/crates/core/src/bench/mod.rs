//! Batch runs over synthetic tasks, metrics and experiment sweeps.

mod experiment;
mod harness;
mod metrics;

pub use experiment::{run_experiment, sweep_gamma, Experiment, ExperimentPoint};
pub use harness::{run_batch, run_one, write_report, BatchResult, TaskOutcome, Timing};
pub use metrics::{compute_metrics, config_digest, MetricsReport};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DomainError;
use crate::engine::{EngineConfig, EngineError, Policy};
use crate::money::Credits;
use crate::oracle::{ConditionalGenerator, IntentConfig, IntentionPredictor, McoConfig, WorldModel};
use crate::rng;
use crate::simenv::{
    ExploringPolicy, OnReject, PlanStep, ScriptedRetryPolicy, SimError, SyntheticGenerator, SyntheticTask,
    SyntheticWorldModel, TablePredictor,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench config: {0}")]
    Config(String),
    #[error("no trajectories to score")]
    Empty,
    #[error("task {task_id}: {source}")]
    Run { task_id: String, source: EngineError },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// No oracle, costs hidden.
    Raw,
    /// No oracle, costs and spending shown.
    Prompt,
    Mco,
    Intent,
}

impl Mode {
    pub fn enforcing(self) -> bool {
        matches!(self, Mode::Mco | Mode::Intent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub mode: Mode,
    pub engine: EngineConfig,
    pub intent: IntentConfig,
    pub mco: McoConfig,
    /// Minimum judge score for a task to count as passed.
    pub pass_threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            mode: Mode::Intent,
            engine: EngineConfig::default(),
            intent: IntentConfig::default(),
            mco: McoConfig::default(),
            pass_threshold: 0.5,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.engine.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.intent.validate().map_err(BenchError::Config)?;
        if self.mco.rollout_horizon == 0 {
            return Err(BenchError::Config("mco rollout_horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pass_threshold) {
            return Err(BenchError::Config("pass_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Agent-side components for one task. The real environment and the judge
/// always come from the task's ground truth.
pub struct Components {
    pub policy: Box<dyn Policy>,
    pub world: Box<dyn WorldModel>,
    pub predictor: Box<dyn IntentionPredictor>,
    pub generator: Box<dyn ConditionalGenerator>,
}

pub trait Backend: Sync {
    fn components(&self, task: &SyntheticTask, config: &BenchConfig) -> Result<Components, BenchError>;
}

/// Which fixture policy drives the synthetic backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Randomized search over tools advertising missing facts.
    Explore { patience: usize },
    /// Calls the cheapest covering set, retrying failures.
    Reference { on_reject: OnReject },
    /// Calls the most expensive provider of each fact, retrying failures.
    Adversarial { on_reject: OnReject },
}

/// Ground-truth-backed components with a choice of fixture policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBackend {
    pub policy: PolicyKind,
    pub world_diversity: f64,
}

impl Default for SyntheticBackend {
    fn default() -> Self {
        SyntheticBackend { policy: PolicyKind::Explore { patience: 8 }, world_diversity: 1.0 }
    }
}

fn plan_of(task: &SyntheticTask, tools: impl IntoIterator<Item = String>, reasoning: &str) -> Vec<PlanStep> {
    tools
        .into_iter()
        .map(|id| PlanStep::new(&id, &format!("{{\"query\":\"{}\"}}", task.task.task_id), reasoning))
        .collect()
}

/// Most expensive provider for each required fact, in fact order, without
/// repeats.
pub fn adversarial_tools(task: &SyntheticTask) -> Vec<String> {
    let mut chosen: Vec<String> = Vec::new();
    for fact in task.required_facts() {
        let best = task
            .tools()
            .filter(|t| t.truth.provides_facts.contains(fact))
            .max_by(|a, b| a.spec.per_call_cost.cmp(&b.spec.per_call_cost).then(b.spec.tool_id.cmp(&a.spec.tool_id)));
        if let Some(t) = best {
            if !chosen.contains(&t.spec.tool_id) {
                chosen.push(t.spec.tool_id.clone());
            }
        }
    }
    chosen
}

impl SyntheticBackend {
    pub fn policy_for(&self, task: &SyntheticTask) -> Box<dyn Policy> {
        match &self.policy {
            PolicyKind::Explore { patience } => Box::new(ExploringPolicy::new(
                rng::mix(task.task.seed, rng::label_hash(rng::POLICY)),
                task.required_facts().clone(),
                *patience,
            )),
            PolicyKind::Reference { on_reject } => {
                let tools: BTreeSet<String> = task.truth.reference_tools.clone();
                Box::new(ScriptedRetryPolicy::new(plan_of(task, tools, "collect the cheapest cover"), *on_reject))
            }
            PolicyKind::Adversarial { on_reject } => Box::new(ScriptedRetryPolicy::new(
                plan_of(task, adversarial_tools(task), "use the premium source for each fact"),
                *on_reject,
            )),
        }
    }
}

impl Backend for SyntheticBackend {
    fn components(&self, task: &SyntheticTask, config: &BenchConfig) -> Result<Components, BenchError> {
        Ok(Components {
            policy: self.policy_for(task),
            world: Box::new(SyntheticWorldModel::new(task.truth.clone(), self.world_diversity)),
            predictor: Box::new(TablePredictor::new(&task.truth, config.intent.rho_min.clone())),
            generator: Box::new(SyntheticGenerator::new(task.truth.clone())),
        })
    }
}

/// Highest tool price across all tasks.
pub fn max_market_cost(tasks: &[SyntheticTask]) -> Option<Credits> {
    tasks.iter().filter_map(|t| t.task.market.max_cost().cloned()).max()
}
