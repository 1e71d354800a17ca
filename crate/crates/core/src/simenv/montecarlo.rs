use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GroundTruth, OnReject, PlanStep, ScriptedRetryPolicy, SimError, SyntheticEnvironment, SyntheticTask, ToolTruth};
use crate::domain::{MarketSnapshot, TaskInstance, ToolSpec};
use crate::engine::{run_task, EngineConfig};
use crate::money::{rational_to_f64, Credits, Probability, Rational};
use crate::oracle::{geometric_cost, PermissiveOracle};
use crate::par::{self, Execution};
use crate::rng;

/// Empirical retry-until-success cost of a single tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryEstimate {
    pub episodes: u64,
    pub mean_cost: f64,
    /// `cost / p`
    pub expected_cost: Credits,
    pub relative_error: f64,
    /// Episodes that hit the step cap before succeeding.
    pub truncated: u64,
}

const STEP_CAP: u32 = 10_000;

fn single_tool_task(p: &Probability, cost: &Credits) -> SyntheticTask {
    let tool = ToolSpec {
        tool_id: "t0".into(),
        name: "lookup".into(),
        description: "Provides: f0.".into(),
        input_schema: "{}".into(),
        per_call_cost: cost.clone(),
    };
    let truth = ToolTruth {
        success_prob: p.clone(),
        provides_facts: BTreeSet::from(["f0".to_string()]),
        success_payload_template: "ok {facts}".into(),
        failure_payload_template: "error".into(),
    };
    SyntheticTask {
        task: TaskInstance {
            task_id: "retry".into(),
            query: "Collect f0.".into(),
            budget: cost.scale(&Rational::from_integer((u64::from(STEP_CAP) + 1).into())),
            market: MarketSnapshot::new(vec![tool]),
            seed: 0,
        },
        truth: GroundTruth {
            task_id: "retry".into(),
            required_facts: BTreeSet::from(["f0".to_string()]),
            ground_truth_solvable: Some(true),
            reference_tools: BTreeSet::from(["t0".to_string()]),
            tools: BTreeMap::from([("t0".to_string(), truth)]),
        },
    }
}

/// Runs `episodes` independent retry-until-success episodes through the
/// engine and compares the mean spend with the geometric expectation.
pub fn retry_cost_monte_carlo(
    p: &Probability,
    cost: &Credits,
    episodes: u64,
    seed: u64,
    exec: Execution,
) -> Result<RetryEstimate, SimError> {
    if p.is_zero() {
        return Err(SimError::Config("success probability must be positive".into()));
    }
    if episodes == 0 {
        return Err(SimError::Config("need at least one episode".into()));
    }
    let base = single_tool_task(p, cost);
    let env = SyntheticEnvironment::new(base.clone());
    let policy = ScriptedRetryPolicy::new(vec![PlanStep::new("t0", "{}", "retry until success")], OnReject::Retry);
    let config = EngineConfig { max_real_steps: STEP_CAP, ..EngineConfig::default() };
    let runs = par::map_indexed(episodes as usize, exec, |i| {
        let mut task = base.task.clone();
        task.seed = rng::mix(seed, i as u64);
        run_task(&task, &policy, &env, &mut PermissiveOracle, &config)
            .map(|t| (t.total_cost, !t.terminal.answer().is_some()))
            .map_err(|e| SimError::Config(e.to_string()))
    });
    let mut total = Credits::zero();
    let mut truncated = 0;
    for run in runs {
        let (spent, cut) = run?;
        total += &spent;
        truncated += u64::from(cut);
    }
    let mean = rational_to_f64(total.as_rational()) / episodes as f64;
    let expected = geometric_cost(cost, p, &Probability::zero());
    let exp_f = expected.to_f64();
    Ok(RetryEstimate {
        episodes,
        mean_cost: mean,
        relative_error: if exp_f == 0.0 { 0.0 } else { (mean - exp_f).abs() / exp_f },
        expected_cost: expected,
        truncated,
    })
}
