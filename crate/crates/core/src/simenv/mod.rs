//! Synthetic tool markets with known ground truth.
//!
//! Every tool has a hidden success probability and a set of facts it returns
//! on success. Tasks ask for a set of required facts; the judge scores an
//! answer by fact coverage, so every quantity the oracles estimate has an
//! exact reference value here.

mod components;
mod io;
mod market;
mod montecarlo;
mod policy;
mod solvable;

pub use components::{
    extract_facts, is_success_payload, render_facts, synthetic_env_execute, synthetic_judge, PredictRule,
    ScriptedPredictor, SyntheticEnvironment, SyntheticGenerator, SyntheticWorldModel, TablePredictor, FACTS_CLOSE,
    FACTS_OPEN,
};
pub use io::{load_task_dir, load_task_instance, write_task_files, TRUTH_SUFFIX, TASK_SUFFIX};
pub use market::{gen_market, gen_markets, perturb_prices, scale_budget, MarketGenConfig, PriceSelector};
pub use montecarlo::{retry_cost_monte_carlo, RetryEstimate};
pub use policy::{ExploringPolicy, OnReject, PlanStep, ReplanningPolicy, ScriptedRetryPolicy};
pub use solvable::{brute_force_solvable, min_cover, Cover, Solvability, BRUTE_FORCE_MAX_FACTS, BRUTE_FORCE_MAX_TOOLS};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{TaskInstance, ToolSpec};
use crate::money::Probability;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("market config: {0}")]
    Config(String),
    #[error("brute force supports at most {max_tools} tools and {max_facts} facts, got {tools} tools and {facts} facts")]
    TooLarge { tools: usize, facts: usize, max_tools: usize, max_facts: usize },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("{0}")]
    Io(String),
}

/// Hidden per-tool ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolTruth {
    pub success_prob: Probability,
    pub provides_facts: BTreeSet<String>,
    pub success_payload_template: String,
    pub failure_payload_template: String,
}

/// Ground-truth side file for one task; never shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task_id: String,
    pub required_facts: BTreeSet<String>,
    pub ground_truth_solvable: Option<bool>,
    /// Cheapest single-pass covering set at generation time.
    pub reference_tools: BTreeSet<String>,
    pub tools: BTreeMap<String, ToolTruth>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTask {
    pub task: TaskInstance,
    pub truth: GroundTruth,
}

/// A tool's visible spec joined with its hidden truth.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticTool<'a> {
    pub spec: &'a ToolSpec,
    pub truth: &'a ToolTruth,
}

impl SyntheticTask {
    pub fn required_facts(&self) -> &BTreeSet<String> {
        &self.truth.required_facts
    }

    pub fn ground_truth_solvable(&self) -> Option<bool> {
        self.truth.ground_truth_solvable
    }

    pub fn tool(&self, tool_id: &str) -> Option<SyntheticTool<'_>> {
        let spec = self.task.market.get(tool_id)?;
        let truth = self.truth.tools.get(tool_id)?;
        Some(SyntheticTool { spec, truth })
    }

    pub fn tools(&self) -> impl Iterator<Item = SyntheticTool<'_>> {
        self.task
            .market
            .tools
            .iter()
            .filter_map(|spec| self.truth.tools.get(&spec.tool_id).map(|truth| SyntheticTool { spec, truth }))
    }

    /// Recomputes solvability after a price or budget transform. The
    /// reference set stays as generated so repeated perturbations compose.
    pub(crate) fn refresh_solvability(&mut self) {
        let solvable = min_cover(self).is_some_and(|cover| cover.cost <= self.task.budget);
        self.truth.ground_truth_solvable = Some(solvable);
    }
}
