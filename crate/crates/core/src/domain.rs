//! Domain types shared by every other module: contexts, markets, tasks,
//! actions, trajectories and the budget ledger.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{exact, format_rational, Credits, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("block step index {got} is below the history tail index {tail}")]
    Ordering { tail: u32, got: u32 },
    #[error("{0:?} block must have a non-empty payload")]
    EmptyPayload(BlockKind),
    #[error("judge score {0} is outside [0, 1]")]
    ScoreRange(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    System,
    Query,
    Budget,
    Market,
    Reasoning,
    Action,
    Observation,
    OracleFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextBlock {
    pub kind: BlockKind,
    pub payload: String,
    pub step_index: u32,
}

impl ContextBlock {
    pub fn new(kind: BlockKind, payload: impl Into<String>, step_index: u32) -> Result<Self, DomainError> {
        let payload = payload.into();
        if payload.is_empty() && kind != BlockKind::Observation {
            return Err(DomainError::EmptyPayload(kind));
        }
        Ok(ContextBlock { kind, payload, step_index })
    }
}

/// Append-only interaction context. Cloning is cheap; blocks are shared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    blocks: Vec<Arc<ContextBlock>>,
}

impl History {
    /// `h0 = [System, Query, Budget, Market]`.
    pub fn initial(system: &str, query: &str, budget: &str, market: &str) -> Result<Self, DomainError> {
        let blocks = [
            (BlockKind::System, system),
            (BlockKind::Query, query),
            (BlockKind::Budget, budget),
            (BlockKind::Market, market),
        ]
        .into_iter()
        .map(|(kind, text)| ContextBlock::new(kind, text, 0).map(Arc::new))
        .collect::<Result<Vec<_>, _>>()?;
        Ok(History { blocks })
    }

    pub fn append(&self, block: ContextBlock) -> Result<History, DomainError> {
        let mut next = self.clone();
        next.push(block)?;
        Ok(next)
    }

    /// In-place form of [`History::append`]; prior blocks are untouched.
    pub fn push(&mut self, block: ContextBlock) -> Result<(), DomainError> {
        let tail = self.last_step_index();
        if block.step_index < tail {
            return Err(DomainError::Ordering { tail, got: block.step_index });
        }
        if block.payload.is_empty() && block.kind != BlockKind::Observation {
            return Err(DomainError::EmptyPayload(block.kind));
        }
        self.blocks.push(Arc::new(block));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> impl DoubleEndedIterator<Item = &ContextBlock> + ExactSizeIterator {
        self.blocks.iter().map(|b| b.as_ref())
    }

    pub fn get(&self, index: usize) -> Option<&ContextBlock> {
        self.blocks.get(index).map(|b| b.as_ref())
    }

    pub fn last(&self) -> Option<&ContextBlock> {
        self.blocks.last().map(|b| b.as_ref())
    }

    pub fn last_step_index(&self) -> u32 {
        self.blocks.last().map_or(0, |b| b.step_index)
    }

    /// Most recent block of `kind`.
    pub fn latest(&self, kind: BlockKind) -> Option<&ContextBlock> {
        self.blocks().rev().find(|b| b.kind == kind)
    }

    pub fn query(&self) -> &str {
        &self.blocks[1].payload
    }

    /// Tool ids in the most recent market rendering.
    pub fn visible_tools(&self) -> Vec<MarketLine> {
        self.latest(BlockKind::Market)
            .map(|b| parse_market_block(&b.payload))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: String,
    pub name: String,
    pub description: String,
    pub input_schema: String,
    pub per_call_cost: Credits,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub tools: Vec<ToolSpec>,
}

impl MarketSnapshot {
    pub fn new(tools: Vec<ToolSpec>) -> Self {
        MarketSnapshot { tools }
    }

    pub fn get(&self, tool_id: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.tool_id == tool_id)
    }

    pub fn contains(&self, tool_id: &str) -> bool {
        self.get(tool_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.tool_id.as_str())
    }

    pub fn without(&self, excluded: &BTreeSet<String>) -> MarketSnapshot {
        MarketSnapshot {
            tools: self.tools.iter().filter(|t| !excluded.contains(&t.tool_id)).cloned().collect(),
        }
    }

    pub fn max_cost(&self) -> Option<&Credits> {
        self.tools.iter().map(|t| &t.per_call_cost).max()
    }

    /// Whether some tool costs at most `remaining`.
    pub fn any_affordable(&self, remaining: &Credits) -> bool {
        self.tools.iter().any(|t| &t.per_call_cost <= remaining)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub query: String,
    pub budget: Credits,
    pub market: MarketSnapshot,
    pub seed: u64,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.budget.is_positive() {
            return Err(DomainError::InvalidTask(format!("budget must be positive, got {}", self.budget)));
        }
        if self.market.is_empty() {
            return Err(DomainError::InvalidTask("market is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for tool in &self.market.tools {
            if tool.per_call_cost.is_negative() {
                return Err(DomainError::InvalidTask(format!("tool {} has negative cost", tool.tool_id)));
            }
            if !seen.insert(tool.tool_id.as_str()) {
                return Err(DomainError::InvalidTask(format!("duplicate tool id {}", tool.tool_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall { tool_id: String, arguments: String },
    Answer { answer_text: String },
}

impl Action {
    pub fn call(tool_id: impl Into<String>, arguments: impl Into<String>) -> Self {
        Action::ToolCall { tool_id: tool_id.into(), arguments: arguments.into() }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Action::Answer { answer_text: text.into() }
    }

    pub fn tool_id(&self) -> Option<&str> {
        match self {
            Action::ToolCall { tool_id, .. } => Some(tool_id),
            Action::Answer { .. } => None,
        }
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, Action::Answer { .. })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ToolCall { tool_id, arguments } => write!(f, "CALL {tool_id} {arguments}"),
            Action::Answer { answer_text } => write!(f, "ANSWER {answer_text}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    NotConsulted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub reasoning: String,
    pub action: Action,
    pub observation: String,
    /// Whether the call actually reached the environment.
    pub executed: bool,
    pub cost_charged: Credits,
    pub oracle_verdict: Verdict,
    pub budget_after: Credits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terminal {
    Answered { text: String },
    BudgetExhausted,
    StepCapReached,
}

impl Terminal {
    pub fn answer(&self) -> Option<&str> {
        match self {
            Terminal::Answered { text } => Some(text),
            _ => None,
        }
    }
}

/// Structural efficiency counters for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub policy_queries: u64,
    pub real_calls: u64,
    pub rejections: u64,
    pub malformed_actions: u64,
    pub oracle_consults: u64,
    pub rollouts: u64,
    pub simulated_calls: u64,
    pub cache_hits: u64,
    pub tokens: u64,
}

impl RunCounters {
    pub fn merge(&mut self, other: &RunCounters) {
        self.policy_queries += other.policy_queries;
        self.real_calls += other.real_calls;
        self.rejections += other.rejections;
        self.malformed_actions += other.malformed_actions;
        self.oracle_consults += other.oracle_consults;
        self.rollouts += other.rollouts;
        self.simulated_calls += other.simulated_calls;
        self.cache_hits += other.cache_hits;
        self.tokens += other.tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskInstance,
    pub steps: Vec<StepRecord>,
    pub terminal: Terminal,
    pub total_cost: Credits,
    #[serde(with = "exact::option", default)]
    pub judge_score: Option<Rational>,
    #[serde(with = "exact::option", default)]
    pub reward: Option<Rational>,
    #[serde(default)]
    pub counters: RunCounters,
}

impl Trajectory {
    pub fn is_feasible(&self) -> bool {
        self.total_cost <= self.task.budget
    }

    /// Per-call prices of every executed tool call.
    pub fn executed_prices(&self) -> impl Iterator<Item = &Credits> {
        self.steps.iter().filter(|s| s.executed).map(|s| &s.cost_charged)
    }
}

/// `R(tau) = J * 1[total_cost <= budget]`; stores score and reward on the
/// trajectory.
pub fn compute_reward(trajectory: &mut Trajectory, judge_score: &Rational) -> Result<Rational, DomainError> {
    if judge_score < &Rational::zero() || judge_score > &Rational::one() {
        return Err(DomainError::ScoreRange(format_rational(judge_score)));
    }
    let reward = if trajectory.is_feasible() { judge_score.clone() } else { Rational::zero() };
    trajectory.judge_score = Some(judge_score.clone());
    trajectory.reward = Some(reward.clone());
    Ok(reward)
}

// Canonical text rendering ------------------------------------------------

pub const SYSTEM_PROMPT: &str = "You are a tool-using agent. Think step by step, then either call exactly one \
tool from the market or give the final answer. Every tool call is charged at its listed price.";

const MARKET_HEADER_PRICED: &str = "Available tools (id | name | cost | description):";
const MARKET_HEADER_UNPRICED: &str = "Available tools (id | name | description):";

/// Whether prices and the budget are shown to the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostDisclosure {
    Hidden,
    Shown,
}

/// One tool per line: `id | name | cost | description` (cost column absent
/// when hidden).
pub fn render_market(market: &MarketSnapshot, disclosure: CostDisclosure) -> String {
    let mut out = String::new();
    match disclosure {
        CostDisclosure::Shown => out.push_str(MARKET_HEADER_PRICED),
        CostDisclosure::Hidden => out.push_str(MARKET_HEADER_UNPRICED),
    }
    for tool in &market.tools {
        out.push('\n');
        let description = tool.description.replace('\n', " ");
        match disclosure {
            CostDisclosure::Shown => {
                out.push_str(&format!("{} | {} | {} | {}", tool.tool_id, tool.name, tool.per_call_cost, description))
            }
            CostDisclosure::Hidden => out.push_str(&format!("{} | {} | {}", tool.tool_id, tool.name, description)),
        }
    }
    if market.is_empty() {
        out.push_str("\n(none)");
    }
    out
}

pub fn render_budget(budget: &Credits, disclosure: CostDisclosure) -> String {
    match disclosure {
        CostDisclosure::Shown => format!("Budget: {budget} credits (hard limit)"),
        CostDisclosure::Hidden => "Budget: not disclosed".to_string(),
    }
}

pub fn initial_history(task: &TaskInstance, disclosure: CostDisclosure) -> Result<History, DomainError> {
    History::initial(
        SYSTEM_PROMPT,
        &task.query,
        &render_budget(&task.budget, disclosure),
        &render_market(&task.market, disclosure),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketLine {
    pub tool_id: String,
    pub name: String,
    pub cost: Option<Credits>,
    pub description: String,
}

pub fn parse_market_block(payload: &str) -> Vec<MarketLine> {
    let mut lines = payload.lines();
    let priced = match lines.next() {
        Some(MARKET_HEADER_PRICED) => true,
        Some(MARKET_HEADER_UNPRICED) => false,
        _ => return Vec::new(),
    };
    lines
        .filter_map(|line| {
            let fields: Vec<&str> = line.splitn(if priced { 4 } else { 3 }, " | ").collect();
            match (priced, fields.as_slice()) {
                (true, [id, name, cost, desc]) => Some(MarketLine {
                    tool_id: id.to_string(),
                    name: name.to_string(),
                    cost: cost.parse().ok(),
                    description: desc.to_string(),
                }),
                (false, [id, name, desc]) => Some(MarketLine {
                    tool_id: id.to_string(),
                    name: name.to_string(),
                    cost: None,
                    description: desc.to_string(),
                }),
                _ => None,
            }
        })
        .collect()
}

/// Suffix appended to observations when spending is disclosed.
pub fn spending_line(spent: &Credits, remaining: &Credits) -> String {
    format!("Total Spent: {spent}. Remaining Budget: {remaining}.")
}
