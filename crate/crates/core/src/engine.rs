//! The oracle-gated agent loop.
//!
//! Each step the policy proposes `(reasoning, action)`. Answers end the run
//! without consulting the oracle. A tool call goes to the oracle; accepted
//! calls run against the real environment and are charged, rejected calls are
//! free and the oracle's feedback takes the place of the observation.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    initial_history, render_market, spending_line, Action, BlockKind, ContextBlock, CostDisclosure, DomainError,
    History, MarketSnapshot, RunCounters, StepRecord, TaskInstance, Terminal, ToolSpec, Trajectory, Verdict,
};
use crate::money::Credits;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyStep {
    pub reasoning: String,
    pub action: Action,
    /// Tokens consumed producing this step, as reported by the backend.
    pub tokens: u64,
}

impl PolicyStep {
    pub fn new(reasoning: impl Into<String>, action: Action) -> Self {
        PolicyStep { reasoning: reasoning.into(), action, tokens: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("malformed action: {0}")]
    Malformed(String),
    #[error("transient backend failure: {0}")]
    Transient(String),
}

/// Produces the next `(reasoning, action)` from the history alone. Oracles
/// query the same policy on simulated histories, so implementations must not
/// keep per-call state that a lookahead would disturb.
pub trait Policy: Send + Sync {
    fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError>;
}

/// The real tool environment. An `Err` is still a completed (and charged)
/// call whose observation is the error text.
pub trait Environment: Send + Sync {
    fn execute(&self, tool: &ToolSpec, arguments: &str, rng: &mut dyn RngCore) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleReply {
    Accept,
    Reject { feedback: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("transient oracle backend failure: {0}")]
    Transient(String),
}

pub struct Consultation<'a> {
    pub history: &'a History,
    pub reasoning: &'a str,
    pub action: &'a Action,
    pub remaining: &'a Credits,
}

pub trait Oracle {
    fn consult(&mut self, request: &Consultation<'_>) -> Result<OracleReply, OracleError>;

    /// The oracle's current view of the market, when it prunes tools.
    fn market(&self) -> Option<&MarketSnapshot> {
        None
    }

    /// Simulation-side counters (rollouts, simulated calls, cache hits, tokens).
    fn counters(&self) -> RunCounters {
        RunCounters::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub max_real_steps: u32,
    pub max_rejections_per_step: u32,
    pub validate_tool_ids: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { max_real_steps: 16, max_rejections_per_step: 3, validate_tool_ids: true }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_real_steps == 0 {
            return Err(EngineError::Config("max_real_steps must be at least 1".into()));
        }
        if self.max_rejections_per_step == 0 {
            return Err(EngineError::Config("max_rejections_per_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Upper bound on policy queries for one run.
    pub fn query_bound(&self) -> u64 {
        u64::from(self.max_real_steps) * (u64::from(self.max_rejections_per_step) + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftMode {
    /// No prices, no budget.
    Raw,
    /// Prices in the market, spending lines after every observation.
    Prompt,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("transient failure: {0}")]
    Transient(String),
}

impl From<OracleError> for EngineError {
    fn from(err: OracleError) -> Self {
        match err {
            OracleError::Transient(msg) => EngineError::Transient(msg),
        }
    }
}

enum Gate<'a> {
    Enforce(&'a mut dyn Oracle),
    Soft(SoftMode),
}

/// Runs one task with an oracle gating every tool call.
pub fn run_task(
    task: &TaskInstance,
    policy: &dyn Policy,
    env: &dyn Environment,
    oracle: &mut dyn Oracle,
    config: &EngineConfig,
) -> Result<Trajectory, EngineError> {
    run_loop(task, policy, env, Gate::Enforce(oracle), config)
}

/// Runs one task without an oracle; the budget may be exceeded.
pub fn run_soft(
    task: &TaskInstance,
    policy: &dyn Policy,
    env: &dyn Environment,
    config: &EngineConfig,
    mode: SoftMode,
) -> Result<Trajectory, EngineError> {
    run_loop(task, policy, env, Gate::Soft(mode), config)
}

fn block(kind: BlockKind, payload: impl Into<String>, step: u32) -> ContextBlock {
    let payload = payload.into();
    let payload = if payload.is_empty() && kind != BlockKind::Observation { "(empty)".to_string() } else { payload };
    ContextBlock { kind, payload, step_index: step }
}

fn run_loop(
    task: &TaskInstance,
    policy: &dyn Policy,
    env: &dyn Environment,
    mut gate: Gate<'_>,
    config: &EngineConfig,
) -> Result<Trajectory, EngineError> {
    config.validate()?;
    task.validate()?;
    let disclosure = match gate {
        Gate::Soft(SoftMode::Raw) => CostDisclosure::Hidden,
        _ => CostDisclosure::Shown,
    };
    let mut history = initial_history(task, disclosure)?;
    let mut env_rng = rng::stream(task.seed, rng::ENV);
    let mut market = task.market.clone();
    let mut remaining = task.budget.clone();
    let mut spent = Credits::zero();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut counters = RunCounters::default();
    let mut real_steps = 0u32;
    let mut rejections = 0u32;
    let mut step = 0u32;

    let cap_terminal = |market: &MarketSnapshot, remaining: &Credits| {
        if market.any_affordable(remaining) {
            Terminal::StepCapReached
        } else {
            Terminal::BudgetExhausted
        }
    };

    let terminal = loop {
        if real_steps >= config.max_real_steps {
            break Terminal::StepCapReached;
        }
        step += 1;
        counters.policy_queries += 1;
        let proposal = match policy.propose(&history) {
            Ok(p) => p,
            Err(PolicyError::Transient(msg)) => return Err(EngineError::Transient(msg)),
            Err(PolicyError::Malformed(msg)) => {
                counters.malformed_actions += 1;
                history.push(block(BlockKind::Observation, format!("Error: malformed action ({msg})."), step))?;
                rejections += 1;
                if rejections >= config.max_rejections_per_step {
                    break cap_terminal(&market, &remaining);
                }
                continue;
            }
        };
        counters.tokens += proposal.tokens;
        let PolicyStep { reasoning, action, .. } = proposal;
        let h_t = history.clone();
        history.push(block(BlockKind::Reasoning, reasoning.clone(), step))?;
        history.push(block(BlockKind::Action, action.to_string(), step))?;

        let (tool_id, arguments) = match &action {
            Action::Answer { answer_text } => {
                steps.push(StepRecord {
                    index: step,
                    reasoning,
                    action: action.clone(),
                    observation: String::new(),
                    executed: false,
                    cost_charged: Credits::zero(),
                    oracle_verdict: Verdict::NotConsulted,
                    budget_after: remaining.clone(),
                });
                break Terminal::Answered { text: answer_text.clone() };
            }
            Action::ToolCall { tool_id, arguments } => (tool_id.clone(), arguments.clone()),
        };

        let tool = match market.get(&tool_id) {
            Some(t) => Some(t.clone()),
            None if !config.validate_tool_ids => task.market.get(&tool_id).cloned(),
            None => None,
        };
        let Some(tool) = tool else {
            let observation = format!("Error: unknown tool `{tool_id}`. Choose a tool listed in the market.");
            history.push(block(BlockKind::Observation, observation.clone(), step))?;
            steps.push(StepRecord {
                index: step,
                reasoning,
                action,
                observation,
                executed: false,
                cost_charged: Credits::zero(),
                oracle_verdict: Verdict::NotConsulted,
                budget_after: remaining.clone(),
            });
            rejections += 1;
            if rejections >= config.max_rejections_per_step {
                break cap_terminal(&market, &remaining);
            }
            continue;
        };

        let verdict = match &mut gate {
            Gate::Soft(_) => Verdict::NotConsulted,
            Gate::Enforce(oracle) => {
                counters.oracle_consults += 1;
                let reply = oracle.consult(&Consultation {
                    history: &h_t,
                    reasoning: &reasoning,
                    action: &action,
                    remaining: &remaining,
                })?;
                let pruned = sync_market(&mut market, oracle.market());
                match reply {
                    OracleReply::Accept => {
                        if pruned {
                            history.push(block(BlockKind::Market, render_market(&market, disclosure), step))?;
                        }
                        Verdict::Accepted
                    }
                    OracleReply::Reject { feedback } => {
                        let feedback = if feedback.is_empty() { "Rejected by oracle.".to_string() } else { feedback };
                        history.push(block(BlockKind::OracleFeedback, feedback.clone(), step))?;
                        if pruned {
                            history.push(block(BlockKind::Market, render_market(&market, disclosure), step))?;
                        }
                        steps.push(StepRecord {
                            index: step,
                            reasoning,
                            action,
                            observation: feedback,
                            executed: false,
                            cost_charged: Credits::zero(),
                            oracle_verdict: Verdict::Rejected,
                            budget_after: remaining.clone(),
                        });
                        counters.rejections += 1;
                        rejections += 1;
                        if rejections >= config.max_rejections_per_step {
                            break cap_terminal(&market, &remaining);
                        }
                        continue;
                    }
                }
            }
        };

        let mut observation = match env.execute(&tool, &arguments, &mut env_rng) {
            Ok(text) => text,
            Err(err) => format!("Error: tool execution failed ({err})."),
        };
        let cost = tool.per_call_cost.clone();
        remaining -= &cost;
        spent += &cost;
        if let Gate::Soft(SoftMode::Prompt) = gate {
            if !observation.is_empty() {
                observation.push('\n');
            }
            observation.push_str(&spending_line(&spent, &remaining));
        }
        history.push(block(BlockKind::Observation, observation.clone(), step))?;
        steps.push(StepRecord {
            index: step,
            reasoning,
            action,
            observation,
            executed: true,
            cost_charged: cost,
            oracle_verdict: verdict,
            budget_after: remaining.clone(),
        });
        counters.real_calls += 1;
        real_steps += 1;
        rejections = 0;
    };

    if let Gate::Enforce(oracle) = &gate {
        let sim = oracle.counters();
        counters.rollouts += sim.rollouts;
        counters.simulated_calls += sim.simulated_calls;
        counters.cache_hits += sim.cache_hits;
        counters.tokens += sim.tokens;
    }

    Ok(Trajectory {
        task: task.clone(),
        steps,
        terminal,
        total_cost: spent,
        judge_score: None,
        reward: None,
        counters,
    })
}

/// Adopts the oracle's pruned market; returns whether it shrank.
fn sync_market(current: &mut MarketSnapshot, view: Option<&MarketSnapshot>) -> bool {
    match view {
        Some(view) if view.len() < current.len() => {
            *current = view.clone();
            true
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{MarketSnapshot, ToolSpec};
    use crate::oracle::{PermissiveOracle, RejectAllOracle};
    use std::sync::atomic::{AtomicU64, Ordering};

    fn tool(id: &str, cost: i64) -> ToolSpec {
        ToolSpec {
            tool_id: id.into(),
            name: id.into(),
            description: String::new(),
            input_schema: "{}".into(),
            per_call_cost: Credits::from_int(cost),
        }
    }

    fn task(costs: &[(&str, i64)], budget: i64) -> TaskInstance {
        TaskInstance {
            task_id: "task".into(),
            query: "q".into(),
            budget: Credits::from_int(budget),
            market: MarketSnapshot::new(costs.iter().map(|(id, c)| tool(id, *c)).collect()),
            seed: 3,
        }
    }

    /// Emits the i-th script entry where i counts executed observations.
    struct Script(Vec<Action>);

    impl Policy for Script {
        fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError> {
            let done = history.blocks().filter(|b| b.kind == BlockKind::Observation).count();
            let action = self.0.get(done).cloned().unwrap_or_else(|| Action::answer("done"));
            Ok(PolicyStep::new("thinking", action))
        }
    }

    struct Echo;

    impl Environment for Echo {
        fn execute(&self, tool: &ToolSpec, _: &str, _: &mut dyn RngCore) -> Result<String, String> {
            Ok(format!("ok from {}", tool.tool_id))
        }
    }

    struct Failing;

    impl Environment for Failing {
        fn execute(&self, _: &ToolSpec, _: &str, _: &mut dyn RngCore) -> Result<String, String> {
            Err("503".into())
        }
    }

    #[test]
    fn immediate_answer() {
        let t = task(&[("a", 9)], 50);
        let traj = run_task(&t, &Script(vec![]), &Echo, &mut PermissiveOracle, &EngineConfig::default()).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert!(traj.total_cost.is_zero());
        assert_eq!(traj.terminal, Terminal::Answered { text: "done".into() });
        assert_eq!(traj.steps[0].oracle_verdict, Verdict::NotConsulted);
    }

    #[test]
    fn three_calls_total_43() {
        let t = task(&[("cashflow", 9), ("income", 11), ("balance", 23)], 50);
        let script = Script(vec![Action::call("cashflow", "{}"), Action::call("income", "{}"), Action::call("balance", "{}")]);
        let traj = run_task(&t, &script, &Echo, &mut PermissiveOracle, &EngineConfig::default()).unwrap();
        assert_eq!(traj.total_cost, Credits::from_int(43));
        assert!(matches!(traj.terminal, Terminal::Answered { .. }));
        let ledger: Vec<_> = traj.steps.iter().map(|s| s.budget_after.clone()).collect();
        assert_eq!(ledger, [41, 30, 7, 7].map(Credits::from_int));
    }

    #[test]
    fn always_rejected_call_hits_step_cap() {
        // By hand: three rejected proposals with max_rejections_per_step = 3,
        // while a cheaper tool is still affordable.
        let t = task(&[("pricey", 80), ("cheap", 5)], 50);
        let script = Script(vec![Action::call("pricey", "{}")]);
        let cfg = EngineConfig { max_rejections_per_step: 3, ..EngineConfig::default() };
        let mut oracle = RejectAllOracle;
        let traj = run_task(&t, &script, &Echo, &mut oracle, &cfg).unwrap();
        assert_eq!(traj.terminal, Terminal::StepCapReached);
        assert!(traj.total_cost.is_zero());
        assert_eq!(traj.steps.len(), 3);
        assert!(traj.steps.iter().all(|s| s.oracle_verdict == Verdict::Rejected));
        assert_eq!(traj.counters.policy_queries, 3);
    }

    #[test]
    fn rejection_cap_without_affordable_tool_is_budget_exhaustion() {
        let t = task(&[("pricey", 80)], 50);
        let script = Script(vec![Action::call("pricey", "{}")]);
        let traj = run_task(&t, &script, &Echo, &mut RejectAllOracle, &EngineConfig::default()).unwrap();
        assert_eq!(traj.terminal, Terminal::BudgetExhausted);
    }

    #[test]
    fn prompt_mode_reports_overspend() {
        let t = task(&[("cash_flow", 38), ("balance", 23)], 50);
        let script = Script(vec![Action::call("cash_flow", "{}"), Action::call("balance", "{}")]);
        let traj = run_soft(&t, &script, &Echo, &EngineConfig::default(), SoftMode::Prompt).unwrap();
        assert!(traj.steps[0].observation.ends_with("Total Spent: 38. Remaining Budget: 12."));
        assert!(traj.steps[1].observation.ends_with("Total Spent: 61. Remaining Budget: -11."));
        assert!(!traj.is_feasible());
        assert_eq!(traj.steps[1].oracle_verdict, Verdict::NotConsulted);
    }

    #[test]
    fn raw_mode_hides_costs() {
        let t = task(&[("cash_flow", 38)], 50);
        let seen = std::sync::Mutex::new(Vec::new());
        struct Spy<'a>(&'a std::sync::Mutex<Vec<String>>);
        impl Policy for Spy<'_> {
            fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError> {
                let mut seen = self.0.lock().unwrap();
                seen.extend(history.blocks().map(|b| b.payload.clone()));
                let action = if seen.len() > 4 { Action::answer("x") } else { Action::call("cash_flow", "{}") };
                Ok(PolicyStep::new("r", action))
            }
        }
        let traj = run_soft(&t, &Spy(&seen), &Echo, &EngineConfig::default(), SoftMode::Raw).unwrap();
        let seen = seen.into_inner().unwrap();
        assert!(seen.iter().all(|p| !p.contains("38") && !p.contains("50")));
        assert!(traj.steps.iter().all(|s| !s.observation.contains("Remaining")));
    }

    #[test]
    fn prompt_mode_zero_calls_is_feasible() {
        let t = task(&[("a", 9)], 50);
        let traj = run_soft(&t, &Script(vec![]), &Echo, &EngineConfig::default(), SoftMode::Prompt).unwrap();
        assert!(traj.total_cost.is_zero());
        assert!(traj.is_feasible());
    }

    #[test]
    fn unknown_tool_becomes_error_observation() {
        let t = task(&[("a", 9)], 50);
        let script = Script(vec![Action::call("ghost", "{}"); 3]);
        let traj = run_task(&t, &script, &Echo, &mut PermissiveOracle, &EngineConfig::default()).unwrap();
        assert_eq!(traj.terminal, Terminal::StepCapReached);
        assert_eq!(traj.steps.len(), 3);
        assert!(traj.steps[0].observation.contains("unknown tool `ghost`"));
        assert!(traj.total_cost.is_zero());
    }

    #[test]
    fn environment_failure_is_still_charged() {
        let t = task(&[("a", 9)], 50);
        let script = Script(vec![Action::call("a", "{}")]);
        let traj = run_task(&t, &script, &Failing, &mut PermissiveOracle, &EngineConfig::default()).unwrap();
        assert_eq!(traj.total_cost, Credits::from_int(9));
        assert!(traj.steps[0].observation.contains("503"));
    }

    #[test]
    fn malformed_actions_count_against_rejection_cap() {
        struct Garbage(AtomicU64);
        impl Policy for Garbage {
            fn propose(&self, _: &History) -> Result<PolicyStep, PolicyError> {
                self.0.fetch_add(1, Ordering::Relaxed);
                Err(PolicyError::Malformed("no envelope".into()))
            }
        }
        let t = task(&[("a", 9)], 50);
        let g = Garbage(AtomicU64::new(0));
        let traj = run_task(&t, &g, &Echo, &mut PermissiveOracle, &EngineConfig::default()).unwrap();
        assert_eq!(g.0.load(Ordering::Relaxed), 3);
        assert_eq!(traj.counters.malformed_actions, 3);
        assert!(traj.steps.is_empty());
        assert_eq!(traj.terminal, Terminal::StepCapReached);
    }

    #[test]
    fn transient_policy_error_aborts() {
        struct Down;
        impl Policy for Down {
            fn propose(&self, _: &History) -> Result<PolicyStep, PolicyError> {
                Err(PolicyError::Transient("timeout".into()))
            }
        }
        let t = task(&[("a", 9)], 50);
        assert!(matches!(
            run_task(&t, &Down, &Echo, &mut PermissiveOracle, &EngineConfig::default()),
            Err(EngineError::Transient(_))
        ));
    }

    #[test]
    fn real_step_cap() {
        let t = task(&[("a", 0)], 50);
        let script = Script(vec![Action::call("a", "{}"); 100]);
        let cfg = EngineConfig { max_real_steps: 4, ..EngineConfig::default() };
        let traj = run_task(&t, &script, &Echo, &mut PermissiveOracle, &cfg).unwrap();
        assert_eq!(traj.terminal, Terminal::StepCapReached);
        assert_eq!(traj.counters.real_calls, 4);
    }

    #[test]
    fn config_validation() {
        let t = task(&[("a", 0)], 50);
        let cfg = EngineConfig { max_real_steps: 0, ..EngineConfig::default() };
        assert!(matches!(
            run_task(&t, &Script(vec![]), &Echo, &mut PermissiveOracle, &cfg),
            Err(EngineError::Config(_))
        ));
    }
}
