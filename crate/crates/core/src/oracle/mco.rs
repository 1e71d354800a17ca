use serde::{Deserialize, Serialize};

use super::feedback::{render_rejection, RejectReason, TraceEntry};
use super::WorldModel;
use crate::domain::{Action, BlockKind, ContextBlock, MarketSnapshot, RunCounters};
use crate::engine::{Consultation, Oracle, OracleError, OracleReply, Policy, PolicyError};
use crate::money::Credits;
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McoConfig {
    /// Maximum simulated tool calls in one lookahead, the proposed call included.
    pub rollout_horizon: u32,
}

impl Default for McoConfig {
    fn default() -> Self {
        McoConfig { rollout_horizon: 10 }
    }
}

/// Single stochastic lookahead: alternate world model and policy from the
/// proposed call until the policy answers, then compare the summed prices
/// with the remaining budget.
pub struct MonteCarloOracle<'a> {
    policy: &'a dyn Policy,
    world: &'a dyn WorldModel,
    market: MarketSnapshot,
    config: McoConfig,
    rng: StreamRng,
    counters: RunCounters,
}

struct Lookahead {
    calls: Vec<(String, Credits)>,
    answered: bool,
}

impl<'a> MonteCarloOracle<'a> {
    pub fn new(
        policy: &'a dyn Policy,
        world: &'a dyn WorldModel,
        market: MarketSnapshot,
        config: McoConfig,
        rng: StreamRng,
    ) -> Self {
        MonteCarloOracle { policy, world, market, config, rng, counters: RunCounters::default() }
    }

    fn lookahead(&mut self, request: &Consultation<'_>) -> Result<Lookahead, OracleError> {
        let mut sim = request.history.clone();
        let mut step = sim.last_step_index() + 1;
        let mut reasoning = request.reasoning.to_string();
        let mut action = request.action.clone();
        let mut calls = Vec::new();
        self.counters.rollouts += 1;
        loop {
            let Action::ToolCall { tool_id, arguments } = &action else {
                return Ok(Lookahead { calls, answered: true });
            };
            if calls.len() >= self.config.rollout_horizon as usize {
                return Ok(Lookahead { calls, answered: false });
            }
            let Some(tool) = self.market.get(tool_id) else {
                return Ok(Lookahead { calls, answered: false });
            };
            calls.push((tool.tool_id.clone(), tool.per_call_cost.clone()));
            self.counters.simulated_calls += 1;
            let observed = match self.world.simulate(tool, arguments, &mut self.rng) {
                Ok(sim) => sim,
                Err(_) => return Ok(Lookahead { calls, answered: false }),
            };
            self.counters.tokens += observed.tokens;
            sim.push(ContextBlock { kind: BlockKind::Reasoning, payload: nonempty(reasoning), step_index: step })
                .expect("simulated blocks are ordered");
            sim.push(ContextBlock { kind: BlockKind::Action, payload: action.to_string(), step_index: step })
                .expect("simulated blocks are ordered");
            sim.push(ContextBlock { kind: BlockKind::Observation, payload: observed.text, step_index: step })
                .expect("simulated blocks are ordered");
            step += 1;
            match self.policy.propose(&sim) {
                Ok(next) => {
                    self.counters.tokens += next.tokens;
                    reasoning = next.reasoning;
                    action = next.action;
                }
                Err(PolicyError::Malformed(_)) => return Ok(Lookahead { calls, answered: false }),
                Err(PolicyError::Transient(msg)) => return Err(OracleError::Transient(msg)),
            }
        }
    }
}

pub(super) fn nonempty(text: String) -> String {
    if text.is_empty() {
        "(empty)".to_string()
    } else {
        text
    }
}

impl Oracle for MonteCarloOracle<'_> {
    fn consult(&mut self, request: &Consultation<'_>) -> Result<OracleReply, OracleError> {
        if request.action.is_answer() {
            return Ok(OracleReply::Accept);
        }
        let lookahead = self.lookahead(request)?;
        let total: Credits = lookahead.calls.iter().map(|(_, c)| c).sum();
        if lookahead.answered && &total <= request.remaining {
            return Ok(OracleReply::Accept);
        }
        let trace: Vec<TraceEntry> = lookahead
            .calls
            .into_iter()
            .map(|(action, price)| TraceEntry { action, price, p_success: None, expected_cost: None })
            .collect();
        let reason = if lookahead.answered { RejectReason::OverBudget } else { RejectReason::Overflow };
        Ok(OracleReply::Reject { feedback: render_rejection(reason, request.remaining, Some(&total), &trace) })
    }

    fn counters(&self) -> RunCounters {
        self.counters.clone()
    }
}
