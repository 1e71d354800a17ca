use std::collections::{BTreeSet, VecDeque};

use num_traits::One;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::feedback::{render_rejection, RejectReason, TraceEntry};
use super::geometric::geometric_cost;
use super::mco::nonempty;
use super::{ActionMatch, ConditionalGenerator, IntentionPredictor};
use crate::domain::{
    render_market, Action, BlockKind, ContextBlock, CostDisclosure, History, MarketSnapshot, RunCounters,
};
use crate::engine::{Consultation, Oracle, OracleError, OracleReply, Policy, PolicyError};
use crate::money::{exact, Credits, Probability, Rational};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntentConfig {
    /// Risk preference; larger is more conservative.
    #[serde(with = "exact")]
    pub gamma: Rational,
    /// Blacklist threshold on the predicted success probability.
    pub delta: Probability,
    pub rho_min: Probability,
    pub rollout_horizon: u32,
    pub enable_rollout_cache: bool,
    pub enable_last_call_cache: bool,
    pub enable_blacklist: bool,
    pub action_match: ActionMatch,
}

impl Default for IntentConfig {
    fn default() -> Self {
        IntentConfig {
            gamma: Rational::new(1.into(), 2.into()),
            delta: Probability::new(Rational::new(1.into(), 10.into())).expect("0.1"),
            rho_min: Probability::new(Rational::new(1.into(), 1000.into())).expect("0.001"),
            rollout_horizon: 10,
            enable_rollout_cache: true,
            enable_last_call_cache: true,
            enable_blacklist: true,
            action_match: ActionMatch::ToolNameOnly,
        }
    }
}

impl IntentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.gamma <= Rational::from_integer(0.into()) {
            return Err("gamma must be positive".into());
        }
        if self.delta.as_rational() >= &Rational::one() {
            return Err("delta must be below 1".into());
        }
        if self.rho_min.is_zero() {
            return Err("rho_min must be positive".into());
        }
        if self.rollout_horizon == 0 {
            return Err("rollout_horizon must be at least 1".into());
        }
        Ok(())
    }

    pub fn without_caches(&self) -> IntentConfig {
        IntentConfig { enable_rollout_cache: false, enable_last_call_cache: false, ..self.clone() }
    }
}

/// Per-task oracle memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleState {
    /// Future actions of the last accepted ideal plan.
    pub rollout_cache: VecDeque<Action>,
    pub last_rejected: Option<Action>,
    pub blacklist: BTreeSet<String>,
    pub pruned_market: MarketSnapshot,
    full_market: MarketSnapshot,
}

impl OracleState {
    pub fn new(market: MarketSnapshot) -> Self {
        OracleState {
            rollout_cache: VecDeque::new(),
            last_rejected: None,
            blacklist: BTreeSet::new(),
            pruned_market: market.clone(),
            full_market: market,
        }
    }

    pub fn full_market(&self) -> &MarketSnapshot {
        &self.full_market
    }

    fn ban(&mut self, tool_id: &str) -> bool {
        if self.blacklist.insert(tool_id.to_string()) {
            self.pruned_market = self.full_market.without(&self.blacklist);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimulatedStep {
    pub reasoning: String,
    pub action: Action,
    pub observation: String,
    pub price: Credits,
    pub rho: Probability,
    pub calibrated_cost: Credits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutOutcome {
    Answered,
    /// Horizon reached, or a simulation component failed.
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdealRollout {
    pub steps: Vec<SimulatedStep>,
    pub outcome: RolloutOutcome,
    pub tokens: u64,
}

impl IdealRollout {
    /// Sum of calibrated step costs.
    pub fn sigma(&self) -> Credits {
        self.steps.iter().map(|s| &s.calibrated_cost).sum()
    }

    pub fn future_actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().skip(1).map(|s| &s.action)
    }

    fn trace(&self) -> Vec<TraceEntry> {
        self.steps
            .iter()
            .map(|s| TraceEntry {
                action: s.action.tool_id().unwrap_or_default().to_string(),
                price: s.price.clone(),
                p_success: Some(s.rho.clone()),
                expected_cost: Some(s.calibrated_cost.clone()),
            })
            .collect()
    }
}

/// Simulates the plan in which every call satisfies its intention.
///
/// Each step: predict `rho`, blacklist the tool when `rho < delta`, price the
/// step at `cost / rho`, generate a satisfying observation, then ask the
/// policy for its next move on the extended history (which shows the pruned
/// market once anything was blacklisted).
#[allow(clippy::too_many_arguments)]
pub fn ideal_rollout(
    history: &History,
    reasoning: &str,
    action: &Action,
    policy: &dyn Policy,
    predictor: &dyn IntentionPredictor,
    generator: &dyn ConditionalGenerator,
    state: &mut OracleState,
    config: &IntentConfig,
    rng: &mut dyn RngCore,
) -> Result<IdealRollout, OracleError> {
    let mut sim = history.clone();
    let mut step_index = sim.last_step_index() + 1;
    let mut reasoning = reasoning.to_string();
    let mut action = action.clone();
    let mut steps = Vec::new();
    let mut tokens = 0u64;
    let overflow = |steps, tokens| Ok(IdealRollout { steps, outcome: RolloutOutcome::Overflow, tokens });

    loop {
        let Action::ToolCall { tool_id, arguments } = &action else {
            return Ok(IdealRollout { steps, outcome: RolloutOutcome::Answered, tokens });
        };
        if steps.len() >= config.rollout_horizon as usize {
            return overflow(steps, tokens);
        }
        let Some(tool) = state.full_market.get(tool_id).cloned() else {
            return overflow(steps, tokens);
        };
        let rho = match predictor.predict(&reasoning, &tool, arguments) {
            Ok(p) => {
                tokens += p.tokens;
                p.rho.clamp_min(&config.rho_min)
            }
            Err(_) => return overflow(steps, tokens),
        };
        let pruned = config.enable_blacklist && rho < config.delta && state.ban(tool_id);
        let calibrated_cost = geometric_cost(&tool.per_call_cost, &rho, &config.rho_min);
        let observation = match generator.generate(&tool, arguments, true, rng) {
            Ok(o) => {
                tokens += o.tokens;
                o.text
            }
            Err(_) => return overflow(steps, tokens),
        };

        let blocks = [
            (BlockKind::Reasoning, nonempty(reasoning.clone())),
            (BlockKind::Action, action.to_string()),
            (BlockKind::Observation, observation.clone()),
        ];
        for (kind, payload) in blocks {
            sim.push(ContextBlock { kind, payload, step_index }).expect("simulated blocks are ordered");
        }
        if pruned {
            let payload = render_market(&state.pruned_market, CostDisclosure::Shown);
            sim.push(ContextBlock { kind: BlockKind::Market, payload, step_index }).expect("ordered");
        }
        step_index += 1;
        steps.push(SimulatedStep {
            reasoning: std::mem::take(&mut reasoning),
            action: action.clone(),
            observation,
            price: tool.per_call_cost.clone(),
            rho,
            calibrated_cost,
        });

        match policy.propose(&sim) {
            Ok(next) => {
                tokens += next.tokens;
                reasoning = next.reasoning;
                action = next.action;
            }
            Err(PolicyError::Malformed(_)) => return overflow(steps, tokens),
            Err(PolicyError::Transient(msg)) => return Err(OracleError::Transient(msg)),
        }
    }
}

/// `Cost(a_t) <= B_t` and `gamma * sigma <= B_t`.
pub fn risk_adjusted_accept(per_call_cost: &Credits, remaining: &Credits, gamma: &Rational, sigma: &Credits) -> bool {
    per_call_cost <= remaining && &(sigma * gamma) <= remaining
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPath {
    UnknownTool,
    Blacklisted,
    LastCallCache,
    RolloutCache,
    Rollout,
}

/// What happened on one consultation, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsultTrace {
    pub action: Action,
    pub remaining: Credits,
    pub path: DecisionPath,
    pub accepted: bool,
    pub steps: Vec<SimulatedStep>,
    pub outcome: Option<RolloutOutcome>,
    pub sigma: Option<Credits>,
    pub risk_adjusted: Option<Credits>,
}

pub struct IntentOracle<'a> {
    policy: &'a dyn Policy,
    predictor: &'a dyn IntentionPredictor,
    generator: &'a dyn ConditionalGenerator,
    config: IntentConfig,
    state: OracleState,
    rng: StreamRng,
    counters: RunCounters,
    log: Vec<ConsultTrace>,
}

impl<'a> IntentOracle<'a> {
    pub fn new(
        policy: &'a dyn Policy,
        predictor: &'a dyn IntentionPredictor,
        generator: &'a dyn ConditionalGenerator,
        market: MarketSnapshot,
        config: IntentConfig,
        rng: StreamRng,
    ) -> Self {
        IntentOracle {
            policy,
            predictor,
            generator,
            config,
            state: OracleState::new(market),
            rng,
            counters: RunCounters::default(),
            log: Vec::new(),
        }
    }

    pub fn state(&self) -> &OracleState {
        &self.state
    }

    pub fn config(&self) -> &IntentConfig {
        &self.config
    }

    pub fn consults(&self) -> &[ConsultTrace] {
        &self.log
    }

    pub fn rollout_count(&self) -> u64 {
        self.counters.rollouts
    }

    fn record(&mut self, action: &Action, remaining: &Credits, path: DecisionPath, accepted: bool) {
        self.log.push(ConsultTrace {
            action: action.clone(),
            remaining: remaining.clone(),
            path,
            accepted,
            steps: Vec::new(),
            outcome: None,
            sigma: None,
            risk_adjusted: None,
        });
    }
}

impl Oracle for IntentOracle<'_> {
    fn consult(&mut self, request: &Consultation<'_>) -> Result<OracleReply, OracleError> {
        let action = request.action;
        let remaining = request.remaining;
        let Some(tool_id) = action.tool_id() else {
            return Ok(OracleReply::Accept);
        };
        let Some(tool) = self.state.full_market.get(tool_id).cloned() else {
            self.record(action, remaining, DecisionPath::UnknownTool, false);
            return Ok(OracleReply::Reject {
                feedback: render_rejection(RejectReason::UnknownTool, remaining, None, &[]),
            });
        };
        if self.state.blacklist.contains(tool_id) {
            self.record(action, remaining, DecisionPath::Blacklisted, false);
            return Ok(OracleReply::Reject {
                feedback: render_rejection(RejectReason::Blacklisted, remaining, None, &[]),
            });
        }
        let affordable = &tool.per_call_cost <= remaining;
        let matcher = self.config.action_match;

        if self.config.enable_last_call_cache
            && affordable
            && self.state.last_rejected.as_ref().is_some_and(|last| matcher.matches(action, last))
        {
            self.state.last_rejected = None;
            self.counters.cache_hits += 1;
            self.record(action, remaining, DecisionPath::LastCallCache, true);
            return Ok(OracleReply::Accept);
        }

        if self.config.enable_rollout_cache {
            let hit = affordable && self.state.rollout_cache.front().is_some_and(|head| matcher.matches(action, head));
            if hit {
                self.state.rollout_cache.pop_front();
                self.state.last_rejected = None;
                self.counters.cache_hits += 1;
                self.record(action, remaining, DecisionPath::RolloutCache, true);
                return Ok(OracleReply::Accept);
            }
            self.state.rollout_cache.clear();
        }

        self.counters.rollouts += 1;
        let rollout = ideal_rollout(
            request.history,
            request.reasoning,
            action,
            self.policy,
            self.predictor,
            self.generator,
            &mut self.state,
            &self.config,
            &mut self.rng,
        )?;
        self.counters.simulated_calls += rollout.steps.len() as u64;
        self.counters.tokens += rollout.tokens;

        let sigma = rollout.sigma();
        let risk_adjusted = &sigma * &self.config.gamma;
        let answered = rollout.outcome == RolloutOutcome::Answered;
        let accepted = answered && risk_adjusted_accept(&tool.per_call_cost, remaining, &self.config.gamma, &sigma);

        let reply = if accepted {
            if self.config.enable_rollout_cache {
                self.state.rollout_cache = rollout.future_actions().cloned().collect();
            }
            self.state.last_rejected = None;
            OracleReply::Accept
        } else {
            self.state.last_rejected = Some(action.clone());
            let reason = if answered { RejectReason::OverBudget } else { RejectReason::Overflow };
            OracleReply::Reject {
                feedback: render_rejection(reason, remaining, Some(&risk_adjusted), &rollout.trace()),
            }
        };
        self.log.push(ConsultTrace {
            action: action.clone(),
            remaining: remaining.clone(),
            path: DecisionPath::Rollout,
            accepted,
            steps: rollout.steps,
            outcome: Some(rollout.outcome),
            sigma: Some(sigma),
            risk_adjusted: Some(risk_adjusted),
        });
        Ok(reply)
    }

    fn market(&self) -> Option<&MarketSnapshot> {
        Some(&self.state.pruned_market)
    }

    fn counters(&self) -> RunCounters {
        self.counters.clone()
    }
}
