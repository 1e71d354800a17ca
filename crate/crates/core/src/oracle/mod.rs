//! Inference-time gates for tool calls.
//!
//! [`MonteCarloOracle`] accepts a call when one sampled lookahead fits the
//! remaining budget. [`IntentOracle`] simulates the always-satisfied plan,
//! prices each step at `cost / rho` and accepts when `gamma` times the total
//! fits. The simulation components sit behind the traits below so synthetic
//! ground truth and language-model backends are interchangeable.

mod feedback;
mod geometric;
mod intent;
mod mco;

pub use feedback::{parse_trace, render_rejection, RejectReason, TraceEntry, TRACE_CLOSE, TRACE_OPEN};
pub use geometric::{geometric_cost, total_calibrated_cost};
pub use intent::{
    ideal_rollout, risk_adjusted_accept, ConsultTrace, DecisionPath, IdealRollout, IntentConfig, IntentOracle,
    OracleState, RolloutOutcome, SimulatedStep,
};
pub use mco::{McoConfig, MonteCarloOracle};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, MarketSnapshot, ToolSpec};
use crate::engine::{Consultation, Oracle, OracleError, OracleReply};
use crate::money::Probability;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Simulated {
    pub text: String,
    pub tokens: u64,
}

impl Simulated {
    pub fn text(text: impl Into<String>) -> Self {
        Simulated { text: text.into(), tokens: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("simulation failed: {0}")]
pub struct SimulationError(pub String);

/// Predicts a tool's observation without touching the real environment.
pub trait WorldModel: Send + Sync {
    fn simulate(&self, tool: &ToolSpec, arguments: &str, rng: &mut dyn RngCore) -> Result<Simulated, SimulationError>;

    /// Sampling diversity in `[0, 2]`; 0 is greedy.
    fn diversity(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub rho: Probability,
    pub tokens: u64,
}

/// Probability that a call satisfies the intention stated in its reasoning.
pub trait IntentionPredictor: Send + Sync {
    fn predict(&self, reasoning: &str, tool: &ToolSpec, arguments: &str) -> Result<Prediction, SimulationError>;
}

/// Generates an observation conditioned on whether the intention is met.
pub trait ConditionalGenerator: Send + Sync {
    fn generate(
        &self,
        tool: &ToolSpec,
        arguments: &str,
        satisfied: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Simulated, SimulationError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMatch {
    #[default]
    ToolNameOnly,
    ToolNameAndArgs,
}

impl ActionMatch {
    pub fn matches(self, a: &Action, b: &Action) -> bool {
        match (a, b) {
            (Action::ToolCall { tool_id: ta, arguments: ua }, Action::ToolCall { tool_id: tb, arguments: ub }) => {
                ta == tb && (self == ActionMatch::ToolNameOnly || ua == ub)
            }
            _ => false,
        }
    }
}

/// Accepts everything. Not an enforcing oracle.
#[derive(Debug, Default, Clone, Copy)]
pub struct PermissiveOracle;

impl Oracle for PermissiveOracle {
    fn consult(&mut self, _: &Consultation<'_>) -> Result<OracleReply, OracleError> {
        Ok(OracleReply::Accept)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RejectAllOracle;

impl Oracle for RejectAllOracle {
    fn consult(&mut self, _: &Consultation<'_>) -> Result<OracleReply, OracleError> {
        Ok(OracleReply::Reject { feedback: "Rejected: no tool calls are permitted.".into() })
    }
}

/// Accepts a call iff its own price fits the remaining budget.
#[derive(Debug, Clone)]
pub struct AffordabilityOracle {
    market: MarketSnapshot,
}

impl AffordabilityOracle {
    pub fn new(market: MarketSnapshot) -> Self {
        AffordabilityOracle { market }
    }
}

impl Oracle for AffordabilityOracle {
    fn consult(&mut self, request: &Consultation<'_>) -> Result<OracleReply, OracleError> {
        let affordable = request
            .action
            .tool_id()
            .and_then(|id| self.market.get(id))
            .is_some_and(|t| &t.per_call_cost <= request.remaining);
        if affordable {
            Ok(OracleReply::Accept)
        } else {
            Ok(OracleReply::Reject { feedback: format!("Rejected: the call does not fit the remaining budget of {}.", request.remaining) })
        }
    }
}
