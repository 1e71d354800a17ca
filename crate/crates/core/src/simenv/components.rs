use std::collections::{BTreeMap, BTreeSet};

use num_traits::ToPrimitive;
use rand::{Rng, RngCore};

use super::{GroundTruth, SyntheticTask, SyntheticTool, ToolTruth};
use crate::domain::ToolSpec;
use crate::engine::Environment;
use crate::money::{Probability, Rational};
use crate::oracle::{ConditionalGenerator, IntentionPredictor, Prediction, Simulated, SimulationError, WorldModel};

pub const FACTS_OPEN: &str = "<<facts:";
pub const FACTS_CLOSE: &str = ">>";

/// `<<facts:a,b>>`
pub fn render_facts<'a>(facts: impl IntoIterator<Item = &'a String>) -> String {
    let joined: Vec<&str> = facts.into_iter().map(String::as_str).collect();
    format!("{FACTS_OPEN}{}{FACTS_CLOSE}", joined.join(","))
}

/// Every fact id inside any envelope in `text`.
pub fn extract_facts(text: &str) -> BTreeSet<String> {
    let mut facts = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find(FACTS_OPEN) {
        let body = &rest[start + FACTS_OPEN.len()..];
        let Some(end) = body.find(FACTS_CLOSE) else { break };
        facts.extend(body[..end].split(',').map(str::trim).filter(|f| !f.is_empty()).map(String::from));
        rest = &body[end..];
    }
    facts
}

/// Success payloads always carry a facts envelope, possibly empty.
pub fn is_success_payload(text: &str) -> bool {
    text.contains(FACTS_OPEN)
}

fn fill(template: &str, spec: &ToolSpec, truth: &ToolTruth, arguments: &str) -> String {
    template
        .replace("{tool_id}", &spec.tool_id)
        .replace("{name}", &spec.name)
        .replace("{arguments}", arguments)
        .replace("{facts}", &render_facts(&truth.provides_facts))
}

fn success_payload(tool: SyntheticTool<'_>, arguments: &str) -> String {
    let text = fill(&tool.truth.success_payload_template, tool.spec, tool.truth, arguments);
    if is_success_payload(&text) {
        text
    } else {
        format!("{text} {}", render_facts(&tool.truth.provides_facts))
    }
}

fn failure_payload(tool: SyntheticTool<'_>, arguments: &str) -> String {
    fill(&tool.truth.failure_payload_template, tool.spec, tool.truth, arguments).replace(FACTS_OPEN, "<<")
}

/// Exact Bernoulli draw for probabilities with a denominator that fits `u64`.
pub(crate) fn bernoulli(p: &Probability, rng: &mut dyn RngCore) -> bool {
    let r: &Rational = p.as_rational();
    match (r.numer().to_u64(), r.denom().to_u64()) {
        (Some(num), Some(den)) => rng.random_range(0..den) < num,
        _ => rng.random::<f64>() < p.to_f64(),
    }
}

/// One real call: success payload with probability `success_prob`, failure
/// payload otherwise.
pub fn synthetic_env_execute(tool: SyntheticTool<'_>, arguments: &str, rng: &mut dyn RngCore) -> String {
    if bernoulli(&tool.truth.success_prob, rng) {
        success_payload(tool, arguments)
    } else {
        failure_payload(tool, arguments)
    }
}

/// Fraction of required facts present in the answer.
pub fn synthetic_judge(task: &SyntheticTask, answer_text: Option<&str>) -> Rational {
    let required = task.required_facts();
    if required.is_empty() {
        return Rational::from_integer(1.into());
    }
    let found = answer_text.map(extract_facts).unwrap_or_default();
    let hits = required.intersection(&found).count();
    Rational::new(hits.into(), required.len().into())
}

/// The real environment of a synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticEnvironment {
    task: SyntheticTask,
}

impl SyntheticEnvironment {
    pub fn new(task: SyntheticTask) -> Self {
        SyntheticEnvironment { task }
    }
}

impl Environment for SyntheticEnvironment {
    fn execute(&self, tool: &ToolSpec, arguments: &str, rng: &mut dyn RngCore) -> Result<String, String> {
        let truth = self.task.truth.tools.get(&tool.tool_id).ok_or_else(|| format!("no such tool {}", tool.tool_id))?;
        Ok(synthetic_env_execute(SyntheticTool { spec: tool, truth }, arguments, rng))
    }
}

/// World model backed by the ground-truth table. `diversity` tempers the
/// success probability in logit space (1 keeps it, 0 makes it greedy).
#[derive(Debug, Clone)]
pub struct SyntheticWorldModel {
    truth: GroundTruth,
    diversity: f64,
}

impl SyntheticWorldModel {
    pub fn new(truth: GroundTruth, diversity: f64) -> Self {
        SyntheticWorldModel { truth, diversity: diversity.clamp(0.0, 2.0) }
    }

    fn tempered(&self, p: &Probability) -> Option<Probability> {
        if self.diversity == 1.0 {
            return Some(p.clone());
        }
        let p = p.to_f64();
        if p <= 0.0 || p >= 1.0 {
            return Some(Probability::from_f64_lossy(p));
        }
        if self.diversity == 0.0 {
            return Some(if p >= 0.5 { Probability::one() } else { Probability::zero() });
        }
        let logit = (p / (1.0 - p)).ln() / self.diversity;
        Some(Probability::from_f64_lossy(1.0 / (1.0 + (-logit).exp())))
    }
}

impl WorldModel for SyntheticWorldModel {
    fn simulate(&self, tool: &ToolSpec, arguments: &str, rng: &mut dyn RngCore) -> Result<Simulated, SimulationError> {
        let truth = self
            .truth
            .tools
            .get(&tool.tool_id)
            .ok_or_else(|| SimulationError(format!("no such tool {}", tool.tool_id)))?;
        let p = self.tempered(&truth.success_prob).expect("tempered probability");
        let tool = SyntheticTool { spec: tool, truth };
        let text = if bernoulli(&p, rng) { success_payload(tool, arguments) } else { failure_payload(tool, arguments) };
        Ok(Simulated::text(text))
    }

    fn diversity(&self) -> f64 {
        self.diversity
    }
}

/// Conditional generator backed by the ground-truth templates.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    truth: GroundTruth,
}

impl SyntheticGenerator {
    pub fn new(truth: GroundTruth) -> Self {
        SyntheticGenerator { truth }
    }
}

impl ConditionalGenerator for SyntheticGenerator {
    fn generate(
        &self,
        tool: &ToolSpec,
        arguments: &str,
        satisfied: bool,
        _rng: &mut dyn RngCore,
    ) -> Result<Simulated, SimulationError> {
        let truth = self
            .truth
            .tools
            .get(&tool.tool_id)
            .ok_or_else(|| SimulationError(format!("no such tool {}", tool.tool_id)))?;
        let tool = SyntheticTool { spec: tool, truth };
        let text = if satisfied { success_payload(tool, arguments) } else { failure_payload(tool, arguments) };
        Ok(Simulated::text(text))
    }
}

/// Returns the ground-truth success probability, clamped to `[rho_min, 1]`.
#[derive(Debug, Clone)]
pub struct TablePredictor {
    probs: BTreeMap<String, Probability>,
    rho_min: Probability,
}

impl TablePredictor {
    pub fn new(truth: &GroundTruth, rho_min: Probability) -> Self {
        let probs = truth.tools.iter().map(|(id, t)| (id.clone(), t.success_prob.clone())).collect();
        TablePredictor { probs, rho_min }
    }
}

impl IntentionPredictor for TablePredictor {
    fn predict(&self, _reasoning: &str, tool: &ToolSpec, _arguments: &str) -> Result<Prediction, SimulationError> {
        let rho = self
            .probs
            .get(&tool.tool_id)
            .ok_or_else(|| SimulationError(format!("no probability for {}", tool.tool_id)))?;
        Ok(Prediction { rho: rho.clamp_min(&self.rho_min), tokens: 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictRule {
    pub tool_id: String,
    /// Matches only when the reasoning contains this text.
    pub reasoning_contains: Option<String>,
    pub rho: Probability,
}

/// Fixture predictor: first matching rule wins, so a tool's probability can
/// depend on the reasoning that motivates the call.
#[derive(Debug, Clone)]
pub struct ScriptedPredictor {
    rules: Vec<PredictRule>,
    fallback: Probability,
}

impl ScriptedPredictor {
    pub fn new(fallback: Probability) -> Self {
        ScriptedPredictor { rules: Vec::new(), fallback }
    }

    pub fn rule(mut self, tool_id: &str, reasoning_contains: Option<&str>, rho: Probability) -> Self {
        self.rules.push(PredictRule {
            tool_id: tool_id.to_string(),
            reasoning_contains: reasoning_contains.map(String::from),
            rho,
        });
        self
    }
}

impl IntentionPredictor for ScriptedPredictor {
    fn predict(&self, reasoning: &str, tool: &ToolSpec, _arguments: &str) -> Result<Prediction, SimulationError> {
        let rho = self
            .rules
            .iter()
            .find(|r| {
                r.tool_id == tool.tool_id && r.reasoning_contains.as_deref().is_none_or(|needle| reasoning.contains(needle))
            })
            .map_or(&self.fallback, |r| &r.rho);
        Ok(Prediction { rho: rho.clone(), tokens: 0 })
    }
}
