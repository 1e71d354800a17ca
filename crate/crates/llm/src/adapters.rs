use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use tollgate::bench::{Backend, BenchConfig, BenchError, Components};
use tollgate::calibrate::apply_temperature;
use tollgate::domain::{History, ToolSpec};
use tollgate::engine::{Policy, PolicyError, PolicyStep};
use tollgate::money::Probability;
use tollgate::oracle::{ConditionalGenerator, IntentionPredictor, Prediction, Simulated, SimulationError, WorldModel};
use tollgate::simenv::SyntheticTask;

use crate::client::{ChatClient, Message};
use crate::envelope::{parse_reply, REPAIR_INSTRUCTION};
use crate::prompt::{parse_logit, policy_messages, predictor_messages, world_model_messages};
use crate::ClientError;

fn transient(err: ClientError) -> PolicyError {
    PolicyError::Transient(err.to_string())
}

/// Model-backed policy. Unparsable replies get a repair turn, up to
/// `max_retries` times.
pub struct LlmPolicy {
    client: Arc<ChatClient>,
}

impl LlmPolicy {
    pub fn new(client: Arc<ChatClient>) -> Self {
        LlmPolicy { client }
    }
}

impl Policy for LlmPolicy {
    fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError> {
        let mut messages = policy_messages(history);
        let temperature = self.client.config().sampling_diversity;
        let mut tokens = 0;
        let mut problem = String::new();
        for _ in 0..=self.client.config().max_retries {
            let reply = self.client.complete(&messages, temperature).map_err(transient)?;
            tokens += reply.tokens;
            match parse_reply(&reply.text) {
                Ok((reasoning, action)) => {
                    let reasoning = if reasoning.is_empty() { "(no reasoning given)".to_string() } else { reasoning };
                    return Ok(PolicyStep { reasoning, action, tokens });
                }
                Err(e) => {
                    problem = e;
                    messages.push(Message::assistant(reply.text));
                    messages.push(Message::user(REPAIR_INSTRUCTION));
                }
            }
        }
        Err(PolicyError::Malformed(problem))
    }
}

pub struct LlmWorldModel {
    client: Arc<ChatClient>,
}

impl LlmWorldModel {
    pub fn new(client: Arc<ChatClient>) -> Self {
        LlmWorldModel { client }
    }
}

impl WorldModel for LlmWorldModel {
    fn simulate(&self, tool: &ToolSpec, arguments: &str, _rng: &mut dyn RngCore) -> Result<Simulated, SimulationError> {
        let reply = self
            .client
            .complete(&world_model_messages(tool, arguments, false), self.client.config().sampling_diversity)
            .map_err(|e| SimulationError(e.to_string()))?;
        Ok(Simulated { text: reply.text, tokens: reply.tokens })
    }

    fn diversity(&self) -> f64 {
        self.client.config().sampling_diversity
    }
}

/// World model prompted with the satisfied-intention directive. Only
/// `satisfied = true` adds the directive.
pub struct LlmGenerator {
    client: Arc<ChatClient>,
}

impl LlmGenerator {
    pub fn new(client: Arc<ChatClient>) -> Self {
        LlmGenerator { client }
    }
}

impl ConditionalGenerator for LlmGenerator {
    fn generate(
        &self,
        tool: &ToolSpec,
        arguments: &str,
        satisfied: bool,
        _rng: &mut dyn RngCore,
    ) -> Result<Simulated, SimulationError> {
        let reply = self
            .client
            .complete(&world_model_messages(tool, arguments, satisfied), self.client.config().generator_diversity)
            .map_err(|e| SimulationError(e.to_string()))?;
        Ok(Simulated { text: reply.text, tokens: reply.tokens })
    }
}

/// Reads a logit from the model and returns `sigmoid(logit / T)` clamped to
/// `[rho_min, 1]`. Unreadable scores fall back to `rho_min` and bump the
/// warning counter.
pub struct LlmPredictor {
    client: Arc<ChatClient>,
    temperature: f64,
    rho_min: Probability,
    warnings: Arc<AtomicU64>,
}

impl LlmPredictor {
    pub fn new(client: Arc<ChatClient>, temperature: f64, rho_min: Probability) -> Self {
        LlmPredictor { client, temperature, rho_min, warnings: Arc::new(AtomicU64::new(0)) }
    }

    pub fn with_warning_counter(mut self, counter: Arc<AtomicU64>) -> Self {
        self.warnings = counter;
        self
    }

    pub fn warnings(&self) -> u64 {
        self.warnings.load(Ordering::Relaxed)
    }

    pub fn rho_from_logit(&self, logit: f64) -> Probability {
        Probability::from_f64_lossy(apply_temperature(logit, self.temperature)).clamp_min(&self.rho_min)
    }
}

impl IntentionPredictor for LlmPredictor {
    fn predict(&self, reasoning: &str, tool: &ToolSpec, arguments: &str) -> Result<Prediction, SimulationError> {
        let reply = self
            .client
            .complete(&predictor_messages(reasoning, tool, arguments), 0.0)
            .map_err(|e| SimulationError(e.to_string()))?;
        let rho = match parse_logit(&reply.text) {
            Some(logit) => self.rho_from_logit(logit),
            None => {
                self.warnings.fetch_add(1, Ordering::Relaxed);
                self.rho_min.clone()
            }
        };
        Ok(Prediction { rho, tokens: reply.tokens })
    }
}

/// Bench backend where every agent-side component is model-backed. Tools
/// still execute against the synthetic ground truth.
pub struct HttpBackend {
    client: Arc<ChatClient>,
    predictor_temperature: f64,
    warnings: Arc<AtomicU64>,
}

impl HttpBackend {
    pub fn new(client: ChatClient, predictor_temperature: f64) -> Self {
        HttpBackend { client: Arc::new(client), predictor_temperature, warnings: Arc::new(AtomicU64::new(0)) }
    }

    /// Unparsable predictor replies across all tasks so far.
    pub fn predictor_warnings(&self) -> u64 {
        self.warnings.load(Ordering::Relaxed)
    }
}

impl Backend for HttpBackend {
    fn components(&self, _task: &SyntheticTask, config: &BenchConfig) -> Result<Components, BenchError> {
        if !(self.predictor_temperature > 0.0) {
            return Err(BenchError::Backend("predictor temperature must be positive".into()));
        }
        let predictor = LlmPredictor::new(self.client.clone(), self.predictor_temperature, config.intent.rho_min.clone())
            .with_warning_counter(self.warnings.clone());
        Ok(Components {
            policy: Box::new(LlmPolicy::new(self.client.clone())),
            world: Box::new(LlmWorldModel::new(self.client.clone())),
            predictor: Box::new(predictor),
            generator: Box::new(LlmGenerator::new(self.client.clone())),
        })
    }
}
