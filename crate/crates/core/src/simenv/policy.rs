//! History-driven fixture policies for synthetic markets.
//!
//! None of these keep state between calls: progress is recomputed from the
//! history each time, so oracle rollouts can query them freely.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::components::{extract_facts, is_success_payload, render_facts};
use crate::domain::{Action, BlockKind, History};
use crate::engine::{Policy, PolicyError, PolicyStep};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool_id: String,
    pub arguments: String,
    pub reasoning: String,
}

impl PlanStep {
    pub fn new(tool_id: &str, arguments: &str, reasoning: &str) -> Self {
        PlanStep { tool_id: tool_id.into(), arguments: arguments.into(), reasoning: reasoning.into() }
    }
}

/// What a scripted policy does after oracle feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnReject {
    /// Propose the same call again.
    Retry,
    /// Move on to the next plan step.
    Skip,
    /// Stop and answer with what has been collected.
    Answer,
}

/// One interaction step as seen in the history.
#[derive(Debug)]
enum Event<'a> {
    Success(&'a str),
    Failure,
    Feedback,
}

fn parse_call(payload: &str) -> Option<&str> {
    payload.strip_prefix("CALL ")?.split(' ').next()
}

/// Outcomes of past steps in order, with the tool each one concerned.
fn events(history: &History) -> Vec<Event<'_>> {
    let mut out = Vec::new();
    let mut current: Option<(u32, &str)> = None;
    for block in history.blocks() {
        match block.kind {
            BlockKind::Action => current = parse_call(&block.payload).map(|id| (block.step_index, id)),
            BlockKind::Observation => match current {
                Some((step, id)) if step == block.step_index && is_success_payload(&block.payload) => {
                    out.push(Event::Success(id))
                }
                _ => out.push(Event::Failure),
            },
            BlockKind::OracleFeedback => out.push(Event::Feedback),
            _ => {}
        }
    }
    out
}

fn collected(history: &History) -> BTreeSet<String> {
    history
        .blocks()
        .filter(|b| b.kind == BlockKind::Observation)
        .flat_map(|b| extract_facts(&b.payload))
        .collect()
}

fn answer_step(history: &History, reasoning: &str) -> PolicyStep {
    let facts = collected(history);
    PolicyStep::new(reasoning, Action::answer(format!("Findings: {}", render_facts(&facts))))
}

fn visible(history: &History) -> BTreeSet<String> {
    history.visible_tools().into_iter().map(|l| l.tool_id).collect()
}

/// Follows a fixed plan, calling each tool until it succeeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRetryPolicy {
    pub plan: Vec<PlanStep>,
    pub on_reject: OnReject,
}

impl ScriptedRetryPolicy {
    pub fn new(plan: Vec<PlanStep>, on_reject: OnReject) -> Self {
        ScriptedRetryPolicy { plan, on_reject }
    }
}

impl Policy for ScriptedRetryPolicy {
    fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError> {
        let mut pos = 0usize;
        for event in events(history) {
            let Some(step) = self.plan.get(pos) else { break };
            match event {
                Event::Success(id) if id == step.tool_id => pos += 1,
                Event::Success(_) | Event::Failure => {}
                Event::Feedback => match self.on_reject {
                    OnReject::Retry => {}
                    OnReject::Skip => pos += 1,
                    OnReject::Answer => return Ok(answer_step(history, "stopping after rejection")),
                },
            }
        }
        let market = visible(history);
        while let Some(step) = self.plan.get(pos) {
            if market.contains(&step.tool_id) {
                return Ok(PolicyStep::new(&step.reasoning, Action::call(&step.tool_id, &step.arguments)));
            }
            pos += 1;
        }
        Ok(answer_step(history, "plan complete"))
    }
}

/// Switches to the next plan after each rejection. Plan `k` is active once
/// `k` feedback blocks are in the history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanningPolicy {
    pub plans: Vec<Vec<PlanStep>>,
}

impl ReplanningPolicy {
    pub fn new(plans: Vec<Vec<PlanStep>>) -> Self {
        ReplanningPolicy { plans }
    }
}

impl Policy for ReplanningPolicy {
    fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError> {
        let mut plan_index = 0usize;
        let mut pos = 0usize;
        for event in events(history) {
            match event {
                Event::Feedback => {
                    plan_index += 1;
                    pos = 0;
                }
                Event::Success(id) => {
                    if self.plans.get(plan_index).and_then(|p| p.get(pos)).is_some_and(|s| s.tool_id == id) {
                        pos += 1;
                    }
                }
                Event::Failure => {}
            }
        }
        let Some(plan) = self.plans.get(plan_index) else {
            return Ok(answer_step(history, "no plans left"));
        };
        match plan.get(pos) {
            Some(step) => Ok(PolicyStep::new(&step.reasoning, Action::call(&step.tool_id, &step.arguments))),
            None => Ok(answer_step(history, "plan complete")),
        }
    }
}

/// Randomized, cost-blind explorer: picks a visible tool advertising a
/// missing fact, sometimes any tool, and answers when nothing is missing or
/// after `patience` calls. Choices are a hash of the seed and history length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploringPolicy {
    pub seed: u64,
    pub required_facts: BTreeSet<String>,
    pub patience: usize,
    /// Chance of calling an arbitrary visible tool.
    pub wander: f64,
}

impl ExploringPolicy {
    pub fn new(seed: u64, required_facts: BTreeSet<String>, patience: usize) -> Self {
        ExploringPolicy { seed, required_facts, patience, wander: 0.1 }
    }
}

fn advertised(description: &str) -> BTreeSet<String> {
    description
        .strip_prefix("Provides: ")
        .map(|rest| rest.trim_end_matches('.').split(", ").map(String::from).collect())
        .unwrap_or_default()
}

impl Policy for ExploringPolicy {
    fn propose(&self, history: &History) -> Result<PolicyStep, PolicyError> {
        let have = collected(history);
        let missing: BTreeSet<&String> = self.required_facts.iter().filter(|f| !have.contains(*f)).collect();
        let attempts = history.blocks().filter(|b| b.kind == BlockKind::Action).count();
        if missing.is_empty() || attempts >= self.patience {
            return Ok(answer_step(history, "done exploring"));
        }
        let tools = history.visible_tools();
        if tools.is_empty() {
            return Ok(answer_step(history, "no tools left"));
        }
        let useful: Vec<_> =
            tools.iter().filter(|t| advertised(&t.description).iter().any(|f| missing.contains(f))).collect();
        let h = rng::mix(self.seed, history.len() as u64);
        let wander = rng::unit_from_hash(rng::mix(h, 1)) < self.wander;
        let pool: Vec<_> = if wander || useful.is_empty() { tools.iter().collect() } else { useful };
        let pick = pool[(h % pool.len() as u64) as usize];
        let reasoning = format!("looking for {}", missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
        Ok(PolicyStep::new(reasoning, Action::call(&pick.tool_id, "{\"query\":\"facts\"}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ContextBlock;

    fn h0(tools: &[&str]) -> History {
        let mut market = String::from("Available tools (id | name | cost | description):");
        for t in tools {
            market.push_str(&format!("\n{t} | {t} | 1 | Provides: f0."));
        }
        History::initial("sys", "q", "Budget: 10 credits (hard limit)", &market).unwrap()
    }

    fn step(h: &mut History, i: u32, tool: &str, obs: Option<&str>, feedback: bool) {
        h.push(ContextBlock::new(BlockKind::Reasoning, "r", i).unwrap()).unwrap();
        h.push(ContextBlock::new(BlockKind::Action, format!("CALL {tool} {{}}"), i).unwrap()).unwrap();
        if feedback {
            h.push(ContextBlock::new(BlockKind::OracleFeedback, "no", i).unwrap()).unwrap();
        } else {
            h.push(ContextBlock::new(BlockKind::Observation, obs.unwrap(), i).unwrap()).unwrap();
        }
    }

    fn call_of(p: &dyn Policy, h: &History) -> Option<String> {
        p.propose(h).unwrap().action.tool_id().map(String::from)
    }

    #[test]
    fn retry_policy_progress() {
        let plan = vec![PlanStep::new("a", "{}", "first"), PlanStep::new("b", "{}", "second")];
        let p = ScriptedRetryPolicy::new(plan, OnReject::Retry);
        let mut h = h0(&["a", "b"]);
        assert_eq!(call_of(&p, &h).as_deref(), Some("a"));
        step(&mut h, 1, "a", Some("error"), false);
        assert_eq!(call_of(&p, &h).as_deref(), Some("a"));
        step(&mut h, 2, "a", Some("ok <<facts:f0>>"), false);
        assert_eq!(call_of(&p, &h).as_deref(), Some("b"));
        step(&mut h, 3, "b", None, true);
        assert_eq!(call_of(&p, &h).as_deref(), Some("b"));
        step(&mut h, 4, "b", Some("ok <<facts:f1>>"), false);
        let last = p.propose(&h).unwrap();
        assert_eq!(last.action, Action::answer("Findings: <<facts:f0,f1>>"));
    }

    #[test]
    fn on_reject_variants() {
        let plan = vec![PlanStep::new("a", "{}", "r"), PlanStep::new("b", "{}", "r")];
        let mut h = h0(&["a", "b"]);
        step(&mut h, 1, "a", None, true);
        assert_eq!(call_of(&ScriptedRetryPolicy::new(plan.clone(), OnReject::Skip), &h).as_deref(), Some("b"));
        assert!(ScriptedRetryPolicy::new(plan, OnReject::Answer).propose(&h).unwrap().action.is_answer());
    }

    #[test]
    fn skips_tools_missing_from_market() {
        let plan = vec![PlanStep::new("gone", "{}", "r"), PlanStep::new("b", "{}", "r")];
        let p = ScriptedRetryPolicy::new(plan, OnReject::Retry);
        assert_eq!(call_of(&p, &h0(&["b"])).as_deref(), Some("b"));
    }

    #[test]
    fn replanning_switches_on_feedback() {
        let p = ReplanningPolicy::new(vec![
            vec![PlanStep::new("a", "{}", "plan:a")],
            vec![PlanStep::new("b", "{}", "plan:b"), PlanStep::new("c", "{}", "plan:b")],
        ]);
        let mut h = h0(&["a", "b", "c"]);
        assert_eq!(call_of(&p, &h).as_deref(), Some("a"));
        step(&mut h, 1, "a", None, true);
        let next = p.propose(&h).unwrap();
        assert_eq!(next.reasoning, "plan:b");
        step(&mut h, 2, "b", Some("<<facts:f0>>"), false);
        assert_eq!(call_of(&p, &h).as_deref(), Some("c"));
        step(&mut h, 3, "c", None, true);
        assert!(p.propose(&h).unwrap().action.is_answer());
    }

    #[test]
    fn explorer_is_deterministic_and_stops() {
        let p = ExploringPolicy::new(7, BTreeSet::from(["f0".to_string()]), 2);
        let mut h = h0(&["a", "b", "c"]);
        assert_eq!(p.propose(&h).unwrap(), p.propose(&h).unwrap());
        step(&mut h, 1, "a", Some("err"), false);
        step(&mut h, 2, "b", Some("err"), false);
        assert!(p.propose(&h).unwrap().action.is_answer());
        let mut h = h0(&["a"]);
        step(&mut h, 1, "a", Some("<<facts:f0>>"), false);
        assert!(ExploringPolicy::new(7, BTreeSet::from(["f0".to_string()]), 9).propose(&h).unwrap().action.is_answer());
    }
}
