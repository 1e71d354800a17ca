#![allow(dead_code)]

use tollgate::bench::{PolicyKind, SyntheticBackend};
use std::collections::{BTreeMap, BTreeSet};

use tollgate::domain::{MarketSnapshot, TaskInstance, ToolSpec, Trajectory, Verdict};
use tollgate::money::{Credits, Rational};
use tollgate::simenv::{GroundTruth, PlanStep, ReplanningPolicy, ScriptedPredictor, ToolTruth};
use tollgate::engine::{run_task, EngineConfig, Policy};
use tollgate::money::Probability;
use tollgate::oracle::{ConsultTrace, IntentConfig, IntentOracle};
use tollgate::rng;
use tollgate::simenv::{
    gen_market, MarketGenConfig, OnReject, SyntheticEnvironment, SyntheticGenerator, SyntheticTask, TablePredictor,
};

pub fn market(seed: u64) -> SyntheticTask {
    gen_market(&MarketGenConfig { seed, ..MarketGenConfig::default() }).unwrap()
}

pub fn small_market(seed: u64, n_tools: usize, n_facts: usize) -> SyntheticTask {
    gen_market(&MarketGenConfig { seed, n_tools, n_facts, ..MarketGenConfig::default() }).unwrap()
}

/// Same task, but every real call succeeds.
pub fn always_succeeds(task: &SyntheticTask) -> SyntheticTask {
    let mut out = task.clone();
    for truth in out.truth.tools.values_mut() {
        truth.success_prob = Probability::one();
    }
    out
}

pub fn reference(on_reject: OnReject) -> SyntheticBackend {
    SyntheticBackend { policy: PolicyKind::Reference { on_reject }, world_diversity: 1.0 }
}

pub struct IntentRun {
    pub trajectory: Trajectory,
    pub consults: Vec<ConsultTrace>,
    pub rollouts: u64,
    pub blacklist: Vec<String>,
}

/// Runs INTENT directly. The predictor reads `predict_from`'s probabilities,
/// the real environment uses `task`'s.
pub fn run_intent(task: &SyntheticTask, predict_from: &SyntheticTask, policy: &dyn Policy, config: IntentConfig) -> IntentRun {
    let predictor = TablePredictor::new(&predict_from.truth, config.rho_min.clone());
    let generator = SyntheticGenerator::new(task.truth.clone());
    let env = SyntheticEnvironment::new(task.clone());
    let mut oracle = IntentOracle::new(
        policy,
        &predictor,
        &generator,
        task.task.market.clone(),
        config,
        rng::stream(task.task.seed, rng::ORACLE),
    );
    let trajectory = run_task(&task.task, policy, &env, &mut oracle, &EngineConfig::default()).unwrap();
    IntentRun {
        trajectory,
        consults: oracle.consults().to_vec(),
        rollouts: oracle.rollout_count(),
        blacklist: oracle.state().blacklist.iter().cloned().collect(),
    }
}

/// `(tool, verdict)` for every consulted step.
pub fn verdicts(t: &Trajectory) -> Vec<(String, Verdict)> {
    t.steps
        .iter()
        .filter(|s| s.oracle_verdict != Verdict::NotConsulted)
        .map(|s| (s.action.tool_id().unwrap_or_default().to_string(), s.oracle_verdict))
        .collect()
}

/// Tools of accepted calls, in order.
pub fn accepted(t: &Trajectory) -> Vec<String> {
    t.steps.iter().filter(|s| s.executed).map(|s| s.action.tool_id().unwrap().to_string()).collect()
}

/// `n` tools, tool `i` alone providing fact `f{i}`, all at the same price
/// and success probability.
pub fn chain_task(n: usize, cost: i64, p: Probability, budget: i64, seed: u64) -> SyntheticTask {
    let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let specs = ids
        .iter()
        .enumerate()
        .map(|(i, id)| ToolSpec {
            tool_id: id.clone(),
            name: id.clone(),
            description: format!("Provides: f{i}."),
            input_schema: "{}".into(),
            per_call_cost: Credits::from_int(cost),
        })
        .collect();
    let tools: BTreeMap<String, ToolTruth> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (id.clone(), ToolTruth {
                success_prob: p.clone(),
                provides_facts: BTreeSet::from([format!("f{i}")]),
                success_payload_template: "ok {facts}".into(),
                failure_payload_template: "error".into(),
            })
        })
        .collect();
    SyntheticTask {
        task: TaskInstance {
            task_id: format!("chain-{n}"),
            query: "Collect every fact.".into(),
            budget: Credits::from_int(budget),
            market: MarketSnapshot::new(specs),
            seed,
        },
        truth: GroundTruth {
            task_id: format!("chain-{n}"),
            required_facts: (0..n).map(|i| format!("f{i}")).collect(),
            ground_truth_solvable: Some(cost * n as i64 <= budget),
            reference_tools: ids.into_iter().collect(),
            tools,
        },
    }
}

// Hand-checked INTENT case: two plans rejected, the third accepted.

pub fn r(n: i64, d: i64) -> Rational {
    Rational::new(n.into(), d.into())
}

pub fn p(permille: u32) -> Probability {
    Probability::from_permille(permille).unwrap()
}

pub const WORKED_TOOLS: [(&str, i64, &str); 7] = [
    ("statements", 38, "f0"),
    ("income", 11, "f1"),
    ("forum", 7, "f0"),
    ("rumors", 13, "f1"),
    ("terminal", 45, "f2"),
    ("filings", 9, "f0"),
    ("balance", 23, "f2"),
];

pub fn worked_task() -> SyntheticTask {
    let specs = WORKED_TOOLS
        .iter()
        .map(|(id, cost, _)| ToolSpec {
            tool_id: id.to_string(),
            name: id.to_string(),
            description: format!("{id} data"),
            input_schema: "{}".into(),
            per_call_cost: Credits::from_int(*cost),
        })
        .collect();
    let truth = WORKED_TOOLS
        .iter()
        .map(|(id, _, fact)| {
            (
                id.to_string(),
                ToolTruth {
                    success_prob: Probability::one(),
                    provides_facts: BTreeSet::from([fact.to_string()]),
                    success_payload_template: "{name} ok {facts}".into(),
                    failure_payload_template: "{name} failed".into(),
                },
            )
        })
        .collect::<BTreeMap<_, _>>();
    SyntheticTask {
        task: TaskInstance {
            task_id: "worked".into(),
            query: "Assess the company's financial health.".into(),
            budget: Credits::from_int(50),
            market: MarketSnapshot::new(specs),
            seed: 17,
        },
        truth: GroundTruth {
            task_id: "worked".into(),
            required_facts: ["f0", "f1", "f2"].iter().map(|s| s.to_string()).collect(),
            ground_truth_solvable: Some(true),
            reference_tools: BTreeSet::new(),
            tools: truth,
        },
    }
}

pub fn worked_policy() -> ReplanningPolicy {
    let plan = |tag: &str, ids: &[&str]| ids.iter().map(|id| PlanStep::new(id, "{}", tag)).collect::<Vec<_>>();
    ReplanningPolicy::new(vec![
        plan("plan:a statements first", &["statements", "income"]),
        plan("plan:b community sources", &["forum", "rumors", "terminal"]),
        plan("plan:c filings then ratios", &["filings", "income", "balance"]),
    ])
}

pub fn worked_predictor() -> ScriptedPredictor {
    ScriptedPredictor::new(Probability::one())
        .rule("statements", None, p(350))
        .rule("income", Some("plan:c"), p(940))
        .rule("income", None, p(970))
        .rule("forum", None, p(20))
        .rule("rumors", None, p(10))
        .rule("terminal", None, p(720))
        .rule("filings", None, p(710))
        .rule("balance", None, p(900))
}

