use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use serde_json::Value;
use tollgate::bench::{run_batch, BenchConfig, Mode};
use tollgate::domain::{initial_history, Action, CostDisclosure, ToolSpec};
use tollgate::engine::{Policy, PolicyError};
use tollgate::log::to_jsonl;
use tollgate::money::Probability;
use tollgate::oracle::{ConditionalGenerator, IntentionPredictor, WorldModel};
use tollgate::par::Execution;
use tollgate::simenv::{gen_market, MarketGenConfig, SyntheticTask};
use tollgate_llm::envelope::render_reply;
use tollgate_llm::loopback::{LoopbackServer, Reply};
use tollgate_llm::prompt::{PREDICTOR_SYSTEM, SATISFIED_DIRECTIVE, WORLD_MODEL_SYSTEM};
use tollgate_llm::{ChatClient, EndpointConfig, HttpBackend, LlmGenerator, LlmPolicy, LlmPredictor, LlmWorldModel};

fn client(server: &LoopbackServer, tweak: impl FnOnce(&mut EndpointConfig)) -> Arc<ChatClient> {
    let mut config = EndpointConfig { base_url: server.base_url(), request_timeout_ms: 5_000, ..EndpointConfig::default() };
    tweak(&mut config);
    Arc::new(ChatClient::new(config).unwrap())
}

fn task() -> SyntheticTask {
    gen_market(&MarketGenConfig { seed: 5, n_tools: 6, ..MarketGenConfig::default() }).unwrap()
}

fn tool() -> ToolSpec {
    task().task.market.tools[0].clone()
}

fn history() -> tollgate::domain::History {
    initial_history(&task().task, CostDisclosure::Shown).unwrap()
}

fn messages(request: &Value) -> Vec<(String, String)> {
    request["messages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["role"].as_str().unwrap().to_string(), m["content"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn policy_reads_answer_and_tool_call_envelopes() {
    let server = LoopbackServer::start(|n, _| match n {
        0 => Reply::content(&render_reply("done", &Action::answer("Findings: <<facts:f0>>")), 7),
        _ => Reply::content("Look it up.\n```action\n{\"tool_id\": \"t02\", \"arguments\": {\"q\": \"x\"}}\n```", 9),
    })
    .unwrap();
    let policy = LlmPolicy::new(client(&server, |_| {}));
    let step = policy.propose(&history()).unwrap();
    assert_eq!(step.action, Action::answer("Findings: <<facts:f0>>"));
    assert_eq!((step.reasoning.as_str(), step.tokens), ("done", 7));
    let step = policy.propose(&history()).unwrap();
    assert_eq!(step.action, Action::call("t02", "{\"q\":\"x\"}"));
    assert_eq!(step.tokens, 9);
    let request = &server.requests()[0];
    let roles: Vec<String> = messages(request).into_iter().map(|m| m.0).collect();
    assert_eq!(roles, ["system", "user"]);
    assert_eq!(request["temperature"], 1.0);
}

#[test]
fn garbage_replies_exhaust_retries() {
    let server = LoopbackServer::start(|_, _| Reply::content("I refuse to use the format.", 3)).unwrap();
    let policy = LlmPolicy::new(client(&server, |c| c.max_retries = 2));
    assert!(matches!(policy.propose(&history()), Err(PolicyError::Malformed(_))));
    let requests = server.requests();
    assert_eq!(requests.len(), 3);
    let last = messages(&requests[2]);
    assert_eq!(last.len(), 2 + 2 * 2);
    assert!(last.last().unwrap().1.contains("```action"));
}

#[test]
fn repair_turn_recovers() {
    let server = LoopbackServer::start(|n, _| match n {
        0 => Reply::content("oops", 2),
        _ => Reply::content(&render_reply("ok", &Action::answer("x")), 5),
    })
    .unwrap();
    let step = LlmPolicy::new(client(&server, |_| {})).propose(&history()).unwrap();
    assert_eq!(step.action, Action::answer("x"));
    assert_eq!(step.tokens, 7);
}

#[test]
fn world_model_returns_payload_and_generator_adds_directive() {
    let server = LoopbackServer::start(|_, _| Reply::content("{\"rows\": 3}", 11)).unwrap();
    let c = client(&server, |_| {});
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = LlmWorldModel::new(c.clone()).simulate(&tool(), "{}", &mut rng).unwrap();
    assert_eq!((out.text.as_str(), out.tokens), ("{\"rows\": 3}", 11));
    LlmGenerator::new(c.clone()).generate(&tool(), "{}", true, &mut rng).unwrap();
    LlmGenerator::new(c).generate(&tool(), "{}", false, &mut rng).unwrap();
    let requests = server.requests();
    let plain = messages(&requests[0]);
    assert_eq!(plain[0].1, WORLD_MODEL_SYSTEM);
    assert!(!plain[1].1.contains(SATISFIED_DIRECTIVE));
    assert!(messages(&requests[1])[1].1.contains("z=1"));
    assert_eq!(requests[1]["temperature"], 0.3);
    assert!(!messages(&requests[2])[1].1.contains("z=1"));
}

#[test]
fn timeout_is_transient() {
    let server = LoopbackServer::start(|_, _| Reply { delay: Duration::from_millis(600), ..Reply::content("late", 1) }).unwrap();
    let policy = LlmPolicy::new(client(&server, |c| {
        c.request_timeout_ms = 100;
        c.max_retries = 0;
    }));
    assert!(matches!(policy.propose(&history()), Err(PolicyError::Transient(_))));
}

#[test]
fn server_errors_are_retried() {
    let server = LoopbackServer::start(|n, _| match n {
        0 => Reply { status: 503, body: "busy".into(), delay: Duration::ZERO },
        _ => Reply::content(&render_reply("", &Action::answer("a")), 1),
    })
    .unwrap();
    let step = LlmPolicy::new(client(&server, |_| {})).propose(&history()).unwrap();
    assert_eq!(step.action, Action::answer("a"));
    assert_eq!(server.request_count(), 2);
}

#[test]
fn predictor_applies_temperature_and_floor() {
    let server = LoopbackServer::start(|n, _| match n {
        0 => Reply::content("logit: 0", 1),
        1 => Reply::content("logit: 2", 1),
        2 => Reply::content("logit: -40", 1),
        _ => Reply::content("no clue", 1),
    })
    .unwrap();
    let floor: Probability = "0.01".parse().unwrap();
    let predictor = LlmPredictor::new(client(&server, |_| {}), 2.0, floor.clone());
    let rho = |p: &LlmPredictor| p.predict("why", &tool(), "{}").unwrap().rho.to_f64();
    assert!((rho(&predictor) - 0.5).abs() < 1e-9);
    assert!((rho(&predictor) - 0.731_058_578_6).abs() < 1e-6);
    assert_eq!(rho(&predictor), floor.to_f64());
    assert_eq!(predictor.warnings(), 0);
    assert_eq!(rho(&predictor), floor.to_f64());
    assert_eq!(predictor.warnings(), 1);
    assert_eq!(messages(&server.requests()[0])[0].1, PREDICTOR_SYSTEM);
}

/// A deterministic stand-in model: calls the reference tools in market
/// order, then answers with every fact it has seen.
fn scripted_model(task: SyntheticTask) -> impl Fn(usize, &Value) -> Reply + Send + Sync {
    let tools: Vec<String> =
        task.task.market.ids().filter(|id| task.truth.reference_tools.contains(*id)).map(String::from).collect();
    let facts: Vec<String> = task.required_facts().iter().cloned().collect();
    move |_, request| {
        let msgs = messages(request);
        let system = &msgs[0].1;
        if system.starts_with(WORLD_MODEL_SYSTEM) {
            return Reply::content("simulated success", 4);
        }
        if system.starts_with(PREDICTOR_SYSTEM) {
            return Reply::content("logit: 3", 2);
        }
        let done = msgs.iter().filter(|m| m.0 == "user" && m.1.starts_with("Observation:")).count();
        let action = match tools.get(done) {
            Some(id) => Action::call(id.clone(), "{}"),
            None => Action::answer(format!("Findings: <<facts:{}>>", facts.join(","))),
        };
        Reply::content(&render_reply("next step", &action), 10)
    }
}

#[test]
fn http_backend_batch_replays_identically() {
    let task = task();
    let tasks = vec![task.clone()];
    let run = || {
        let server = LoopbackServer::start(scripted_model(task.clone())).unwrap();
        let config = EndpointConfig { base_url: server.base_url(), ..EndpointConfig::default() };
        let backend = HttpBackend::new(ChatClient::new(config).unwrap(), 1.0);
        let bench = BenchConfig { mode: Mode::Intent, ..BenchConfig::default() };
        let result = run_batch(&tasks, &bench, &backend, Execution::Sequential).unwrap();
        (to_jsonl(&result.trajectories), serde_json::to_string(&result.metrics).unwrap())
    };
    let first = run();
    assert_eq!(first, run());
    assert!(first.0.contains("\"record\""));
    let metrics: Value = serde_json::from_str(&first.1).unwrap();
    assert_eq!(metrics["feasible_rate"], 1.0);
    assert!(metrics["token_count"].as_u64().unwrap() > 0);
}
