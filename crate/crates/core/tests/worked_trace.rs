//! A hand-checked INTENT run: two plans rejected, the third accepted and
//! finished through rollout-cache hits.

mod common;

use common::{p, r, worked_policy, worked_predictor, worked_task};
use tollgate::domain::{Terminal, Verdict};
use tollgate::engine::{run_task, EngineConfig};
use tollgate::money::Credits;
use tollgate::oracle::{parse_trace, DecisionPath, IntentConfig, IntentOracle};
use tollgate::rng;
use tollgate::simenv::{SyntheticEnvironment, SyntheticGenerator};

#[test]
fn verdicts_costs_and_blacklist() {
    let t = worked_task();
    let pol = worked_policy();
    let pred = worked_predictor();
    let generator = SyntheticGenerator::new(t.truth.clone());
    let env = SyntheticEnvironment::new(t.clone());
    let mut oracle = IntentOracle::new(
        &pol,
        &pred,
        &generator,
        t.task.market.clone(),
        IntentConfig::default(),
        rng::stream(t.task.seed, rng::ORACLE),
    );
    let traj = run_task(&t.task, &pol, &env, &mut oracle, &EngineConfig::default()).unwrap();

    let verdicts: Vec<(Option<&str>, Verdict)> =
        traj.steps.iter().map(|s| (s.action.tool_id(), s.oracle_verdict)).collect();
    assert_eq!(verdicts, vec![
        (Some("statements"), Verdict::Rejected),
        (Some("forum"), Verdict::Rejected),
        (Some("filings"), Verdict::Accepted),
        (Some("income"), Verdict::Accepted),
        (Some("balance"), Verdict::Accepted),
        (None, Verdict::NotConsulted),
    ]);
    assert_eq!(traj.total_cost, Credits::from_int(43));
    assert!(matches!(traj.terminal, Terminal::Answered { .. }));

    // Independent arithmetic for each consult.
    let gamma = r(1, 2);
    let sigma_a = r(38, 1) / r(35, 100) + r(11, 1) / r(97, 100);
    let sigma_b = r(7, 1) / r(2, 100) + r(13, 1) / r(1, 100) + r(45, 1) / r(72, 100);
    let sigma_c = r(9, 1) / r(71, 100) + r(11, 1) / r(94, 100) + r(23, 1) / r(90, 100);
    assert_eq!(sigma_a, r(81420, 679));
    assert_eq!(sigma_b, r(3425, 2));
    assert!(&gamma * &sigma_a > r(50, 1));
    assert!(&gamma * &sigma_b > r(50, 1));
    assert!(&gamma * &sigma_c <= r(50, 1));

    let consults = oracle.consults();
    assert_eq!(consults.len(), 5);
    let sigmas: Vec<_> = consults[..3].iter().map(|c| c.sigma.clone().unwrap().into_rational()).collect();
    assert_eq!(sigmas, vec![sigma_a, sigma_b, sigma_c]);
    assert_eq!(consults[0].risk_adjusted.clone().unwrap(), Credits::from_rational(r(40710, 679)));
    assert_eq!(consults[3].path, DecisionPath::RolloutCache);
    assert_eq!(consults[4].path, DecisionPath::RolloutCache);
    assert_eq!(oracle.rollout_count(), 3);

    let banned: Vec<&str> = oracle.state().blacklist.iter().map(String::as_str).collect();
    assert_eq!(banned, vec!["forum", "rumors"]);
    assert!(!oracle.state().pruned_market.contains("forum"));

    // Feedback carries the per-step trace with exact probabilities.
    let trace = parse_trace(&traj.steps[0].observation).unwrap();
    assert_eq!(trace.len(), 2);
    assert_eq!(trace[0].action, "statements");
    assert_eq!(trace[0].p_success, Some(p(350)));
    assert_eq!(trace[0].expected_cost, Some(Credits::from_rational(r(760, 7))));
    assert_eq!(trace[1].p_success, Some(p(970)));
    assert!(traj.steps[1].observation.starts_with("[oracle:reject reason=over_budget]"));
}
