use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BenchError;
use crate::domain::Trajectory;
use crate::money::{rational_to_f64, Credits, Rational};

/// Aggregate metrics of one batch. Holds no wall-clock data, so equal seeds
/// give byte-identical serializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_tasks: usize,
    pub pass_rate: f64,
    /// Pass rate over tasks solvable within budget; absent without
    /// solvability labels.
    pub optimal_pass_rate: Option<f64>,
    pub feasible_rate: f64,
    pub avg_cost: f64,
    /// Mean per-call price over executed calls; absent when no call ran.
    pub avg_price: Option<f64>,
    pub token_count: u64,
    pub n_passed: usize,
    pub n_feasible: usize,
    pub n_solvable: Option<usize>,
    pub total_cost: Credits,
    pub real_calls: u64,
    pub simulated_calls: u64,
    pub rollouts: u64,
    pub rejections: u64,
    pub policy_queries: u64,
    pub cache_hits: u64,
    /// Needs reference solutions; never computed here.
    pub win_rate: Option<f64>,
    pub config_digest: String,
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let text = serde_json::to_string(&value).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn ratio(num: usize, den: usize) -> f64 {
    num as f64 / den as f64
}

pub fn compute_metrics(
    trajectories: &[Trajectory],
    solvability: &BTreeMap<String, Option<bool>>,
    pass_threshold: f64,
    config_digest: &str,
) -> Result<MetricsReport, BenchError> {
    if trajectories.is_empty() {
        return Err(BenchError::Empty);
    }
    let n = trajectories.len();
    let passed = |t: &Trajectory| t.reward.as_ref().is_some_and(|r| rational_to_f64(r) >= pass_threshold);
    let n_passed = trajectories.iter().filter(|t| passed(t)).count();
    let n_feasible = trajectories.iter().filter(|t| t.is_feasible()).count();
    let total_cost: Credits = trajectories.iter().map(|t| &t.total_cost).sum();

    let mut price_sum = Credits::zero();
    let mut price_calls = 0usize;
    for t in trajectories {
        for price in t.executed_prices() {
            price_sum += price;
            price_calls += 1;
        }
    }

    let labelled: Vec<(&Trajectory, bool)> = trajectories
        .iter()
        .filter_map(|t| solvability.get(&t.task.task_id).copied().flatten().map(|s| (t, s)))
        .collect();
    let (n_solvable, optimal_pass_rate) = if labelled.is_empty() {
        (None, None)
    } else {
        let solvable: Vec<&Trajectory> = labelled.iter().filter(|(_, s)| *s).map(|(t, _)| *t).collect();
        let hits = solvable.iter().filter(|t| passed(t)).count();
        (Some(solvable.len()), (!solvable.is_empty()).then(|| ratio(hits, solvable.len())))
    };

    let sum = |f: fn(&Trajectory) -> u64| trajectories.iter().map(f).sum::<u64>();
    Ok(MetricsReport {
        n_tasks: n,
        pass_rate: ratio(n_passed, n),
        optimal_pass_rate,
        feasible_rate: ratio(n_feasible, n),
        avg_cost: rational_to_f64(&(total_cost.as_rational() / Rational::from_integer(n.into()))),
        avg_price: (price_calls > 0)
            .then(|| rational_to_f64(&(price_sum.as_rational() / Rational::from_integer(price_calls.into())))),
        token_count: sum(|t| t.counters.tokens),
        n_passed,
        n_feasible,
        n_solvable,
        total_cost,
        real_calls: sum(|t| t.counters.real_calls),
        simulated_calls: sum(|t| t.counters.simulated_calls),
        rollouts: sum(|t| t.counters.rollouts),
        rejections: sum(|t| t.counters.rejections),
        policy_queries: sum(|t| t.counters.policy_queries),
        cache_hits: sum(|t| t.counters.cache_hits),
        win_rate: None,
        config_digest: config_digest.to_string(),
    })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "n_tasks,pass_rate,optimal_pass_rate,feasible_rate,avg_cost,avg_price,\
token_count,real_calls,simulated_calls,rollouts,rejections,config_digest";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n_tasks,
            self.pass_rate,
            opt(self.optimal_pass_rate),
            self.feasible_rate,
            self.avg_cost,
            opt(self.avg_price),
            self.token_count,
            self.real_calls,
            self.simulated_calls,
            self.rollouts,
            self.rejections,
            self.config_digest
        )
    }
}
