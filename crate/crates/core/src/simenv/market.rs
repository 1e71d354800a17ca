use std::collections::{BTreeMap, BTreeSet};

use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GroundTruth, SimError, SyntheticTask, ToolTruth};
use crate::domain::{MarketSnapshot, TaskInstance, ToolSpec};
use crate::money::{Credits, Probability, Rational};
use crate::par::{self, Execution};
use crate::rng;

const INPUT_SCHEMA: &str = r#"{"type":"object","properties":{"query":{"type":"string"}},"required":["query"]}"#;
const SUCCESS_TEMPLATE: &str = r#"{"status":"ok","tool":"{tool_id}","data":"{name} records for {arguments}"} {facts}"#;
const FAILURE_TEMPLATE: &str = r#"{"status":"error","tool":"{tool_id}","message":"no records matched {arguments}"}"#;
const NAME_STEMS: [&str; 10] =
    ["quote", "ledger", "filings", "ratios", "news", "profile", "holdings", "forecast", "history", "metrics"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketGenConfig {
    pub n_tools: usize,
    pub n_facts: usize,
    pub cost_low: Credits,
    pub cost_high: Credits,
    pub budget: Credits,
    pub prob_low: Probability,
    pub prob_high: Probability,
    /// Chance that a tool also returns a second required fact.
    pub bundle_rate: f64,
    pub seed: u64,
}

impl Default for MarketGenConfig {
    fn default() -> Self {
        MarketGenConfig {
            n_tools: 20,
            n_facts: 3,
            cost_low: Credits::from_int(5),
            cost_high: Credits::from_int(50),
            budget: Credits::from_int(50),
            prob_low: "0.3".parse().expect("literal"),
            prob_high: Probability::one(),
            bundle_rate: 0.2,
            seed: 0,
        }
    }
}

impl MarketGenConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: &str| Err(SimError::Config(msg.to_string()));
        if self.n_tools == 0 {
            return fail("n_tools must be at least 1");
        }
        if self.n_facts == 0 || self.n_facts > self.n_tools {
            return fail("n_facts must be between 1 and n_tools");
        }
        if self.n_facts > 16 {
            return fail("n_facts must be at most 16");
        }
        if self.cost_low.is_negative() || self.cost_low > self.cost_high {
            return fail("need 0 <= cost_low <= cost_high");
        }
        if !self.budget.is_positive() {
            return fail("budget must be positive");
        }
        if self.prob_low.is_zero() || self.prob_low > self.prob_high {
            return fail("need 0 < prob_low <= prob_high");
        }
        if !(0.0..=1.0).contains(&self.bundle_rate) {
            return fail("bundle_rate must be in [0, 1]");
        }
        Ok(())
    }
}

fn cents_bounds(low: &Credits, high: &Credits) -> (i64, i64) {
    let hundred = Rational::from_integer(100.into());
    let lo = (low.as_rational() * &hundred).ceil().to_integer().to_i64().unwrap_or(0);
    let hi = (high.as_rational() * &hundred).floor().to_integer().to_i64().unwrap_or(lo);
    (lo, hi.max(lo))
}

fn permille_bounds(low: &Probability, high: &Probability) -> (u32, u32) {
    let thousand = Rational::from_integer(1000.into());
    let lo = (low.as_rational() * &thousand).ceil().to_integer().to_u32().unwrap_or(1).max(1);
    let hi = (high.as_rational() * &thousand).floor().to_integer().to_u32().unwrap_or(1000).min(1000);
    (lo, hi.max(lo))
}

/// Draws one task: `n_tools` tools with prices uniform on the cent grid of
/// `[cost_low, cost_high]`, every required fact covered, and (when there are
/// spare tools) one fact covered twice at different prices.
pub fn gen_market(config: &MarketGenConfig) -> Result<SyntheticTask, SimError> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "market");
    let required: Vec<String> = (0..config.n_facts).map(|i| format!("f{i}")).collect();
    let (c_lo, c_hi) = cents_bounds(&config.cost_low, &config.cost_high);
    let (p_lo, p_hi) = permille_bounds(&config.prob_low, &config.prob_high);

    struct Draft {
        facts: BTreeSet<String>,
        cents: i64,
        permille: u32,
    }

    let mut drafts: Vec<Draft> = (0..config.n_tools)
        .map(|i| {
            let primary = if i < config.n_facts {
                required[i].clone()
            } else if rng.random::<f64>() < 0.7 {
                required[rng.random_range(0..required.len())].clone()
            } else {
                format!("x{i}")
            };
            let mut facts = BTreeSet::from([primary]);
            if rng.random::<f64>() < config.bundle_rate {
                facts.insert(required[rng.random_range(0..required.len())].clone());
            }
            Draft { facts, cents: rng.random_range(c_lo..=c_hi), permille: rng.random_range(p_lo..=p_hi) }
        })
        .collect();

    if config.n_tools > config.n_facts {
        let has_substitute = required.iter().any(|fact| {
            let costs: BTreeSet<i64> = drafts.iter().filter(|d| d.facts.contains(fact)).map(|d| d.cents).collect();
            costs.len() >= 2
        });
        if !has_substitute {
            let spare = config.n_facts;
            drafts[spare].facts.insert(required[0].clone());
            while c_lo < c_hi && drafts[spare].cents == drafts[0].cents {
                drafts[spare].cents = rng.random_range(c_lo..=c_hi);
            }
        }
    }
    drafts.shuffle(&mut rng);

    let mut tools = Vec::with_capacity(drafts.len());
    let mut truth_tools = BTreeMap::new();
    for (i, draft) in drafts.into_iter().enumerate() {
        let tool_id = format!("t{i:02}");
        let stem = NAME_STEMS[i % NAME_STEMS.len()];
        let provides: Vec<&str> = draft.facts.iter().map(String::as_str).collect();
        tools.push(ToolSpec {
            tool_id: tool_id.clone(),
            name: format!("get_{stem}_{i}"),
            description: format!("Provides: {}.", provides.join(", ")),
            input_schema: INPUT_SCHEMA.to_string(),
            per_call_cost: Credits::from_cents(draft.cents),
        });
        truth_tools.insert(
            tool_id,
            ToolTruth {
                success_prob: Probability::from_permille(draft.permille).expect("permille in range"),
                provides_facts: draft.facts,
                success_payload_template: SUCCESS_TEMPLATE.to_string(),
                failure_payload_template: FAILURE_TEMPLATE.to_string(),
            },
        );
    }

    let task_id = format!("task-{:016x}", config.seed);
    let mut synthetic = SyntheticTask {
        task: TaskInstance {
            task_id: task_id.clone(),
            query: format!("Collect the following facts and report them: {}.", required.join(", ")),
            budget: config.budget.clone(),
            market: MarketSnapshot::new(tools),
            seed: config.seed,
        },
        truth: GroundTruth {
            task_id,
            required_facts: required.into_iter().collect(),
            ground_truth_solvable: None,
            reference_tools: BTreeSet::new(),
            tools: truth_tools,
        },
    };
    if let Some(cover) = super::min_cover(&synthetic) {
        synthetic.truth.ground_truth_solvable = Some(cover.cost <= synthetic.task.budget);
        synthetic.truth.reference_tools = cover.tools.into_iter().collect();
    }
    Ok(synthetic)
}

/// `count` tasks with seeds derived from `config.seed`.
pub fn gen_markets(config: &MarketGenConfig, count: usize, exec: Execution) -> Result<Vec<SyntheticTask>, SimError> {
    par::map_indexed(count, exec, |i| {
        gen_market(&MarketGenConfig { seed: rng::mix(config.seed, i as u64), ..config.clone() })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSelector {
    /// The cheapest covering set recorded at generation.
    ReferenceTools,
    All,
}

pub fn perturb_prices(task: &SyntheticTask, factor: &Rational, selector: PriceSelector) -> Result<SyntheticTask, SimError> {
    if factor <= &Rational::zero() {
        return Err(SimError::Config("price factor must be positive".into()));
    }
    let mut out = task.clone();
    for tool in &mut out.task.market.tools {
        let selected = match selector {
            PriceSelector::All => true,
            PriceSelector::ReferenceTools => task.truth.reference_tools.contains(&tool.tool_id),
        };
        if selected {
            tool.per_call_cost = tool.per_call_cost.scale(factor);
        }
    }
    out.refresh_solvability();
    Ok(out)
}

pub fn scale_budget(task: &SyntheticTask, ratio: &Rational) -> Result<SyntheticTask, SimError> {
    if ratio <= &Rational::zero() {
        return Err(SimError::Config("budget ratio must be positive".into()));
    }
    let mut out = task.clone();
    out.task.budget = out.task.budget.scale(ratio);
    out.refresh_solvability();
    Ok(out)
}
