use serde::{Deserialize, Serialize};

use super::{run_batch, Backend, BenchConfig, BenchError, MetricsReport, Mode};
use crate::money::{format_rational, Rational};
use crate::par::Execution;
use crate::simenv::{gen_markets, perturb_prices, scale_budget, MarketGenConfig, PriceSelector, SyntheticTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    PricePerturb {
        #[serde(with = "rational_list")]
        factors: Vec<Rational>,
        selector: PriceSelector,
    },
    BudgetScale {
        #[serde(with = "rational_list")]
        ratios: Vec<Rational>,
    },
    /// Regenerates the markets at each size; the input tasks are unused.
    MarketScale { sizes: Vec<usize>, market: MarketGenConfig, count: usize },
    GammaSweep {
        #[serde(with = "rational_list")]
        gammas: Vec<Rational>,
    },
}

mod rational_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::money::{format_rational, parse_rational, Rational};

    pub fn serialize<S: Serializer>(values: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        values.iter().map(format_rational).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        let raw = Vec::<serde_json::Value>::deserialize(d)?;
        raw.into_iter()
            .map(|v| {
                let text = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                parse_rational(&text).map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPoint {
    pub parameter: String,
    pub metrics: MetricsReport,
}

/// One batch per `gamma` under the INTENT oracle, everything else fixed.
pub fn sweep_gamma(
    base: &BenchConfig,
    gammas: &[Rational],
    tasks: &[SyntheticTask],
    backend: &dyn Backend,
    exec: Execution,
) -> Result<Vec<(Rational, MetricsReport)>, BenchError> {
    if gammas.is_empty() {
        return Err(BenchError::Config("gamma list is empty".into()));
    }
    if gammas.windows(2).any(|w| w[0] > w[1]) {
        return Err(BenchError::Config("gammas must be sorted ascending".into()));
    }
    gammas
        .iter()
        .map(|gamma| {
            let mut config = base.clone();
            config.mode = Mode::Intent;
            config.intent.gamma = gamma.clone();
            Ok((gamma.clone(), run_batch(tasks, &config, backend, exec)?.metrics))
        })
        .collect()
}

fn point(parameter: String, metrics: MetricsReport) -> ExperimentPoint {
    ExperimentPoint { parameter, metrics }
}

fn transformed(
    tasks: &[SyntheticTask],
    f: impl Fn(&SyntheticTask) -> Result<SyntheticTask, crate::simenv::SimError>,
) -> Result<Vec<SyntheticTask>, BenchError> {
    Ok(tasks.iter().map(f).collect::<Result<Vec<_>, _>>()?)
}

pub fn run_experiment(
    experiment: &Experiment,
    base: &BenchConfig,
    tasks: &[SyntheticTask],
    backend: &dyn Backend,
    exec: Execution,
) -> Result<Vec<ExperimentPoint>, BenchError> {
    match experiment {
        Experiment::PricePerturb { factors, selector } => factors
            .iter()
            .map(|factor| {
                let perturbed = transformed(tasks, |t| perturb_prices(t, factor, *selector))?;
                let metrics = run_batch(&perturbed, base, backend, exec)?.metrics;
                Ok(point(format!("price_factor={}", format_rational(factor)), metrics))
            })
            .collect(),
        Experiment::BudgetScale { ratios } => ratios
            .iter()
            .map(|ratio| {
                let scaled = transformed(tasks, |t| scale_budget(t, ratio))?;
                let metrics = run_batch(&scaled, base, backend, exec)?.metrics;
                Ok(point(format!("budget_ratio={}", format_rational(ratio)), metrics))
            })
            .collect(),
        Experiment::MarketScale { sizes, market, count } => sizes
            .iter()
            .map(|&n_tools| {
                let generated = gen_markets(&MarketGenConfig { n_tools, ..market.clone() }, *count, exec)?;
                let metrics = run_batch(&generated, base, backend, exec)?.metrics;
                Ok(point(format!("n_tools={n_tools}"), metrics))
            })
            .collect(),
        Experiment::GammaSweep { gammas } => Ok(sweep_gamma(base, gammas, tasks, backend, exec)?
            .into_iter()
            .map(|(gamma, metrics)| point(format!("gamma={}", format_rational(&gamma)), metrics))
            .collect()),
    }
}
