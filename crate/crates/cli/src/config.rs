use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tollgate::bench::{BenchConfig, Mode, PolicyKind};
use tollgate::engine::EngineConfig;
use tollgate::money::{exact, parse_rational, Probability, Rational};
use tollgate::oracle::{IntentConfig, McoConfig};
use tollgate::simenv::{MarketGenConfig, OnReject, PriceSelector};
use tollgate_llm::EndpointConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Ground-truth components driven by the cheapest-cover plan.
    Scripted,
    /// Ground-truth components driven by `policy`.
    Synthetic,
    /// Every agent-side component served by a chat-completions endpoint.
    Http,
}

/// Everything a command needs. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub backend: BackendKind,
    pub seed: u64,
    /// Number of generated tasks when `tasks_dir` is unset.
    pub tasks: usize,
    /// Directory of `.task.json` / `.truth.json` pairs.
    pub tasks_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// 0 uses every core, 1 runs sequentially.
    pub workers: usize,
    #[serde(with = "exact")]
    pub budget_ratio: Rational,
    #[serde(with = "exact")]
    pub price_factor: Rational,
    pub price_selector: PriceSelector,
    pub pass_threshold: f64,
    /// Temperature applied to predictor logits on the http backend.
    pub predictor_temperature: f64,
    pub policy: PolicyKind,
    pub market: MarketGenConfig,
    pub engine: EngineConfig,
    pub intent: IntentConfig,
    pub mco: McoConfig,
    pub endpoint: EndpointConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let one = Rational::from_integer(1.into());
        RunConfig {
            mode: Mode::Intent,
            backend: BackendKind::Synthetic,
            seed: 0,
            tasks: 100,
            tasks_dir: None,
            out: PathBuf::from("out"),
            workers: 0,
            budget_ratio: one.clone(),
            price_factor: one,
            price_selector: PriceSelector::ReferenceTools,
            pass_threshold: 0.5,
            predictor_temperature: 1.0,
            policy: PolicyKind::Explore { patience: 8 },
            market: MarketGenConfig::default(),
            engine: EngineConfig::default(),
            intent: IntentConfig::default(),
            mco: McoConfig::default(),
            endpoint: EndpointConfig::default(),
        }
    }
}

/// Flags shared by every command that runs tasks. Each maps to one config key.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Risk preference (`intent.gamma`), e.g. `0.5` or `1/3`.
    #[arg(long, value_parser = rational_arg)]
    pub gamma: Option<Rational>,
    /// Blacklist threshold (`intent.delta`).
    #[arg(long, value_parser = probability_arg)]
    pub delta: Option<Probability>,
    #[arg(long, value_parser = rational_arg)]
    pub budget_ratio: Option<Rational>,
    #[arg(long, value_parser = rational_arg)]
    pub price_factor: Option<Rational>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of generated tasks.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Load tasks from this directory instead of generating them.
    #[arg(long)]
    pub tasks_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Raw,
    Prompt,
    Mco,
    Intent,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Raw => Mode::Raw,
            ModeArg::Prompt => Mode::Prompt,
            ModeArg::Mco => Mode::Mco,
            ModeArg::Intent => Mode::Intent,
        }
    }
}

fn rational_arg(s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

fn probability_arg(s: &str) -> Result<Probability, String> {
    s.parse::<Probability>().map_err(|e| e.to_string())
}

pub fn load_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => load_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            c.mode = m.into();
        }
        if let Some(b) = self.backend {
            c.backend = b;
        }
        if let Some(g) = &self.gamma {
            c.intent.gamma = g.clone();
        }
        if let Some(d) = &self.delta {
            c.intent.delta = d.clone();
        }
        if let Some(r) = &self.budget_ratio {
            c.budget_ratio = r.clone();
        }
        if let Some(f) = &self.price_factor {
            c.price_factor = f.clone();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(n) = self.tasks {
            c.tasks = n;
        }
        if let Some(d) = &self.tasks_dir {
            c.tasks_dir = Some(d.clone());
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.bench().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.market.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let zero = Rational::from_integer(0.into());
        if self.budget_ratio <= zero || self.price_factor <= zero {
            return Err(CliError::Config("budget_ratio and price_factor must be positive".into()));
        }
        if self.tasks == 0 && self.tasks_dir.is_none() {
            return Err(CliError::Config("tasks must be at least 1".into()));
        }
        if self.backend == BackendKind::Http {
            self.endpoint.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if !(self.predictor_temperature > 0.0) {
                return Err(CliError::Config("predictor_temperature must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            mode: self.mode,
            engine: self.engine.clone(),
            intent: self.intent.clone(),
            mco: self.mco.clone(),
            pass_threshold: self.pass_threshold,
        }
    }

    /// The fixture policy the synthetic-style backends use.
    pub fn fixture_policy(&self) -> PolicyKind {
        match self.backend {
            BackendKind::Scripted => PolicyKind::Reference { on_reject: OnReject::Retry },
            _ => self.policy.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
