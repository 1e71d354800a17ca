//! Budget-constrained tool use with oracle-gated execution.
//!
//! The [`engine`] runs a policy against a tool market, asking an [`oracle`]
//! before every paid call. [`simenv`] provides synthetic markets with known
//! ground truth, [`calibrate`] fits probability calibration, and [`bench`]
//! runs batches and computes metrics.

pub mod bench;
pub mod calibrate;
pub mod domain;
pub mod engine;
pub mod log;
pub mod money;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod simenv;

pub use domain::{
    Action, BlockKind, ContextBlock, History, MarketSnapshot, RunCounters, StepRecord, TaskInstance, Terminal,
    ToolSpec, Trajectory, Verdict,
};
pub use engine::{run_soft, run_task, EngineConfig, EngineError, Environment, Oracle, Policy, PolicyStep, SoftMode};
pub use money::{Credits, Probability, Rational};
pub use par::Execution;
