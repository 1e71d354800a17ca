//! Trajectory logs as JSON lines, and an offline validator for them.
//!
//! A trajectory is written as one `task` record, one `step` record per step
//! and a closing `end` record. Several trajectories may share a file.

use std::io::{BufRead, Write};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, RunCounters, StepRecord, TaskInstance, Terminal, Trajectory, Verdict};
use crate::money::{exact, format_rational, Credits, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Task { task: TaskInstance },
    Step(StepRecord),
    End {
        terminal: Terminal,
        total_cost: Credits,
        #[serde(with = "exact::option", default)]
        judge_score: Option<Rational>,
        #[serde(with = "exact::option", default)]
        reward: Option<Rational>,
        #[serde(default)]
        counters: RunCounters,
    },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn write_trajectory(out: &mut dyn Write, trajectory: &Trajectory) -> Result<(), LogError> {
    let mut emit = |record: &LogRecord| -> Result<(), LogError> {
        let line = serde_json::to_string(record).map_err(|e| LogError::Parse { line: 0, message: e.to_string() })?;
        writeln!(out, "{line}")?;
        Ok(())
    };
    emit(&LogRecord::Task { task: trajectory.task.clone() })?;
    for step in &trajectory.steps {
        emit(&LogRecord::Step(step.clone()))?;
    }
    emit(&LogRecord::End {
        terminal: trajectory.terminal.clone(),
        total_cost: trajectory.total_cost.clone(),
        judge_score: trajectory.judge_score.clone(),
        reward: trajectory.reward.clone(),
        counters: trajectory.counters.clone(),
    })
}

pub fn to_jsonl(trajectories: &[Trajectory]) -> String {
    let mut buf = Vec::new();
    for t in trajectories {
        write_trajectory(&mut buf, t).expect("writing to memory");
    }
    String::from_utf8(buf).expect("json is utf-8")
}

/// Reads every trajectory in a JSONL stream. Blank lines are skipped.
pub fn read_trajectories(input: &mut dyn BufRead) -> Result<Vec<Trajectory>, LogError> {
    let mut out = Vec::new();
    let mut open: Option<(TaskInstance, Vec<StepRecord>)> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord =
            serde_json::from_str(&line).map_err(|e| LogError::Parse { line: lineno, message: e.to_string() })?;
        let unexpected = |what: &str| LogError::Parse { line: lineno, message: format!("unexpected {what} record") };
        match record {
            LogRecord::Task { task } => {
                if open.is_some() {
                    return Err(unexpected("task"));
                }
                open = Some((task, Vec::new()));
            }
            LogRecord::Step(step) => open.as_mut().ok_or_else(|| unexpected("step"))?.1.push(step),
            LogRecord::End { terminal, total_cost, judge_score, reward, counters } => {
                let (task, steps) = open.take().ok_or_else(|| unexpected("end"))?;
                out.push(Trajectory { task, steps, terminal, total_cost, judge_score, reward, counters });
            }
        }
    }
    if open.is_some() {
        return Err(LogError::Parse { line: 0, message: "trajectory without an end record".into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub step: Option<u32>,
    pub detail: String,
}

fn violation(rule: &str, step: Option<u32>, detail: String) -> Violation {
    Violation { rule: rule.to_string(), step, detail }
}

/// Checks the accounting invariants of a finished trajectory.
pub fn validate_trajectory(t: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut remaining = t.task.budget.clone();
    let mut spent = Credits::zero();
    let mut last_index = 0u32;
    for step in &t.steps {
        let at = Some(step.index);
        if step.index <= last_index {
            out.push(violation("step_order", at, format!("index {} after {last_index}", step.index)));
        }
        last_index = step.index;
        if step.executed {
            if step.oracle_verdict == Verdict::Rejected {
                out.push(violation("rejected_executed", at, "rejected call reached the environment".into()));
            }
            let price = step.action.tool_id().and_then(|id| t.task.market.get(id)).map(|tool| &tool.per_call_cost);
            match price {
                Some(price) if *price == step.cost_charged => {}
                Some(price) => out.push(violation(
                    "cost_charged",
                    at,
                    format!("charged {} but the tool costs {price}", step.cost_charged),
                )),
                None => out.push(violation("cost_charged", at, "executed step has no priced tool".into())),
            }
        } else if !step.cost_charged.is_zero() {
            out.push(violation("cost_charged", at, format!("unexecuted step charged {}", step.cost_charged)));
        }
        remaining -= &step.cost_charged;
        spent += &step.cost_charged;
        if step.budget_after != remaining {
            out.push(violation(
                "ledger",
                at,
                format!("budget_after {} but the running balance is {remaining}", step.budget_after),
            ));
        }
    }
    if t.total_cost != spent {
        out.push(violation("total_cost", None, format!("total_cost {} but steps sum to {spent}", t.total_cost)));
    }
    if let Terminal::Answered { text } = &t.terminal {
        let last = t.steps.last().map(|s| &s.action);
        if !matches!(last, Some(Action::Answer { answer_text }) if answer_text == text) {
            out.push(violation("terminal", None, "answered terminal without a matching final answer step".into()));
        }
    }
    if let Some(score) = &t.judge_score {
        if score < &Rational::zero() || score > &Rational::one() {
            out.push(violation("judge_score", None, format!("score {} outside [0, 1]", format_rational(score))));
        }
    }
    match (&t.judge_score, &t.reward) {
        (Some(score), Some(reward)) => {
            let expected = if t.total_cost <= t.task.budget { score.clone() } else { Rational::zero() };
            if *reward != expected {
                out.push(violation(
                    "reward",
                    None,
                    format!("reward {} but the rule gives {}", format_rational(reward), format_rational(&expected)),
                ));
            }
        }
        (None, Some(_)) => out.push(violation("reward", None, "reward without a judge score".into())),
        _ => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{MarketSnapshot, ToolSpec};

    fn sample() -> Trajectory {
        let tool = ToolSpec {
            tool_id: "a".into(),
            name: "a".into(),
            description: "d".into(),
            input_schema: "{}".into(),
            per_call_cost: Credits::from_int(4),
        };
        let task = TaskInstance {
            task_id: "x".into(),
            query: "q".into(),
            budget: Credits::from_int(10),
            market: MarketSnapshot::new(vec![tool]),
            seed: 1,
        };
        let call = StepRecord {
            index: 1,
            reasoning: "r".into(),
            action: Action::call("a", "{}"),
            observation: "ok".into(),
            executed: true,
            cost_charged: Credits::from_int(4),
            oracle_verdict: Verdict::Accepted,
            budget_after: Credits::from_int(6),
        };
        let answer = StepRecord {
            index: 2,
            reasoning: "r".into(),
            action: Action::answer("done"),
            observation: String::new(),
            executed: false,
            cost_charged: Credits::zero(),
            oracle_verdict: Verdict::NotConsulted,
            budget_after: Credits::from_int(6),
        };
        Trajectory {
            task,
            steps: vec![call, answer],
            terminal: Terminal::Answered { text: "done".into() },
            total_cost: Credits::from_int(4),
            judge_score: Some(Rational::one()),
            reward: Some(Rational::one()),
            counters: RunCounters::default(),
        }
    }

    #[test]
    fn roundtrip_and_valid() {
        let t = sample();
        let text = to_jsonl(&[t.clone(), t.clone()]);
        assert_eq!(text.lines().count(), 8);
        let back = read_trajectories(&mut text.as_bytes()).unwrap();
        assert_eq!(back, vec![t.clone(), t.clone()]);
        assert!(validate_trajectory(&t).is_empty());
    }

    #[test]
    fn detects_corruption() {
        let mut t = sample();
        t.steps[0].budget_after = Credits::from_int(7);
        let rules: Vec<_> = validate_trajectory(&t).into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec!["ledger"]);

        let mut t = sample();
        t.steps[0].cost_charged = Credits::from_int(3);
        assert!(validate_trajectory(&t).iter().any(|v| v.rule == "cost_charged"));

        let mut t = sample();
        t.reward = Some(Rational::zero());
        assert_eq!(validate_trajectory(&t)[0].rule, "reward");

        let mut t = sample();
        t.total_cost = Credits::from_int(5);
        assert_eq!(validate_trajectory(&t)[0].rule, "total_cost");
    }

    #[test]
    fn truncated_log_is_an_error() {
        let text = to_jsonl(&[sample()]);
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(read_trajectories(&mut cut.as_bytes()).is_err());
        assert!(matches!(read_trajectories(&mut "{\"record\":\"step\"}".as_bytes()), Err(LogError::Parse { line: 1, .. })));
    }
}
