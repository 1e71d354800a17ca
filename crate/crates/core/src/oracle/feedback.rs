//! Rejection feedback shown to the policy in place of a real observation.
//!
//! Layout:
//!
//! ```text
//! [oracle:reject reason=<reason>]
//! <one-line explanation>
//! Remaining Budget: <amount>. Projected Cost: <amount> (~<decimal>).
//! Predicted Tool Trace:
//! [[TRACE]]
//! [{"action":"<tool id>","price":"<exact>","p_success":"<exact>","expected_cost":"<exact>"}, ...]
//! [[/TRACE]]
//! Revise the plan: fewer calls, cheaper or more reliable tools, or answer now.
//! ```
//!
//! Only tool ids, prices and probabilities are exposed; simulated arguments
//! and observations never leave the oracle. `p_success` and `expected_cost`
//! are absent for lookaheads that do not predict probabilities.

use serde::{Deserialize, Serialize};

use crate::money::{Credits, Probability};

pub const TRACE_OPEN: &str = "[[TRACE]]";
pub const TRACE_CLOSE: &str = "[[/TRACE]]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub action: String,
    pub price: Credits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_success: Option<Probability>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_cost: Option<Credits>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    OverBudget,
    Overflow,
    Blacklisted,
    UnknownTool,
}

impl RejectReason {
    fn tag(self) -> &'static str {
        match self {
            RejectReason::OverBudget => "over_budget",
            RejectReason::Overflow => "overflow",
            RejectReason::Blacklisted => "blacklisted",
            RejectReason::UnknownTool => "unknown_tool",
        }
    }

    fn explanation(self) -> &'static str {
        match self {
            RejectReason::OverBudget => {
                "Budget check failed: the simulated plan is projected to cost more than the remaining budget. \
                 Steps with a low success probability will likely need retries."
            }
            RejectReason::Overflow => {
                "Budget check failed: the simulated plan did not reach an answer within the lookahead horizon."
            }
            RejectReason::Blacklisted => "Call blocked: this tool was removed from the market for this task.",
            RejectReason::UnknownTool => "Call blocked: this tool is not in the market.",
        }
    }
}

pub fn render_rejection(
    reason: RejectReason,
    remaining: &Credits,
    projected: Option<&Credits>,
    trace: &[TraceEntry],
) -> String {
    let mut out = format!("[oracle:reject reason={}]\n{}\n", reason.tag(), reason.explanation());
    out.push_str(&format!("Remaining Budget: {remaining}."));
    if let Some(projected) = projected {
        out.push_str(&format!(" Projected Cost: {projected} (~{:.2}).", projected.to_f64()));
    }
    out.push_str("\nPredicted Tool Trace:\n");
    out.push_str(TRACE_OPEN);
    out.push('\n');
    out.push_str(&serde_json::to_string(trace).expect("trace entries serialize"));
    out.push('\n');
    out.push_str(TRACE_CLOSE);
    out.push_str("\nRevise the plan: fewer calls, cheaper or more reliable tools, or answer now.");
    out
}

/// Extracts the machine-readable trace from rejection feedback.
pub fn parse_trace(feedback: &str) -> Option<Vec<TraceEntry>> {
    let start = feedback.find(TRACE_OPEN)? + TRACE_OPEN.len();
    let end = start + feedback[start..].find(TRACE_CLOSE)?;
    serde_json::from_str(feedback[start..end].trim()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_roundtrip_is_exact() {
        let trace = vec![
            TraceEntry {
                action: "cash_flow".into(),
                price: Credits::from_int(38),
                p_success: Some("0.35".parse().unwrap()),
                expected_cost: Some("760/7".parse().unwrap()),
            },
            TraceEntry { action: "income".into(), price: Credits::from_int(11), p_success: None, expected_cost: None },
        ];
        let text = render_rejection(RejectReason::OverBudget, &Credits::from_int(50), Some(&"40710/679".parse().unwrap()), &trace);
        assert!(text.starts_with("[oracle:reject reason=over_budget]"));
        assert!(text.contains("(~59.96)"));
        assert!(text.contains(r#""expected_cost":"760/7""#));
        assert_eq!(parse_trace(&text).unwrap(), trace);
    }

    #[test]
    fn missing_markers() {
        assert_eq!(parse_trace("no trace here"), None);
        assert_eq!(parse_trace("[[TRACE]] [ "), None);
    }
}
