//! History to chat messages.

use tollgate::domain::{BlockKind, History, ToolSpec};

use crate::client::Message;
use crate::envelope::{parse_action_block, render_reply, ENVELOPE_INSTRUCTIONS};

/// System block plus envelope rules, then the query, budget and market as
/// the first user turn. Each step becomes an assistant turn (reasoning and
/// action) followed by a user turn carrying the observation or oracle
/// feedback.
pub fn policy_messages(history: &History) -> Vec<Message> {
    let mut out = Vec::new();
    let mut opening = Vec::new();
    let mut reasoning: Option<&str> = None;
    for block in history.blocks() {
        match block.kind {
            BlockKind::System => out.push(Message::system(format!("{}\n\n{ENVELOPE_INSTRUCTIONS}", block.payload))),
            BlockKind::Query | BlockKind::Budget => opening.push(block.payload.as_str()),
            BlockKind::Market if block.step_index == 0 => {
                opening.push(block.payload.as_str());
                out.push(Message::user(opening.join("\n\n")));
            }
            BlockKind::Market => out.push(Message::user(format!("The market changed.\n{}", block.payload))),
            BlockKind::Reasoning => reasoning = Some(&block.payload),
            BlockKind::Action => {
                let text = match parse_action_block(&block.payload) {
                    Some(action) => render_reply(reasoning.take().unwrap_or_default(), &action),
                    None => block.payload.clone(),
                };
                out.push(Message::assistant(text));
            }
            BlockKind::Observation => out.push(Message::user(format!("Observation:\n{}", block.payload))),
            BlockKind::OracleFeedback => {
                out.push(Message::user(format!("The call was NOT executed. Oracle feedback:\n{}", block.payload)))
            }
        }
    }
    out
}

pub const WORLD_MODEL_SYSTEM: &str =
    "You simulate the output of a tool. Reply with the raw tool output only, in the tool's usual format.";

pub const SATISFIED_DIRECTIVE: &str =
    "Directive: this call succeeds and fully satisfies the caller's intention (z=1). Produce such an output.";

pub const PREDICTOR_SYSTEM: &str = "Estimate how likely the tool call achieves the intention stated in the \
reasoning. Reply with one line `logit: <real number>`; 0 means even odds.";

fn tool_card(tool: &ToolSpec, arguments: &str) -> String {
    format!(
        "Tool: {} ({})\nDescription: {}\nInput schema: {}\nArguments: {arguments}",
        tool.name, tool.tool_id, tool.description, tool.input_schema
    )
}

pub fn world_model_messages(tool: &ToolSpec, arguments: &str, satisfied: bool) -> Vec<Message> {
    let mut user = tool_card(tool, arguments);
    if satisfied {
        user.push_str("\n\n");
        user.push_str(SATISFIED_DIRECTIVE);
    }
    vec![Message::system(WORLD_MODEL_SYSTEM), Message::user(user)]
}

pub fn predictor_messages(reasoning: &str, tool: &ToolSpec, arguments: &str) -> Vec<Message> {
    vec![Message::system(PREDICTOR_SYSTEM), Message::user(format!("Reasoning: {reasoning}\n{}", tool_card(tool, arguments)))]
}

/// The number after `logit:`, else the first number in the text.
pub fn parse_logit(text: &str) -> Option<f64> {
    let tail = text.find("logit:").map_or(text, |i| &text[i + "logit:".len()..]);
    tail.split(|c: char| c.is_whitespace() || c == ',' || c == '`')
        .filter_map(|tok| tok.trim_end_matches('.').parse::<f64>().ok())
        .find(|v| v.is_finite())
}
