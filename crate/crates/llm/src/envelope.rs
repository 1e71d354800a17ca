//! The fenced action block exchanged with the model:
//!
//! ````text
//! free-form reasoning
//! ```action
//! {"tool_id": "t03", "arguments": {"query": "..."}}
//! ```
//! ````
//!
//! or `{"answer": "..."}` inside the fence to finish.

use serde_json::{json, Value};
use tollgate::domain::Action;

pub const FENCE_OPEN: &str = "```action";
pub const FENCE_CLOSE: &str = "```";

pub const ENVELOPE_INSTRUCTIONS: &str = "Reply with your reasoning, then exactly one fenced block:\n\
```action\n{\"tool_id\": \"<id from the market>\", \"arguments\": {...}}\n```\n\
or, to finish:\n```action\n{\"answer\": \"<final answer>\"}\n```";

pub const REPAIR_INSTRUCTION: &str = "Your reply did not contain a valid ```action block. Reply again with your \
reasoning followed by exactly one ```action block holding {\"tool_id\", \"arguments\"} or {\"answer\"}.";

/// Splits a reply into reasoning and action.
pub fn parse_reply(text: &str) -> Result<(String, Action), String> {
    let start = text.find(FENCE_OPEN).ok_or("no ```action block")?;
    let body = &text[start + FENCE_OPEN.len()..];
    let end = body.find(FENCE_CLOSE).ok_or("unterminated ```action block")?;
    let value: Value = serde_json::from_str(body[..end].trim()).map_err(|e| format!("action is not JSON: {e}"))?;
    let reasoning = text[..start].trim().to_string();
    if let Some(answer) = value.get("answer") {
        let answer = answer.as_str().map(String::from).unwrap_or_else(|| answer.to_string());
        return Ok((reasoning, Action::answer(answer)));
    }
    let tool_id = value.get("tool_id").and_then(Value::as_str).ok_or("action has neither tool_id nor answer")?;
    if tool_id.is_empty() {
        return Err("empty tool_id".into());
    }
    let arguments = match value.get("arguments") {
        None | Some(Value::Null) => "{}".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    Ok((reasoning, Action::call(tool_id, arguments)))
}

pub fn render_reply(reasoning: &str, action: &Action) -> String {
    let body = match action {
        Action::ToolCall { tool_id, arguments } => {
            let args = serde_json::from_str::<Value>(arguments).unwrap_or_else(|_| Value::String(arguments.clone()));
            json!({ "tool_id": tool_id, "arguments": args })
        }
        Action::Answer { answer_text } => json!({ "answer": answer_text }),
    };
    format!("{reasoning}\n{FENCE_OPEN}\n{body}\n{FENCE_CLOSE}")
}

/// Inverse of the engine's `CALL id args` / `ANSWER text` block rendering.
pub fn parse_action_block(payload: &str) -> Option<Action> {
    if let Some(rest) = payload.strip_prefix("CALL ") {
        let (id, args) = rest.split_once(' ').unwrap_or((rest, ""));
        return Some(Action::call(id, args));
    }
    payload.strip_prefix("ANSWER ").map(Action::answer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_calls_and_answers() {
        let (r, a) = parse_reply("look it up\n```action\n{\"tool_id\":\"t1\",\"arguments\":{\"q\":1}}\n```").unwrap();
        assert_eq!(r, "look it up");
        assert_eq!(a, Action::call("t1", "{\"q\":1}"));
        let (_, a) = parse_reply("```action {\"answer\": \"42\"} ```").unwrap();
        assert_eq!(a, Action::answer("42"));
        assert!(parse_reply("no block").is_err());
        assert!(parse_reply("```action\n{\"tool\": 1}\n```").is_err());
        assert!(parse_reply("```action\nnot json\n```").is_err());
    }

    #[test]
    fn render_round_trips() {
        for action in [Action::call("t2", "{\"a\":[1,2]}"), Action::answer("done"), Action::call("t3", "plain")] {
            let (r, back) = parse_reply(&render_reply("why", &action)).unwrap();
            assert_eq!(r, "why");
            assert_eq!(back, action);
        }
        assert_eq!(parse_action_block("CALL t1 {}"), Some(Action::call("t1", "{}")));
        assert_eq!(parse_action_block("ANSWER x y"), Some(Action::answer("x y")));
    }
}
