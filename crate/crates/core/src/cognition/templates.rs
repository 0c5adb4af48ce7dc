//! Prompt template rendering and response parsing. The five template
//! bodies ship as data files and use `<inputN>` placeholders; an index may
//! occur several times and every occurrence is replaced.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::llm::PromptKind;

pub const REACT_TEMPLATE: &str = include_str!("../../data/templates/react.txt");
pub const PLAN_TEMPLATE: &str = include_str!("../../data/templates/plan.txt");
pub const REFLECT_QUESTIONS_TEMPLATE: &str =
    include_str!("../../data/templates/reflect_questions.txt");
pub const REFLECT_INSIGHTS_TEMPLATE: &str =
    include_str!("../../data/templates/reflect_insights.txt");
pub const ACT_TEMPLATE: &str = include_str!("../../data/templates/act.txt");

pub fn template_body(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::React => REACT_TEMPLATE,
        PromptKind::Plan => PLAN_TEMPLATE,
        PromptKind::ReflectQuestions => REFLECT_QUESTIONS_TEMPLATE,
        PromptKind::ReflectInsights => REFLECT_INSIGHTS_TEMPLATE,
        PromptKind::Act => ACT_TEMPLATE,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("placeholder <input{0}> has no binding")]
    UnboundIndex(u32),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<input(\d+)>").unwrap())
}

/// Replaces every `<inputN>` occurrence with its binding. Every index that
/// appears in the body must be bound; unused bindings are fine.
pub fn render_template(body: &str, bindings: &[(u32, &str)]) -> Result<String, RenderError> {
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(body) {
        let m = caps.get(0).unwrap();
        let index: u32 = caps[1].parse().map_err(|_| RenderError::UnboundIndex(u32::MAX))?;
        let value = bindings
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, v)| *v)
            .ok_or(RenderError::UnboundIndex(index))?;
        out.push_str(&body[last..m.start()]);
        out.push_str(value);
        last = m.end();
    }
    out.push_str(&body[last..]);
    Ok(out)
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseFailure {
    #[error("no ```json fence in response")]
    NoFence,
    #[error("fenced block is not a JSON object: {0}")]
    NotAnObject(String),
}

/// Removes the `\\ comment` tails the prompt schemas use, while leaving
/// backslashes inside string literals alone.
fn strip_comment_tail(line: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in line.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match ch {
            '\\' if in_string => escaped = true,
            '\\' => return &line[..i],
            '"' => in_string = !in_string,
            _ => {}
        }
    }
    line
}

/// Extracts the first block opened by ```json and closed by ``` or '''
/// (the prompts ask for either), strips comment tails, and parses the
/// object.
pub fn parse_fenced_json(text: &str) -> Result<Map<String, Value>, ParseFailure> {
    let open = text.find("```json").ok_or(ParseFailure::NoFence)?;
    let after = &text[open + "```json".len()..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = [body.find("```"), body.find("'''")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(body.len());
    let cleaned: String = body[..close]
        .lines()
        .map(strip_comment_tail)
        .collect::<Vec<_>>()
        .join("\n");
    match serde_json::from_str::<Value>(&cleaned) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(ParseFailure::NotAnObject(other.to_string())),
        Err(e) => Err(ParseFailure::NotAnObject(e.to_string())),
    }
}

/// Reads a boolean that may arrive as a JSON bool or as text.
pub fn value_as_bool(value: &Value) -> Option<bool> {
    match value {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}
