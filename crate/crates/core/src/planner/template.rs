//! Rule-based planner for a fixed set of question shapes.
//!
//! Each template is a question pattern with `{name}` captures and a plan
//! document whose strings may contain the same placeholders. Matching is
//! case-insensitive on the literal parts; surrounding whitespace and a
//! trailing `?` or `.` are ignored.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    estimate_tokens, section, Completion, CompletionRequest, LanguageModel, ProviderError, TokenUsage, QUESTION_HEADER,
};

/// Reply when no template matches; contains no plan document.
pub const NO_MATCH_REPLY: &str = "No template matches this question.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub pattern: String,
    pub plan: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {index}: {message}")]
    Pattern { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(Vec<char>),
    Capture(String),
}

fn normalize(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let joined = words.join(" ");
    joined.trim_end_matches(['?', '.']).trim_end().to_string()
}

fn compile(pattern: &str) -> Result<Vec<Segment>, String> {
    let mut segments = Vec::new();
    let mut literal = Vec::new();
    let mut chars = normalize(pattern).chars().collect::<Vec<_>>().into_iter().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_alphanumeric() || c == '_' => name.push(c),
                        _ => return Err(format!("malformed capture in `{pattern}`")),
                    }
                }
                if name.is_empty() {
                    return Err(format!("empty capture name in `{pattern}`"));
                }
                if matches!(segments.last(), Some(Segment::Capture(_))) && literal.is_empty() {
                    return Err(format!("adjacent captures in `{pattern}`"));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(core::mem::take(&mut literal)));
                }
                segments.push(Segment::Capture(name));
            }
            '}' => return Err(format!("unbalanced `}}` in `{pattern}`")),
            c => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

fn same_char(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Backtracking match; captures are non-empty and the shortest that lets
/// the rest of the pattern match.
fn match_from(segments: &[Segment], text: &[char], pos: usize, caps: &mut Vec<(String, String)>) -> bool {
    let Some((first, rest)) = segments.split_first() else {
        return pos == text.len();
    };
    match first {
        Segment::Literal(lit) => {
            let end = pos + lit.len();
            end <= text.len()
                && lit.iter().zip(&text[pos..end]).all(|(a, b)| same_char(*a, *b))
                && match_from(rest, text, end, caps)
        }
        Segment::Capture(name) => {
            for end in pos + 1..=text.len() {
                caps.push((name.clone(), text[pos..end].iter().collect()));
                if match_from(rest, text, end, caps) {
                    return true;
                }
                caps.pop();
            }
            false
        }
    }
}

fn fill(value: &Value, caps: &[(String, String)]) -> Value {
    match value {
        Value::String(s) => {
            let mut out = s.clone();
            for (name, text) in caps {
                out = out.replace(&format!("{{{name}}}"), text.trim());
            }
            Value::String(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| fill(v, caps)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), fill(v, caps))).collect()),
        other => other.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct TemplatePlanner {
    templates: Vec<(Vec<Segment>, Value)>,
}

impl TemplatePlanner {
    pub fn new(templates: Vec<PlanTemplate>) -> Result<Self, TemplateError> {
        let compiled = templates
            .into_iter()
            .enumerate()
            .map(|(index, t)| {
                compile(&t.pattern)
                    .map(|segs| (segs, t.plan))
                    .map_err(|message| TemplateError::Pattern { index, message })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { templates: compiled })
    }

    /// Plan document text for `question` from the first matching template.
    pub fn plan_for(&self, question: &str) -> Option<String> {
        let text: Vec<char> = normalize(question).chars().collect();
        for (segments, plan) in &self.templates {
            let mut caps = Vec::new();
            if match_from(segments, &text, 0, &mut caps) {
                let mut filled = fill(plan, &caps);
                if let Value::Object(map) = &mut filled {
                    map.entry("query").or_insert_with(|| Value::String(question.trim().into()));
                }
                return Some(serde_json::to_string_pretty(&filled).expect("values serialize"));
            }
        }
        None
    }
}

impl LanguageModel for TemplatePlanner {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let prompt = request.prompt();
        let question = section(&prompt, QUESTION_HEADER)
            .ok_or_else(|| ProviderError::Response("prompt has no question section".into()))?;
        let text = self.plan_for(question).unwrap_or_else(|| NO_MATCH_REPLY.into());
        Ok(Completion {
            usage: TokenUsage::new(estimate_tokens(&prompt), estimate_tokens(&text)),
            text,
        })
    }
}

impl TemplatePlanner {
    pub fn templates(&self) -> usize {
        self.templates.len()
    }
}
