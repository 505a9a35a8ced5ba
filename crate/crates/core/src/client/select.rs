use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ClientError;
use crate::llm::{ChatResponse, Gateway, Message};
use crate::prompts::{render, Template};
use crate::tools::{ToolDescriptor, ToolError};

/// A validated tool selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolChoice {
    pub tool: String,
    pub arguments: Map<String, Value>,
    /// Free text after `END`.
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub raw: String,
}

/// A reply that follows the selection grammar.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Tool {
        name: String,
        arguments: Map<String, Value>,
        note: String,
    },
    Declined {
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrammarError {
    #[error("empty reply")]
    Empty,
    #[error("first line must be `TOOL: <name>`, got `{0}`")]
    NoToolLine(String),
    #[error("line {line}: expected `ARG <param> = <JSON value>` or `END`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("line {line}: value of `{param}` is not JSON: {message}")]
    BadValue { line: usize, param: String, message: String },
    #[error("argument `{0}` given twice")]
    Duplicate(String),
    #[error("missing `END` line")]
    NoEnd,
}

pub const DECLINE: &str = "NONE";

/// Parses `TOOL: <name>` / `ARG <param> = <JSON>` / `END`.
pub fn parse_selection(reply: &str) -> Result<Selection, GrammarError> {
    let mut lines = reply.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(GrammarError::Empty)?;
    let name = first
        .trim()
        .strip_prefix("TOOL:")
        .map(str::trim)
        .filter(|n| !n.is_empty() && !n.contains(char::is_whitespace))
        .ok_or_else(|| GrammarError::NoToolLine(first.trim().to_string()))?
        .to_string();
    if name == DECLINE {
        let note: Vec<&str> = lines.map(|(_, l)| l.trim()).filter(|l| *l != "END").collect();
        return Ok(Selection::Declined { note: note.join("\n") });
    }
    let mut arguments = Map::new();
    let mut ended = false;
    let mut note = Vec::new();
    for (i, line) in lines {
        let t = line.trim();
        if ended {
            note.push(t);
            continue;
        }
        if t == "END" {
            ended = true;
            continue;
        }
        let bad = || GrammarError::BadLine {
            line: i + 1,
            text: t.to_string(),
        };
        let rest = t.strip_prefix("ARG ").ok_or_else(bad)?;
        let (param, value) = rest.split_once('=').ok_or_else(bad)?;
        let param = param.trim();
        if param.is_empty() || param.contains(char::is_whitespace) {
            return Err(bad());
        }
        let value: Value = serde_json::from_str(value.trim()).map_err(|e| GrammarError::BadValue {
            line: i + 1,
            param: param.to_string(),
            message: e.to_string(),
        })?;
        if arguments.insert(param.to_string(), value).is_some() {
            return Err(GrammarError::Duplicate(param.to_string()));
        }
    }
    if !ended {
        return Err(GrammarError::NoEnd);
    }
    Ok(Selection::Tool {
        name,
        arguments,
        note: note.join("\n"),
    })
}

/// Prompt text describing every tool and its parameters.
pub fn describe_tools<'a>(tools: impl IntoIterator<Item = &'a ToolDescriptor>) -> String {
    let mut s = String::new();
    for t in tools {
        s.push_str(&format!("- {}: {}\n", t.name, t.description));
        for p in &t.params {
            let mut kind = serde_json::to_value(p.kind).unwrap().as_str().unwrap_or("").to_string();
            if let Some(items) = p.items {
                kind = format!("{kind} of {}", serde_json::to_value(items).unwrap().as_str().unwrap_or(""));
            }
            if let Some(n) = p.length {
                kind = format!("{kind}, {n} items");
            }
            let req = if p.required { "required" } else { "optional" };
            s.push_str(&format!("    {} ({kind}, {req}): {}\n", p.name, p.description));
        }
    }
    s
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| w.len() > 2)
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Narrows a large registry to the `keep` descriptors sharing the most
/// words with the request. Registries no larger than `keep` pass through.
pub fn prefilter<'a>(request: &str, tools: &'a [ToolDescriptor], keep: usize) -> Vec<&'a ToolDescriptor> {
    if tools.len() <= keep {
        return tools.iter().collect();
    }
    let want = words(request);
    let mut scored: Vec<(usize, usize, &ToolDescriptor)> = tools
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let have = words(&format!("{} {}", t.name.replace('_', " "), t.description));
            (want.intersection(&have).count(), i, t)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<(usize, &ToolDescriptor)> = scored.into_iter().take(keep).map(|(_, i, t)| (i, t)).collect();
    kept.sort_by_key(|(i, _)| *i);
    kept.into_iter().map(|(_, t)| t).collect()
}

/// What the selector prompt shows besides the request and the tools.
#[derive(Debug, Clone, Default)]
pub struct SelectionContext {
    pub patches: Vec<String>,
    pub times: Vec<String>,
    pub recent: String,
    /// Pre-filter size; `None` sends every descriptor.
    pub prefilter: Option<usize>,
}

/// Asks the selector agent for a tool. A grammar or schema violation gets
/// one reprompt quoting the problem; a decline or unknown tool does not.
/// Returns the choice and every LLM response used to reach it.
pub fn select_tool(
    gateway: &Gateway,
    template: &Template,
    request: &str,
    tools: &[ToolDescriptor],
    ctx: &SelectionContext,
) -> Result<(ToolChoice, Vec<ChatResponse>), (ClientError, Vec<ChatResponse>)> {
    if tools.is_empty() {
        return Err((ClientError::NoTools, vec![]));
    }
    let shown = match ctx.prefilter {
        Some(k) => prefilter(request, tools, k.max(1)),
        None => tools.iter().collect(),
    };
    let or_none = |v: &[String]| if v.is_empty() { "none".to_string() } else { v.join(", ") };
    let recent = if ctx.recent.is_empty() { "none" } else { ctx.recent.as_str() };
    let user = render(
        &template.user,
        &[
            ("tools", &describe_tools(shown.iter().copied())),
            ("patches", &or_none(&ctx.patches)),
            ("times", &or_none(&ctx.times)),
            ("context", recent),
            ("request", request),
        ],
    );
    let mut messages = vec![Message::system(template.system.clone()), Message::user(user)];
    let mut responses = Vec::new();
    for attempt in 0..2 {
        let resp = match gateway.chat(messages.clone()) {
            Ok(r) => r,
            Err(e) => return Err((ClientError::Llm(e), responses)),
        };
        responses.push(resp.clone());
        let problem = match parse_selection(&resp.content) {
            Ok(Selection::Declined { note }) => {
                let reason = if note.is_empty() { "the model found no matching tool".into() } else { note };
                return Err((ClientError::NoToolSelected(reason), responses));
            }
            Ok(Selection::Tool { name, arguments, note }) => {
                let Some(desc) = tools.iter().find(|t| t.name == name) else {
                    return Err((ClientError::NoToolSelected(format!("unknown tool `{name}`")), responses));
                };
                match desc.check_args(&Value::Object(arguments.clone())) {
                    Ok(()) => {
                        let choice = ToolChoice {
                            tool: name,
                            arguments,
                            note,
                            raw: resp.content.clone(),
                        };
                        return Ok((choice, responses));
                    }
                    Err(ToolError::SchemaViolation { param, message }) => {
                        ClientError::SchemaViolation { param, message }
                    }
                    Err(e) => ClientError::Grammar(e.to_string()),
                }
            }
            Err(e) => ClientError::Grammar(e.to_string()),
        };
        if attempt == 1 {
            return Err((problem, responses));
        }
        messages.push(Message::assistant(resp.content));
        messages.push(Message::user(format!(
            "Your reply was rejected: {problem}. Reply again in the required form."
        )));
    }
    unreachable!("loop returns on its second pass")
}
