//! The post-processing client: picks a tool for a plain-language request,
//! calls it through MCP, and writes analysis scripts over what the tools
//! produced.

mod repl;
mod script;
mod select;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use repl::{run_repl, ReplStats};
pub use script::{
    execute_script, extract_code, lint_script, sample_header, save_script, SampleBudget, ScriptLint, ScriptRun,
    SCRIPTS_DIR,
};
pub use select::{
    describe_tools, parse_selection, prefilter, select_tool, GrammarError, Selection, SelectionContext, ToolChoice,
    DECLINE,
};

use crate::case::{list_patches, CaseLayout, STATE_DIR};
use crate::events::{self, EventBus};
use crate::llm::{ChatResponse, Gateway, LlmError, Message};
use crate::mcp::{McpClient, McpError};
use crate::prompts::{render, PromptTemplates};
use crate::tools::ToolDescriptor;

pub const TRANSCRIPT_FILE: &str = "session.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("the server offers no tools")]
    NoTools,
    #[error("no tool selected: {0}")]
    NoToolSelected(String),
    #[error("invalid argument `{param}`: {message}")]
    SchemaViolation { param: String, message: String },
    #[error("reply does not follow the selection format: {0}")]
    Grammar(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Mcp(#[from] McpError),
    #[error("tool failed: {0}")]
    ToolFailed(String),
    #[error("no data files yet; run a sampling or post-processing request first, then ask for the script")]
    NoProducedData,
    #[error("reply contains no fenced code block")]
    NoCodeBlock,
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnKind {
    Tool,
    Script,
}

/// One turn of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub request: String,
    pub kind: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arguments: Option<Map<String, Value>>,
    pub ok: bool,
    pub summary: String,
    /// Case-relative files the turn produced.
    #[serde(default)]
    pub paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Append-only record of what a session did to its case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionContext {
    pub case: PathBuf,
    history: Vec<HistoryEntry>,
}

impl SessionContext {
    pub fn new(case: impl Into<PathBuf>) -> Self {
        Self {
            case: case.into(),
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Appends an entry, keeping only paths that exist in the case.
    pub fn push(&mut self, mut entry: HistoryEntry) -> &HistoryEntry {
        let case = self.case.clone();
        entry.paths.retain(|p| {
            let present = case.join(p).exists();
            if !present {
                log::warn!("dropping missing output {p}");
            }
            present
        });
        self.history.push(entry);
        self.history.last().expect("just pushed")
    }

    /// Every produced file, oldest first, without repeats.
    pub fn produced(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.history.iter().filter(|e| e.ok && e.kind == TurnKind::Tool) {
            for p in &e.paths {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
        }
        out
    }

    /// The last `n` turns as prompt text.
    pub fn recent(&self, n: usize) -> String {
        let start = self.history.len().saturating_sub(n);
        self.history[start..]
            .iter()
            .map(|e| {
                let what = match (&e.tool, &e.arguments) {
                    (Some(t), Some(a)) => format!("{t} {}", Value::Object(a.clone())),
                    _ => "analysis script".to_string(),
                };
                format!("- request: {}\n  action: {what}\n  result: {}", e.request, e.summary)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    /// Send only this many best-matching descriptors; `None` sends all.
    pub prefilter: Option<usize>,
    pub samples: SampleBudget,
    /// Interpreter command for analysis scripts, e.g. `["python3"]`.
    pub interpreter: Option<Vec<String>>,
    pub execute_scripts: bool,
    pub script_timeout_secs: Option<f64>,
    pub recent_turns: usize,
    /// Append each turn to `.copilot/session.jsonl`.
    pub persist_transcript: bool,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            prefilter: None,
            samples: SampleBudget::default(),
            interpreter: None,
            execute_scripts: false,
            script_timeout_secs: None,
            recent_turns: 5,
            persist_transcript: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PostAgents {
    pub selector: Gateway,
    pub analyst: Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptOutcome {
    pub script: String,
    pub code: String,
    pub lint: ScriptLint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<ScriptRun>,
}

/// Whether a request asks for an analysis script rather than a tool.
pub fn wants_script(request: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(script|python|plot)\b").unwrap())
        .is_match(request)
}

pub struct PostSession {
    client: McpClient,
    agents: PostAgents,
    templates: Arc<PromptTemplates>,
    settings: SessionSettings,
    tools: Vec<ToolDescriptor>,
    context: SessionContext,
    turns: Mutex<Vec<HistoryEntry>>,
    events: Option<EventBus>,
}

impl std::fmt::Debug for PostSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PostSession")
            .field("case", &self.context.case)
            .field("tools", &self.tools.len())
            .finish()
    }
}

impl PostSession {
    /// Initializes the MCP session and fetches the tool listing.
    pub fn connect(
        mut client: McpClient,
        agents: PostAgents,
        case: impl Into<PathBuf>,
        templates: Arc<PromptTemplates>,
        settings: SessionSettings,
    ) -> Result<Self, ClientError> {
        client.initialize()?;
        let tools = client.list_tools()?;
        if tools.is_empty() {
            return Err(ClientError::NoTools);
        }
        Ok(Self {
            client,
            agents,
            templates,
            settings,
            tools,
            context: SessionContext::new(case),
            turns: Mutex::new(Vec::new()),
            events: None,
        })
    }

    pub fn with_events(mut self, events: EventBus) -> Self {
        self.events = Some(events);
        self
    }

    pub fn tools(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    pub fn context(&self) -> &SessionContext {
        &self.context
    }

    /// Every turn so far, failed ones included.
    pub fn turns(&self) -> Vec<HistoryEntry> {
        self.turns.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn case(&self) -> &Path {
        &self.context.case
    }

    pub fn close(&mut self) {
        self.client.close();
    }

    fn note_llm(&self, agent: &str, responses: &[ChatResponse]) {
        if let Some(bus) = &self.events {
            for r in responses {
                bus.publish(
                    events::LLM_EXCHANGE,
                    json!({"agent": agent, "prompt_tokens": r.prompt_tokens, "completion_tokens": r.completion_tokens}),
                );
            }
        }
    }

    /// Logs a turn (and appends it to the transcript file) without
    /// touching the context.
    pub fn record(&self, entry: &HistoryEntry) {
        self.turns.lock().unwrap_or_else(|p| p.into_inner()).push(entry.clone());
        if !self.settings.persist_transcript {
            return;
        }
        let path = self.context.case.join(STATE_DIR).join(TRANSCRIPT_FILE);
        let line = serde_json::to_string(entry).expect("entry serializes");
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(path.parent().expect("has parent"))?;
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
            writeln!(f, "{line}")
        };
        if let Err(e) = write() {
            log::warn!("cannot append to {}: {e}", path.display());
        }
    }

    fn append(&mut self, entry: HistoryEntry) -> HistoryEntry {
        let stored = self.context.push(entry).clone();
        self.record(&stored);
        stored
    }

    fn failed_turn(&self, request: &str, kind: TurnKind, err: &ClientError) {
        self.record(&HistoryEntry {
            request: request.to_string(),
            kind,
            tool: None,
            arguments: None,
            ok: false,
            summary: err.to_string(),
            paths: vec![],
            warnings: vec![],
        });
    }

    pub fn select(&self, request: &str) -> Result<ToolChoice, ClientError> {
        let (patches, times) = match CaseLayout::open(&self.context.case) {
            Ok(c) => (
                list_patches(&c).unwrap_or_default(),
                c.time_dirs().into_iter().map(|(_, t)| t).collect(),
            ),
            Err(_) => (vec![], vec![]),
        };
        let ctx = SelectionContext {
            patches,
            times,
            recent: self.context.recent(self.settings.recent_turns),
            prefilter: self.settings.prefilter,
        };
        let result = select_tool(&self.agents.selector, &self.templates.selector, request, &self.tools, &ctx);
        let responses = match &result {
            Ok((_, r)) | Err((_, r)) => r,
        };
        self.note_llm(self.agents.selector.agent(), responses);
        match result {
            Ok((choice, _)) => Ok(choice),
            Err((e, _)) => {
                self.failed_turn(request, TurnKind::Tool, &e);
                Err(e)
            }
        }
    }

    /// Calls the chosen tool; the outcome, success or not, joins the context.
    pub fn invoke(&mut self, request: &str, choice: &ToolChoice) -> Result<HistoryEntry, ClientError> {
        let args = Value::Object(choice.arguments.clone());
        let (ok, summary, paths, err) = match self.client.call_tool(&choice.tool, &args) {
            Ok(r) if r.is_error => (false, r.text(), r.paths(), Some(ClientError::ToolFailed(r.text()))),
            Ok(r) => (true, r.text(), r.paths(), None),
            Err(e) => (false, e.to_string(), vec![], Some(ClientError::Mcp(e))),
        };
        let entry = self.append(HistoryEntry {
            request: request.to_string(),
            kind: TurnKind::Tool,
            tool: Some(choice.tool.clone()),
            arguments: Some(choice.arguments.clone()),
            ok,
            summary,
            paths,
            warnings: vec![],
        });
        match err {
            Some(e) => Err(e),
            None => Ok(entry),
        }
    }

    /// Asks the analyst agent for a script over the files produced so far.
    pub fn analyse(&mut self, request: &str) -> Result<(HistoryEntry, ScriptOutcome), ClientError> {
        let r = self.analyse_inner(request);
        if let Err(e) = &r {
            self.failed_turn(request, TurnKind::Script, e);
        }
        r
    }

    fn analyse_inner(&mut self, request: &str) -> Result<(HistoryEntry, ScriptOutcome), ClientError> {
        let known = self.context.produced();
        if known.is_empty() {
            return Err(ClientError::NoProducedData);
        }
        let mut samples = String::new();
        for p in &known {
            let head = sample_header(&self.context.case.join(p), &self.settings.samples)
                .map_err(|e| ClientError::Io(format!("{p}: {e}")))?;
            samples.push_str(&format!("{p}:\n{head}"));
            if !head.ends_with('\n') {
                samples.push('\n');
            }
        }
        let files = known.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n");
        let t = &self.templates.analyst;
        let user = render(&t.user, &[("request", request), ("files", &files), ("samples", &samples)]);
        let resp = self
            .agents
            .analyst
            .chat(vec![Message::system(t.system.clone()), Message::user(user)])?;
        self.note_llm(self.agents.analyst.agent(), std::slice::from_ref(&resp));
        let code = extract_code(&resp.content).ok_or(ClientError::NoCodeBlock)?;
        let lint = lint_script(&code, &known);
        let path = save_script(&self.context.case, &code).map_err(|e| ClientError::Io(e.to_string()))?;
        let rel = path
            .strip_prefix(&self.context.case)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| path.display().to_string());
        let mut warnings: Vec<String> = lint
            .undeclared
            .iter()
            .map(|p| format!("script reads {p}, which no tool produced in this session"))
            .collect();
        let mut run = None;
        let mut paths = vec![rel.clone()];
        if self.settings.execute_scripts {
            match &self.settings.interpreter {
                Some(interp) => {
                    let timeout = self.settings.script_timeout_secs.map(Duration::from_secs_f64);
                    let r = execute_script(interp, &path, &self.context.case, timeout)
                        .map_err(|e| ClientError::Io(format!("{}: {e}", interp.join(" "))))?;
                    if r.exit_code != Some(0) {
                        warnings.push(format!("script exited with {:?}", r.exit_code));
                    }
                    paths.extend(lint.outputs.iter().cloned());
                    run = Some(r);
                }
                None => warnings.push("script execution requested but no interpreter is configured".into()),
            }
        }
        if let Some(bus) = &self.events {
            bus.publish(events::FILE_PRODUCED, json!({"path": rel}));
        }
        let summary = format!("wrote {rel} reading {} file(s)", lint.inputs.len());
        let entry = self.append(HistoryEntry {
            request: request.to_string(),
            kind: TurnKind::Script,
            tool: None,
            arguments: None,
            ok: true,
            summary,
            paths,
            warnings,
        });
        Ok((
            entry,
            ScriptOutcome {
                script: rel,
                code,
                lint,
                run,
            },
        ))
    }

    /// One request, routed to a script or to selection plus invocation.
    pub fn turn(&mut self, request: &str) -> Result<HistoryEntry, ClientError> {
        if wants_script(request) {
            self.analyse(request).map(|(e, _)| e)
        } else {
            let choice = self.select(request)?;
            self.invoke(request, &choice)
        }
    }
}

#[cfg(test)]
mod tests;
