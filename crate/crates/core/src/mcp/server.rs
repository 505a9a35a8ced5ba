use std::io::{BufRead, Write};
use std::sync::Arc;

use serde_json::{json, Value};

use super::message::*;
use crate::case::CaseLayout;
use crate::events::{self, EventBus};
use crate::tools::{execute_plan, PostRunner, Registry, ToolError};

/// Protocol revisions this server speaks, newest first.
pub const SUPPORTED_VERSIONS: [&str; 2] = ["2025-03-26", "2024-11-05"];
pub const SERVER_NAME: &str = "foampilot";

/// Everything a tool call needs: the registry, the case it operates on
/// and the backend that runs post-processing commands.
pub struct ToolHost {
    pub registry: Registry,
    pub case_root: std::path::PathBuf,
    pub runner: Arc<dyn PostRunner>,
    pub events: EventBus,
}

impl std::fmt::Debug for ToolHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolHost")
            .field("tools", &self.registry.len())
            .field("case_root", &self.case_root)
            .finish()
    }
}

impl ToolHost {
    pub fn new(registry: Registry, case_root: impl Into<std::path::PathBuf>, runner: Arc<dyn PostRunner>) -> Self {
        Self {
            registry,
            case_root: case_root.into(),
            runner,
            events: EventBus::new(),
        }
    }

    pub fn with_events(mut self, events: EventBus) -> Self {
        self.events = events;
        self
    }

    pub fn tools_list(&self) -> Value {
        json!({"tools": self.registry.descriptors().map(|d| d.to_mcp()).collect::<Vec<_>>()})
    }

    /// Plans and runs one tool. Protocol-level failures (unknown tool,
    /// bad arguments) come back as `Err`; anything that goes wrong while
    /// planning against the case or running it is an `isError` result.
    pub fn call(&self, name: &str, args: &Value) -> Result<ToolCallResult, ErrorObject> {
        let result = self.call_inner(name, args)?;
        let status = if result.is_error { "error" } else { "ok" };
        self.events.publish(
            events::TOOL_INVOCATION,
            json!({"tool": name, "arguments": args, "status": status, "summary": result.text()}),
        );
        for p in result.paths() {
            self.events.publish(events::FILE_PRODUCED, json!({"path": p, "tool": name}));
        }
        Ok(result)
    }

    fn call_inner(&self, name: &str, args: &Value) -> Result<ToolCallResult, ErrorObject> {
        if self.registry.get(name).is_none() {
            return Err(tool_error(&ToolError::UnknownTool(name.to_string())));
        }
        let case = match CaseLayout::open(&self.case_root) {
            Ok(c) => c,
            Err(e) => return Ok(ToolCallResult::failure(e.to_string())),
        };
        match self.registry.plan(name, args, &case) {
            Ok(plan) => Ok(execute_plan(&plan, &case, self.runner.as_ref())),
            Err(e @ (ToolError::UnknownTool(_) | ToolError::SchemaViolation { .. })) => Err(tool_error(&e)),
            Err(e) => Ok(ToolCallResult::failure(e.to_string())),
        }
    }
}

fn tool_error(e: &ToolError) -> ErrorObject {
    match e {
        ToolError::UnknownTool(name) => {
            ErrorObject::new(INVALID_PARAMS, e.to_string()).with_data(json!({"kind": "unknown_tool", "tool": name}))
        }
        ToolError::SchemaViolation { param, message } => ErrorObject::new(INVALID_PARAMS, e.to_string())
            .with_data(json!({"kind": "schema_violation", "param": param, "detail": message})),
        other => ErrorObject::new(INTERNAL_ERROR, other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    AwaitingInitialize,
    Ready { version: String },
}

/// Per-connection protocol state. One request is handled at a time.
#[derive(Debug)]
pub struct McpSession {
    host: Arc<ToolHost>,
    state: State,
}

impl McpSession {
    pub fn new(host: Arc<ToolHost>) -> Self {
        Self {
            host,
            state: State::AwaitingInitialize,
        }
    }

    pub fn host(&self) -> &Arc<ToolHost> {
        &self.host
    }

    /// The negotiated protocol revision, once initialized.
    pub fn protocol_version(&self) -> Option<&str> {
        match &self.state {
            State::Ready { version } => Some(version),
            State::AwaitingInitialize => None,
        }
    }

    /// Handles one incoming message and returns the reply, if any.
    pub fn handle(&mut self, msg: RpcMessage) -> Option<RpcMessage> {
        match msg {
            RpcMessage::Request { id, method, params, .. } => Some(match self.request(&method, params) {
                Ok(result) => RpcMessage::response(id, result),
                Err(error) => RpcMessage::error(Some(id), error),
            }),
            // `notifications/initialized` needs no action: the session is
            // usable as soon as `initialize` has been answered.
            RpcMessage::Notification { .. } | RpcMessage::Response { .. } | RpcMessage::Error { .. } => None,
        }
    }

    /// Decodes a line and handles it. Undecodable input gets an error
    /// reply with a null id.
    pub fn handle_line(&mut self, line: &str) -> Option<String> {
        match RpcMessage::decode(line) {
            Ok(msg) => self.handle(msg).map(|m| m.encode()),
            Err(e) => Some(RpcMessage::error(None, ErrorObject::new(e.code(), e.to_string())).encode()),
        }
    }

    fn request(&mut self, method: &str, params: Option<Value>) -> Result<Value, ErrorObject> {
        let params = params.unwrap_or(Value::Null);
        match method {
            "initialize" => self.initialize(&params),
            "ping" => Ok(json!({})),
            "tools/list" | "tools/call" if self.protocol_version().is_none() => {
                Err(ErrorObject::new(NOT_INITIALIZED, "session not initialized")
                    .with_data(json!({"kind": "not_initialized"})))
            }
            "tools/list" => Ok(self.host.tools_list()),
            "tools/call" => {
                let name = params["name"]
                    .as_str()
                    .ok_or_else(|| ErrorObject::new(INVALID_PARAMS, "tools/call needs a tool name"))?;
                let args = params.get("arguments").cloned().unwrap_or(json!({}));
                let result = self.host.call(name, &args)?;
                Ok(serde_json::to_value(result).expect("tool results serialize"))
            }
            other => Err(ErrorObject::new(METHOD_NOT_FOUND, format!("method `{other}` not found"))),
        }
    }

    fn initialize(&mut self, params: &Value) -> Result<Value, ErrorObject> {
        let requested = params["protocolVersion"]
            .as_str()
            .ok_or_else(|| ErrorObject::new(INVALID_PARAMS, "initialize needs protocolVersion"))?;
        if !SUPPORTED_VERSIONS.contains(&requested) {
            return Err(
                ErrorObject::new(INVALID_PARAMS, format!("unsupported protocol version {requested}")).with_data(
                    json!({"kind": "version_mismatch", "requested": requested, "supported": SUPPORTED_VERSIONS}),
                ),
            );
        }
        self.state = State::Ready {
            version: requested.to_string(),
        };
        Ok(json!({
            "protocolVersion": requested,
            "capabilities": {"tools": {"listChanged": false}},
            "serverInfo": {"name": SERVER_NAME, "version": env!("CARGO_PKG_VERSION")},
        }))
    }
}

/// Newline-delimited JSON over a byte stream until end of input. Blank
/// lines are skipped.
pub fn serve_stream(session: &mut McpSession, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = session.handle_line(&line) {
            output.write_all(reply.as_bytes())?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
    }
    Ok(())
}
