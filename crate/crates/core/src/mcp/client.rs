use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::message::*;
use super::server::{McpSession, SUPPORTED_VERSIONS};
use crate::tools::ToolDescriptor;

#[derive(Debug, Error)]
pub enum McpError {
    #[error("transport closed")]
    TransportClosed,
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("server speaks none of our protocol versions (it supports {supported:?})")]
    VersionMismatch { supported: Vec<String> },
    #[error("session not initialized")]
    NotInitialized,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid argument `{param}`: {message}")]
    SchemaViolation { param: String, message: String },
    #[error("server error {}: {}", .0.code, .0.message)]
    Rpc(ErrorObject),
    #[error("reply id {got:?} does not match request id {expected}")]
    IdMismatch { expected: RequestId, got: Option<RequestId> },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
}

impl McpError {
    fn from_error(e: ErrorObject) -> Self {
        let data = e.data.clone().unwrap_or(Value::Null);
        match e.kind() {
            Some("version_mismatch") => McpError::VersionMismatch {
                supported: data["supported"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                    .unwrap_or_default(),
            },
            Some("not_initialized") => McpError::NotInitialized,
            Some("unknown_tool") => McpError::UnknownTool(data["tool"].as_str().unwrap_or_default().to_string()),
            Some("schema_violation") => McpError::SchemaViolation {
                param: data["param"].as_str().unwrap_or_default().to_string(),
                message: data["detail"].as_str().unwrap_or(&e.message).to_string(),
            },
            _ => McpError::Rpc(e),
        }
    }
}

/// Carries one envelope to the server and returns its reply. A
/// notification yields `None`.
pub trait Transport: Send {
    fn exchange(&mut self, msg: &RpcMessage) -> Result<Option<RpcMessage>, McpError>;
    fn close(&mut self) {}
}

/// Talks to a session in the same process.
#[derive(Debug)]
pub struct InProcess {
    session: Option<McpSession>,
}

impl InProcess {
    pub fn new(session: McpSession) -> Self {
        Self { session: Some(session) }
    }
}

impl Transport for InProcess {
    fn exchange(&mut self, msg: &RpcMessage) -> Result<Option<RpcMessage>, McpError> {
        let session = self.session.as_mut().ok_or(McpError::TransportClosed)?;
        // Round-trip through the codec so both sides see what a wire would carry.
        let line = msg.encode();
        Ok(session.handle_line(&line).map(|r| RpcMessage::decode(&r)).transpose()?)
    }

    fn close(&mut self) {
        self.session = None;
    }
}

/// Newline-delimited JSON over a pair of byte streams, typically a child
/// process's stdin and stdout.
pub struct StreamTransport {
    reader: Option<Box<dyn BufRead + Send>>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl std::fmt::Debug for StreamTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamTransport").field("open", &self.writer.is_some()).finish()
    }
}

impl StreamTransport {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Some(Box::new(reader)),
            writer: Some(Box::new(writer)),
            child: None,
        }
    }

    /// Starts `argv` and speaks to it over its stdin and stdout.
    pub fn spawn(argv: &[String]) -> Result<Self, McpError> {
        let (program, rest) = argv
            .split_first()
            .ok_or_else(|| McpError::Transport("empty server command".into()))?;
        let mut child = Command::new(program)
            .args(rest)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| McpError::Transport(format!("cannot start {program}: {e}")))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped");
        let stdout: ChildStdout = child.stdout.take().expect("piped");
        let mut t = Self::new(BufReader::new(stdout), stdin);
        t.child = Some(child);
        Ok(t)
    }

    fn read_reply(&mut self, want: &RequestId) -> Result<RpcMessage, McpError> {
        let reader = self.reader.as_mut().ok_or(McpError::TransportClosed)?;
        loop {
            let mut line = String::new();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| McpError::Transport(e.to_string()))?;
            if n == 0 {
                return Err(McpError::TransportClosed);
            }
            if line.trim().is_empty() {
                continue;
            }
            let msg = RpcMessage::decode(line.trim_end())?;
            match &msg {
                // Server-initiated notifications are not part of this client.
                RpcMessage::Notification { .. } | RpcMessage::Request { .. } => continue,
                RpcMessage::Response { id, .. } if id == want => return Ok(msg),
                RpcMessage::Error { id: Some(id), .. } if id == want => return Ok(msg),
                RpcMessage::Error { id: None, .. } => return Ok(msg),
                other => {
                    return Err(McpError::IdMismatch {
                        expected: want.clone(),
                        got: other.id().cloned(),
                    })
                }
            }
        }
    }
}

impl Transport for StreamTransport {
    fn exchange(&mut self, msg: &RpcMessage) -> Result<Option<RpcMessage>, McpError> {
        let writer = self.writer.as_mut().ok_or(McpError::TransportClosed)?;
        let mut line = msg.encode();
        line.push('\n');
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::BrokenPipe => McpError::TransportClosed,
                _ => McpError::Transport(e.to_string()),
            })?;
        match msg {
            RpcMessage::Request { id, .. } => self.read_reply(&id.clone()).map(Some),
            _ => Ok(None),
        }
    }

    fn close(&mut self) {
        self.writer = None;
        self.reader = None;
        if let Some(mut c) = self.child.take() {
            let _ = c.wait();
        }
    }
}

impl Drop for StreamTransport {
    fn drop(&mut self) {
        self.close();
    }
}

/// One envelope per HTTP POST.
#[derive(Debug)]
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
    open: bool,
}

impl HttpTransport {
    pub fn new(url: &str) -> Self {
        Self {
            url: url.to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(600)).build(),
            open: true,
        }
    }
}

impl Transport for HttpTransport {
    fn exchange(&mut self, msg: &RpcMessage) -> Result<Option<RpcMessage>, McpError> {
        if !self.open {
            return Err(McpError::TransportClosed);
        }
        let resp = self
            .agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&msg.encode());
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => {
                return Err(match t.kind() {
                    ureq::ErrorKind::ConnectionFailed => McpError::TransportClosed,
                    _ => McpError::Transport(t.to_string()),
                })
            }
        };
        let body = resp.into_string().map_err(|e| McpError::Transport(e.to_string()))?;
        if body.trim().is_empty() {
            return Ok(None);
        }
        Ok(Some(RpcMessage::decode(body.trim())?))
    }

    fn close(&mut self) {
        self.open = false;
    }
}

/// Sequential MCP client: initialize, list tools, call tools.
pub struct McpClient {
    transport: Box<dyn Transport>,
    next_id: i64,
    version: Option<String>,
    server_info: Value,
}

impl std::fmt::Debug for McpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("McpClient").field("version", &self.version).finish()
    }
}

impl McpClient {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self {
            transport: Box::new(transport),
            next_id: 1,
            version: None,
            server_info: Value::Null,
        }
    }

    pub fn protocol_version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn server_info(&self) -> &Value {
        &self.server_info
    }

    fn request(&mut self, method: &str, params: Value) -> Result<Value, McpError> {
        let id = RequestId::Number(self.next_id);
        self.next_id += 1;
        let reply = self
            .transport
            .exchange(&RpcMessage::request(id.clone(), method, Some(params)))?
            .ok_or_else(|| McpError::Unexpected(format!("no reply to {method}")))?;
        if reply.id() != Some(&id) && !matches!(reply, RpcMessage::Error { id: None, .. }) {
            return Err(McpError::IdMismatch {
                expected: id,
                got: reply.id().cloned(),
            });
        }
        match reply {
            RpcMessage::Response { result, .. } => Ok(result),
            RpcMessage::Error { error, .. } => Err(McpError::from_error(error)),
            other => Err(McpError::Unexpected(other.encode())),
        }
    }

    /// Handshake with our newest protocol revision, falling back to an
    /// older one the server says it supports.
    pub fn initialize(&mut self) -> Result<Value, McpError> {
        match self.initialize_with(SUPPORTED_VERSIONS[0]) {
            Err(McpError::VersionMismatch { supported }) => {
                let fallback = SUPPORTED_VERSIONS
                    .iter()
                    .find(|v| supported.iter().any(|s| s == *v))
                    .ok_or(McpError::VersionMismatch { supported: supported.clone() })?;
                self.initialize_with(fallback)
            }
            other => other,
        }
    }

    pub fn initialize_with(&mut self, version: &str) -> Result<Value, McpError> {
        let result = self.request(
            "initialize",
            json!({
                "protocolVersion": version,
                "capabilities": {},
                "clientInfo": {"name": "foampilot-client", "version": env!("CARGO_PKG_VERSION")},
            }),
        )?;
        self.version = result["protocolVersion"].as_str().map(String::from);
        self.server_info = result["serverInfo"].clone();
        self.transport
            .exchange(&RpcMessage::notification("notifications/initialized", None))?;
        Ok(self.server_info.clone())
    }

    pub fn list_tools(&mut self) -> Result<Vec<ToolDescriptor>, McpError> {
        let result = self.request("tools/list", json!({}))?;
        result["tools"]
            .as_array()
            .ok_or_else(|| McpError::Unexpected("tools/list without tools".into()))?
            .iter()
            .map(|t| ToolDescriptor::from_mcp(t).map_err(McpError::Unexpected))
            .collect()
    }

    pub fn call_tool(&mut self, name: &str, arguments: &Value) -> Result<ToolCallResult, McpError> {
        let result = self.request("tools/call", json!({"name": name, "arguments": arguments}))?;
        serde_json::from_value(result).map_err(|e| McpError::Unexpected(e.to_string()))
    }

    pub fn ping(&mut self) -> Result<(), McpError> {
        self.request("ping", json!({})).map(|_| ())
    }

    pub fn close(&mut self) {
        self.transport.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::copy_case;
    use crate::mcp::server::{serve_stream, ToolHost};
    use crate::tools::{Registry, SimulatedPost};
    use std::os::unix::net::UnixStream;
    use std::path::Path;
    use std::sync::Arc;

    fn host() -> (tempfile::TempDir, Arc<ToolHost>) {
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases/naca0012");
        let tmp = tempfile::tempdir().unwrap();
        copy_case(&src, tmp.path()).unwrap();
        let host = ToolHost::new(Registry::builtin(), tmp.path(), Arc::new(SimulatedPost::new()));
        (tmp, Arc::new(host))
    }

    #[test]
    fn in_process_session() {
        let (_t, host) = host();
        let mut c = McpClient::new(InProcess::new(McpSession::new(host)));
        assert!(matches!(c.list_tools(), Err(McpError::NotInitialized)));
        c.initialize().unwrap();
        assert_eq!(c.protocol_version(), Some("2025-03-26"));
        let tools = c.list_tools().unwrap();
        assert_eq!(tools.len(), Registry::builtin().len());
        let r = c
            .call_tool("postProcess_surfaces_sampledPatch", &json!({"field": "p", "patches": ["walls"]}))
            .unwrap();
        assert_eq!(r.paths(), ["postProcessing/sampledPatch/0/p_walls.raw", "postProcessing/sampledPatch/500/p_walls.raw"]);
        assert!(matches!(
            c.call_tool("postProcess_surfaces_sampledPatch", &json!({"field": "p"})),
            Err(McpError::SchemaViolation { param, .. }) if param == "patches"
        ));
        c.close();
        assert!(matches!(c.ping(), Err(McpError::TransportClosed)));
    }

    #[test]
    fn stream_transport_over_socket() {
        let (_t, host) = host();
        let (a, b) = UnixStream::pair().unwrap();
        let server = std::thread::spawn(move || {
            let mut s = McpSession::new(host);
            serve_stream(&mut s, BufReader::new(b.try_clone().unwrap()), b).unwrap();
        });
        let mut c = McpClient::new(StreamTransport::new(BufReader::new(a.try_clone().unwrap()), a));
        c.initialize().unwrap();
        assert!(c.list_tools().unwrap().iter().any(|t| t.name == "postProcess_vorticity"));
        c.close();
        server.join().unwrap();
    }

    #[test]
    fn older_revision_fallback() {
        struct OldServer(InProcess);
        impl Transport for OldServer {
            fn exchange(&mut self, msg: &RpcMessage) -> Result<Option<RpcMessage>, McpError> {
                if let RpcMessage::Request { id, method, params, .. } = msg {
                    if method == "initialize" && params.as_ref().unwrap()["protocolVersion"] != "2024-11-05" {
                        let e = ErrorObject::new(INVALID_PARAMS, "unsupported")
                            .with_data(json!({"kind": "version_mismatch", "supported": ["2024-11-05"]}));
                        return Ok(Some(RpcMessage::error(Some(id.clone()), e)));
                    }
                }
                self.0.exchange(msg)
            }
        }
        let (_t, host) = host();
        let mut c = McpClient::new(OldServer(InProcess::new(McpSession::new(host))));
        c.initialize().unwrap();
        assert_eq!(c.protocol_version(), Some("2024-11-05"));
    }
}
