use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const JSONRPC_VERSION: &str = "2.0";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;
/// Request sent before the `initialize` handshake finished.
pub const NOT_INITIALIZED: i64 = -32002;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RequestId {
    Number(i64),
    Text(String),
}

impl RequestId {
    fn to_value(&self) -> Value {
        match self {
            RequestId::Number(n) => Value::from(*n),
            RequestId::Text(s) => Value::from(s.as_str()),
        }
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        match v {
            Value::Number(n) => n
                .as_i64()
                .map(RequestId::Number)
                .ok_or_else(|| CodecError::Invalid(format!("id {n} is not an integer"))),
            Value::String(s) => Ok(RequestId::Text(s.clone())),
            other => Err(CodecError::Invalid(format!("id {other} is neither integer nor string"))),
        }
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestId::Number(n) => write!(f, "{n}"),
            RequestId::Text(s) => write!(f, "{s:?}"),
        }
    }
}

impl From<i64> for RequestId {
    fn from(n: i64) -> Self {
        RequestId::Number(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorObject {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl ErrorObject {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }

    /// `data.kind`, used to tell protocol failures apart.
    pub fn kind(&self) -> Option<&str> {
        self.data.as_ref()?.get("kind")?.as_str()
    }
}

/// A JSON-RPC 2.0 envelope. Members the codec does not model are kept in
/// `extra` and written back unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum RpcMessage {
    Request {
        id: RequestId,
        method: String,
        params: Option<Value>,
        extra: Map<String, Value>,
    },
    Notification {
        method: String,
        params: Option<Value>,
        extra: Map<String, Value>,
    },
    Response {
        id: RequestId,
        result: Value,
        extra: Map<String, Value>,
    },
    Error {
        id: Option<RequestId>,
        error: ErrorObject,
        extra: Map<String, Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid envelope: {0}")]
    Invalid(String),
}

impl CodecError {
    pub fn code(&self) -> i64 {
        match self {
            CodecError::Parse(_) => PARSE_ERROR,
            CodecError::Invalid(_) => INVALID_REQUEST,
        }
    }
}

impl RpcMessage {
    pub fn request(id: impl Into<RequestId>, method: &str, params: Option<Value>) -> Self {
        RpcMessage::Request {
            id: id.into(),
            method: method.into(),
            params,
            extra: Map::new(),
        }
    }

    pub fn notification(method: &str, params: Option<Value>) -> Self {
        RpcMessage::Notification {
            method: method.into(),
            params,
            extra: Map::new(),
        }
    }

    pub fn response(id: RequestId, result: Value) -> Self {
        RpcMessage::Response {
            id,
            result,
            extra: Map::new(),
        }
    }

    pub fn error(id: Option<RequestId>, error: ErrorObject) -> Self {
        RpcMessage::Error {
            id,
            error,
            extra: Map::new(),
        }
    }

    pub fn id(&self) -> Option<&RequestId> {
        match self {
            RpcMessage::Request { id, .. } | RpcMessage::Response { id, .. } => Some(id),
            RpcMessage::Error { id, .. } => id.as_ref(),
            RpcMessage::Notification { .. } => None,
        }
    }

    pub fn method(&self) -> Option<&str> {
        match self {
            RpcMessage::Request { method, .. } | RpcMessage::Notification { method, .. } => Some(method),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("jsonrpc".into(), JSONRPC_VERSION.into());
        let extra = match self {
            RpcMessage::Request {
                id,
                method,
                params,
                extra,
            } => {
                m.insert("id".into(), id.to_value());
                m.insert("method".into(), method.as_str().into());
                if let Some(p) = params {
                    m.insert("params".into(), p.clone());
                }
                extra
            }
            RpcMessage::Notification { method, params, extra } => {
                m.insert("method".into(), method.as_str().into());
                if let Some(p) = params {
                    m.insert("params".into(), p.clone());
                }
                extra
            }
            RpcMessage::Response { id, result, extra } => {
                m.insert("id".into(), id.to_value());
                m.insert("result".into(), result.clone());
                extra
            }
            RpcMessage::Error { id, error, extra } => {
                m.insert("id".into(), id.as_ref().map_or(Value::Null, RequestId::to_value));
                m.insert("error".into(), serde_json::to_value(error).expect("error object serializes"));
                extra
            }
        };
        for (k, v) in extra {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }

    pub fn from_value(v: Value) -> Result<Self, CodecError> {
        let Value::Object(m) = v else {
            return Err(CodecError::Invalid("envelope is not an object".into()));
        };
        match m.get("jsonrpc") {
            Some(Value::String(s)) if s == JSONRPC_VERSION => {}
            _ => return Err(CodecError::Invalid("missing or wrong `jsonrpc` member".into())),
        }
        // Split in one pass so unmodelled members keep their order.
        let (mut id, mut method, mut params, mut result, mut error) = (None, None, None, None, None);
        let mut extra = Map::new();
        for (k, v) in m {
            match k.as_str() {
                "id" => id = Some(v),
                "method" => method = Some(v),
                "params" => params = Some(v),
                "result" => result = Some(v),
                "error" => error = Some(v),
                "jsonrpc" => {}
                _ => {
                    extra.insert(k, v);
                }
            }
        }
        match (method, result, error) {
            (Some(method), None, None) => {
                let Value::String(method) = method else {
                    return Err(CodecError::Invalid("`method` is not a string".into()));
                };
                if let Some(p) = &params {
                    if !(p.is_object() || p.is_array()) {
                        return Err(CodecError::Invalid("`params` must be an object or array".into()));
                    }
                }
                match id {
                    Some(id) => Ok(RpcMessage::Request {
                        id: RequestId::from_value(&id)?,
                        method,
                        params,
                        extra,
                    }),
                    None => Ok(RpcMessage::Notification { method, params, extra }),
                }
            }
            (None, Some(result), None) => {
                let id = id.ok_or_else(|| CodecError::Invalid("response without id".into()))?;
                Ok(RpcMessage::Response {
                    id: RequestId::from_value(&id)?,
                    result,
                    extra,
                })
            }
            (None, None, Some(error)) => {
                let id = match id {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(RequestId::from_value(&v)?),
                };
                let error: ErrorObject = serde_json::from_value(error)
                    .map_err(|e| CodecError::Invalid(format!("error object: {e}")))?;
                Ok(RpcMessage::Error { id, error, extra })
            }
            _ => Err(CodecError::Invalid(
                "envelope must carry exactly one of method, result, error".into(),
            )),
        }
    }

    /// One line of JSON without the trailing newline.
    pub fn encode(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("envelope serializes")
    }

    pub fn decode(line: &str) -> Result<Self, CodecError> {
        let v: Value = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| CodecError::Parse(e.to_string()))?;
        Self::from_value(v)
    }
}

/// One item of a tool result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Content {
    Text {
        text: String,
    },
    /// A file produced inside the case; `uri` is `case:<relative path>`.
    ResourceLink {
        uri: String,
        name: String,
        #[serde(rename = "mimeType", default, skip_serializing_if = "Option::is_none")]
        mime_type: Option<String>,
    },
}

impl Content {
    pub fn text(t: impl Into<String>) -> Self {
        Content::Text { text: t.into() }
    }

    pub fn case_file(rel: &str) -> Self {
        let name = rel.rsplit('/').next().unwrap_or(rel).to_string();
        let mime_type = match rel.rsplit_once('.').map(|(_, e)| e) {
            Some("raw" | "dat" | "csv" | "xy") => Some("text/plain".to_string()),
            Some("vtk") => Some("application/octet-stream".to_string()),
            _ => None,
        };
        Content::ResourceLink {
            uri: format!("case:{rel}"),
            name,
            mime_type,
        }
    }

    /// Case-relative path of a resource link.
    pub fn case_path(&self) -> Option<&str> {
        match self {
            Content::ResourceLink { uri, .. } => uri.strip_prefix("case:"),
            Content::Text { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallResult {
    pub content: Vec<Content>,
    #[serde(rename = "isError", default)]
    pub is_error: bool,
}

impl ToolCallResult {
    pub fn ok(content: Vec<Content>) -> Self {
        Self {
            content,
            is_error: false,
        }
    }

    pub fn failure(text: impl Into<String>) -> Self {
        Self {
            content: vec![Content::text(text)],
            is_error: true,
        }
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|c| match c {
                Content::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn paths(&self) -> Vec<String> {
        self.content
            .iter()
            .filter_map(Content::case_path)
            .map(str::to_string)
            .collect()
    }
}
