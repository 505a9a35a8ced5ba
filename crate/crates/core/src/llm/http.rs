use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

/// Endpoint override read when the configuration leaves it unset.
pub const ENV_ENDPOINT: &str = "FOAMPILOT_LLM_ENDPOINT";
/// Bearer credential; only ever read from the environment.
pub const ENV_API_KEY: &str = "FOAMPILOT_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
        }
    }

    /// Settings from the environment alone, if an endpoint is set there.
    pub fn from_env() -> Option<Self> {
        std::env::var(ENV_ENDPOINT)
            .ok()
            .filter(|e| !e.is_empty())
            .map(Self::new)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct HttpBackend {
    settings: HttpSettings,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(settings.timeout).build();
        Self { settings, agent }
    }
}

fn overflow(body: &str) -> bool {
    body.contains("context_length_exceeded") || body.contains("maximum context length")
}

fn parse_reply(v: &Value) -> Result<ChatResponse, LlmError> {
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| LlmError::BadReply("no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::BadReply("choice has no message content".into()))?;
    let finish = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("stop");
    let tokens = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse {
        content: content.to_string(),
        prompt_tokens: tokens("prompt_tokens"),
        completion_tokens: tokens("completion_tokens"),
        finish_reason: finish.to_string(),
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(m) = request.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut req = self.agent.post(&self.settings.url());
        if let Some(key) = &self.settings.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => {
                let v: Value = resp
                    .into_json()
                    .map_err(|e| LlmError::BadReply(e.to_string()))?;
                parse_reply(&v)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                if overflow(&text) {
                    return Err(LlmError::ContextOverflow(text));
                }
                Err(LlmError::Transport {
                    message: format!("HTTP {code}: {}", text.chars().take(200).collect::<String>()),
                    retryable: code >= 500 || code == 429,
                })
            }
            Err(e) => Err(LlmError::Transport {
                message: e.to_string(),
                retryable: true,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Gateway, Message, RetryPolicy, Transcript};
    use super::*;
    use std::sync::Arc;

    /// Serves the given (status, body) replies in order and returns the
    /// received request bodies and auth headers.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<(String, Option<String>)>>) {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = format!("http://{}/v1", server.server_addr().to_ip().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let mut rq = server.recv().unwrap();
                let mut text = String::new();
                rq.as_reader().read_to_string(&mut text).unwrap();
                let auth = rq
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string());
                seen.push((text, auth));
                rq.respond(tiny_http::Response::from_string(body).with_status_code(status))
                    .unwrap();
            }
            seen
        });
        (addr, handle)
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;

    fn backend(addr: &str) -> HttpBackend {
        HttpBackend::new(HttpSettings {
            endpoint: addr.to_string(),
            api_key: Some("sk-test".into()),
            timeout: Duration::from_secs(5),
        })
    }

    #[test]
    fn posts_openai_body_with_bearer() {
        let (addr, h) = serve(vec![(200, OK)]);
        let r = backend(&addr)
            .complete(&ChatRequest::new("qwen", vec![Message::user("hi")]))
            .unwrap();
        assert_eq!((r.content.as_str(), r.prompt_tokens, r.completion_tokens), ("hello", 12, 3));
        let seen = h.join().unwrap();
        let body: Value = serde_json::from_str(&seen[0].0).unwrap();
        assert_eq!(body["model"], "qwen");
        assert_eq!(body["temperature"], 0.6);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(seen[0].1.as_deref(), Some("Bearer sk-test"));
    }

    #[test]
    fn server_errors_are_retried() {
        let (addr, h) = serve(vec![(503, "busy"), (502, "bad gateway"), (200, OK)]);
        let g = Gateway::new(Arc::new(backend(&addr)), Transcript::new(), "gen").with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        });
        assert_eq!(g.chat(vec![Message::user("hi")]).unwrap().content, "hello");
        assert_eq!(h.join().unwrap().len(), 3);
        assert_eq!(g.transcript().len(), 1);
    }

    #[test]
    fn context_overflow_is_reported() {
        let (addr, h) = serve(vec![(
            400,
            r#"{"error":{"code":"context_length_exceeded","message":"too long"}}"#,
        )]);
        let err = backend(&addr)
            .complete(&ChatRequest::new("m", vec![Message::user("x")]))
            .unwrap_err();
        assert!(matches!(err, LlmError::ContextOverflow(_)));
        h.join().unwrap();
    }

    #[test]
    fn url_joining() {
        assert_eq!(HttpSettings::new("http://h/v1/").url(), "http://h/v1/chat/completions");
        assert_eq!(
            HttpSettings::new("http://h/v1/chat/completions").url(),
            "http://h/v1/chat/completions"
        );
    }
}
