//! Chat-completion gateway: one request/response contract, a scripted mock
//! and an OpenAI-compatible HTTP backend, with retry and a shared transcript.

mod http;
mod mock;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpSettings, ENV_API_KEY, ENV_ENDPOINT};
pub use mock::{Exhaustion, Matcher, MockBackend, MockEntry, MockScript, MockSuite, TrialScript};

/// Sampling temperature used when a role does not set its own.
pub const DEFAULT_TEMPERATURE: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("mock script has no entry matching a message starting with {prefix:?}")]
    MockExhausted { prefix: String },
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend reply: {0}")]
    BadReply(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        matches!(self, LlmError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside 0..=2",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Content of the most recent user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub finish_reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt += other.prompt;
        self.completion += other.completion;
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;
    fn add(mut self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::add(&mut self, rhs);
        self
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

/// One successful request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub agent: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

impl Exchange {
    pub fn usage(&self) -> TokenUsage {
        TokenUsage {
            prompt: self.response.prompt_tokens,
            completion: self.response.completion_tokens,
        }
    }
}

pub fn count_session_tokens(transcript: &[Exchange]) -> TokenUsage {
    transcript.iter().map(Exchange::usage).sum()
}

/// Append-only log shared by every gateway of a session.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<Exchange>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, e: Exchange) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push(e);
    }

    pub fn snapshot(&self) -> Vec<Exchange> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn usage(&self) -> TokenUsage {
        count_session_tokens(&self.snapshot())
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.snapshot()
            .iter()
            .map(|e| serde_json::to_string(e).expect("exchange serializes") + "\n")
            .collect()
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// A backend bound to an agent name, model and temperature, logging every
/// successful exchange into a shared transcript.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    transcript: Transcript,
    agent: String,
    model: String,
    temperature: f64,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("agent", &self.agent)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, transcript: Transcript, agent: impl Into<String>) -> Self {
        Self {
            backend,
            transcript,
            agent: agent.into(),
            model: "default".into(),
            temperature: DEFAULT_TEMPERATURE,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn agent(&self) -> &str {
        &self.agent
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Sends the messages with this gateway's model and temperature.
    pub fn chat(&self, messages: Vec<Message>) -> Result<ChatResponse, LlmError> {
        let req = ChatRequest::new(self.model.clone(), messages).with_temperature(self.temperature);
        self.complete(&req)
    }

    /// Sends a request, retrying retryable transport failures with
    /// exponential backoff.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut delay = self.retry.base_delay;
        let mut attempt = 1;
        loop {
            match self.backend.complete(request) {
                Ok(resp) => {
                    self.transcript.push(Exchange {
                        agent: self.agent.clone(),
                        request: request.clone(),
                        response: resp.clone(),
                    });
                    return Ok(resp);
                }
                Err(e) if e.retryable() && attempt < self.retry.attempts => {
                    log::warn!("{} call failed (attempt {attempt}): {e}", self.agent);
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(LlmError::Transport {
                    message: "503".into(),
                    retryable: true,
                });
            }
            Ok(ChatResponse {
                content: "ok".into(),
                prompt_tokens: 1,
                completion_tokens: 2,
                finish_reason: "stop".into(),
            })
        }
    }

    fn gateway(failures: u32) -> (Arc<Flaky>, Gateway) {
        let b = Arc::new(Flaky {
            failures,
            calls: AtomicU32::new(0),
        });
        let g = Gateway::new(b.clone(), Transcript::new(), "test").with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        });
        (b, g)
    }

    #[test]
    fn retries_then_succeeds_once_in_transcript() {
        let (b, g) = gateway(2);
        assert_eq!(g.chat(vec![Message::user("hi")]).unwrap().content, "ok");
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
        assert_eq!(g.transcript().len(), 1);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (b, g) = gateway(5);
        assert!(matches!(g.chat(vec![Message::user("hi")]), Err(LlmError::Transport { .. })));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
        assert!(g.transcript().is_empty());
    }

    #[test]
    fn request_validation() {
        let (_, g) = gateway(0);
        assert!(matches!(g.chat(vec![]), Err(LlmError::InvalidRequest(_))));
        let r = ChatRequest::new("m", vec![Message::user("x")]).with_temperature(2.5);
        assert!(r.validate().is_err());
        assert_eq!(ChatRequest::new("m", vec![Message::user("x")]).temperature, 0.6);
    }

    fn exchange(p: u64, c: u64) -> Exchange {
        Exchange {
            agent: "a".into(),
            request: ChatRequest::new("m", vec![Message::user("x")]),
            response: ChatResponse {
                content: String::new(),
                prompt_tokens: p,
                completion_tokens: c,
                finish_reason: "stop".into(),
            },
        }
    }

    #[test]
    fn token_totals() {
        assert_eq!(count_session_tokens(&[]), TokenUsage::default());
        let t = [exchange(100, 50), exchange(200, 80), exchange(300, 120)];
        let u = count_session_tokens(&t);
        assert_eq!((u.prompt, u.completion), (600, 250));
        let mut rev = t.to_vec();
        rev.reverse();
        assert_eq!(count_session_tokens(&rev), u);
    }
}
