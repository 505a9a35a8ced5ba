use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    /// Substring of the latest user message.
    Contains(String),
    /// Regular expression searched in the latest user message.
    Regex(String),
    Any,
}

impl Default for Matcher {
    fn default() -> Self {
        Matcher::Any
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub response: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    /// Reusable entries are never consumed.
    #[serde(default)]
    pub repeat: bool,
}

impl MockEntry {
    pub fn new(matcher: Matcher, response: impl Into<String>) -> Self {
        Self {
            matcher,
            response: response.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
            repeat: false,
        }
    }

    pub fn tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = prompt;
        self.completion_tokens = completion;
        self
    }
}

/// What happens once every one-shot entry has been consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exhaustion {
    /// Unmatched requests fail.
    #[default]
    Error,
    /// Consumed entries become available again.
    Restart,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
    #[serde(default)]
    pub exhaustion: Exhaustion,
}

impl MockScript {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self {
            entries,
            exhaustion: Exhaustion::Error,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, e) in self.entries.iter().enumerate() {
            if let Matcher::Regex(p) = &e.matcher {
                Regex::new(p).map_err(|err| format!("entry {i}: {err}"))?;
            }
        }
        Ok(())
    }
}

/// A script file: either one script, or per-trial scripts where each item
/// may stand for several consecutive trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockSuite {
    Trials { trials: Vec<TrialScript> },
    Single(MockScript),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScript {
    #[serde(default = "one")]
    pub copies: usize,
    #[serde(flatten)]
    pub script: MockScript,
}

fn one() -> usize {
    1
}

impl MockSuite {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let suite: MockSuite =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        match &suite {
            MockSuite::Single(s) => s.validate()?,
            MockSuite::Trials { trials } => {
                for t in trials {
                    t.script.validate()?;
                }
            }
        }
        Ok(suite)
    }

    /// Script for trial `index` (zero-based). A single script serves every
    /// trial.
    pub fn for_trial(&self, index: usize) -> Option<MockScript> {
        match self {
            MockSuite::Single(s) => Some(s.clone()),
            MockSuite::Trials { trials } => {
                let mut i = index;
                for t in trials {
                    if i < t.copies {
                        return Some(t.script.clone());
                    }
                    i -= t.copies;
                }
                None
            }
        }
    }
}

#[derive(Debug)]
struct State {
    used: Vec<bool>,
    requests: Vec<ChatRequest>,
}

/// Deterministic backend answering from a [`MockScript`]. Entries are tried
/// in order against the latest user message.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    patterns: Vec<Option<Regex>>,
    state: Mutex<State>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, String> {
        script.validate()?;
        let patterns = script
            .entries
            .iter()
            .map(|e| match &e.matcher {
                Matcher::Regex(p) => Some(Regex::new(p).expect("validated")),
                _ => None,
            })
            .collect();
        let n = script.entries.len();
        Ok(Self {
            script,
            patterns,
            state: Mutex::new(State {
                used: vec![false; n],
                requests: Vec::new(),
            }),
        })
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().requests.len()
    }

    fn matches(&self, i: usize, text: &str) -> bool {
        match &self.script.entries[i].matcher {
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::Regex(_) => self.patterns[i].as_ref().is_some_and(|r| r.is_match(text)),
            Matcher::Any => true,
        }
    }

    fn find(&self, used: &[bool], text: &str) -> Option<usize> {
        (0..self.script.entries.len()).find(|&i| !used[i] && self.matches(i, text))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let text = request.last_user();
        let mut st = self.state.lock().unwrap();
        st.requests.push(request.clone());
        let mut hit = self.find(&st.used, text);
        if hit.is_none()
            && self.script.exhaustion == Exhaustion::Restart
            && st.used.iter().any(|u| *u)
        {
            st.used.iter_mut().for_each(|u| *u = false);
            hit = self.find(&st.used, text);
        }
        let Some(i) = hit else {
            return Err(LlmError::MockExhausted {
                prefix: text.chars().take(60).collect(),
            });
        };
        let entry = &self.script.entries[i];
        if !entry.repeat {
            st.used[i] = true;
        }
        Ok(ChatResponse {
            content: entry.response.clone(),
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            finish_reason: "stop".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Gateway, Message, Transcript};
    use super::*;
    use std::sync::Arc;

    fn ask(b: &MockBackend, text: &str) -> Result<ChatResponse, LlmError> {
        b.complete(&ChatRequest::new("m", vec![Message::user(text)]))
    }

    #[test]
    fn scripted_echo() {
        let b = MockBackend::new(MockScript::new(vec![MockEntry::new(
            Matcher::Contains("sample field p".into()),
            "CALL postProcess_surfaces_sampledPatch",
        )]))
        .unwrap();
        let r = ask(&b, "Please sample field p on the `walls' patch.").unwrap();
        assert_eq!(r.content, "CALL postProcess_surfaces_sampledPatch");
        assert_eq!(r.finish_reason, "stop");
    }

    #[test]
    fn unmatched_request_names_the_prefix() {
        let b = MockBackend::new(MockScript::new(vec![MockEntry::new(
            Matcher::Contains("vorticity".into()),
            "x",
        )]))
        .unwrap();
        match ask(&b, "make me coffee") {
            Err(LlmError::MockExhausted { prefix }) => assert_eq!(prefix, "make me coffee"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn entries_are_consumed_in_order() {
        let b = MockBackend::new(MockScript::new(vec![
            MockEntry::new(Matcher::Any, "first"),
            MockEntry::new(Matcher::Regex("^again".into()), "second"),
        ]))
        .unwrap();
        assert_eq!(ask(&b, "again").unwrap().content, "first");
        assert_eq!(ask(&b, "again").unwrap().content, "second");
        assert!(ask(&b, "again").is_err());
    }

    #[test]
    fn restart_policy_reuses_entries() {
        let mut s = MockScript::new(vec![MockEntry::new(Matcher::Any, "a")]);
        s.exhaustion = Exhaustion::Restart;
        let b = MockBackend::new(s).unwrap();
        for _ in 0..3 {
            assert_eq!(ask(&b, "q").unwrap().content, "a");
        }
    }

    #[test]
    fn identical_sequences_give_identical_transcripts() {
        let script = MockScript::new(vec![
            MockEntry::new(Matcher::Any, "one").tokens(10, 5),
            MockEntry::new(Matcher::Any, "two").tokens(20, 7),
        ]);
        let run = || {
            let t = Transcript::new();
            let g = Gateway::new(Arc::new(MockBackend::new(script.clone()).unwrap()), t.clone(), "gen");
            g.chat(vec![Message::user("a")]).unwrap();
            g.chat(vec![Message::user("b")]).unwrap();
            t.to_jsonl()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn suite_trials_expand_copies() {
        let json = r#"{"trials":[{"copies":9,"entries":[{"response":"bad"}]},{"entries":[{"response":"good"}]}]}"#;
        let suite: MockSuite = serde_json::from_str(json).unwrap();
        assert_eq!(suite.for_trial(8).unwrap().entries[0].response, "bad");
        assert_eq!(suite.for_trial(9).unwrap().entries[0].response, "good");
        assert!(suite.for_trial(10).is_none());
        let single: MockSuite = serde_json::from_str(r#"{"entries":[]}"#).unwrap();
        assert!(single.for_trial(99).is_some());
    }
}
