//! Status events for observers such as the web console. Every event gets
//! a sequential id so a reconnecting subscriber can resume after the last
//! id it saw.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const WORKFLOW_STATE: &str = "workflow-state-change";
pub const LLM_EXCHANGE: &str = "llm-exchange-summary";
pub const TOOL_INVOCATION: &str = "tool-invocation";
pub const FILE_PRODUCED: &str = "file-produced";
pub const ERROR: &str = "error";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: u64,
    pub kind: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub payload: Value,
}

#[derive(Default)]
struct Inner {
    history: Vec<Event>,
    subscribers: Vec<Sender<Event>>,
}

/// Append-only event log with live subscribers. Clones share the log.
#[derive(Clone, Default)]
pub struct EventBus(Arc<Mutex<Inner>>);

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus").field("events", &self.history().len()).finish()
    }
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, kind: &str, payload: Value) -> u64 {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut inner = self.0.lock().unwrap_or_else(|p| p.into_inner());
        let event = Event {
            id: inner.history.len() as u64 + 1,
            kind: kind.to_string(),
            timestamp,
            payload,
        };
        inner.subscribers.retain(|s| s.send(event.clone()).is_ok());
        inner.history.push(event.clone());
        event.id
    }

    pub fn history(&self) -> Vec<Event> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).history.clone()
    }

    /// Events with id greater than `after`, plus a receiver for everything
    /// published from now on. Nothing is lost or repeated between the two.
    pub fn subscribe(&self, after: u64) -> (Vec<Event>, Receiver<Event>) {
        let (tx, rx) = channel();
        let mut inner = self.0.lock().unwrap_or_else(|p| p.into_inner());
        let backlog = inner.history.iter().filter(|e| e.id > after).cloned().collect();
        inner.subscribers.push(tx);
        (backlog, rx)
    }
}
