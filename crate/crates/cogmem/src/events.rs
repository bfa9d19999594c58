//! Engine event log.
//!
//! Every lifecycle action appends one event. Tests use the log as ground
//! truth for the ordering barrier, GC work bounds, and window boundedness;
//! operators can dump it for debugging.

use crate::core::{SessionId, TurnId};
use crate::foa::WindowKind;
use parking_lot::Mutex;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    SessionCreated { session: SessionId },
    SessionForked { session: SessionId, ancestor: SessionId },
    WindowAssembled { session: SessionId, turn: TurnId, kind: WindowKind, token_count: u64 },
    AnswerDelivered { session: SessionId, turn: TurnId },
    TurnUpdateApplied { session: SessionId, turn: TurnId },
    TurnCompleted { session: SessionId, turn: TurnId },
    SessionExpired { session: SessionId },
    GcRun { sessions_expired: u64, turns_freed: u64, work_units: u64 },
    MemoryWarning { session: SessionId, detail: String },
}

/// Shared append-only event sink. Cloning shares the underlying log.
#[derive(Clone, Default)]
pub struct EventLog {
    events: Arc<Mutex<Vec<Event>>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&self, event: Event) {
        self.events.lock().push(event);
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.lock().is_empty()
    }
}
