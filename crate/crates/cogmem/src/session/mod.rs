//! Session manager and lifecycle controller: request resolution, the
//! session cache, the reference-counted turn store, TTL expiry, and
//! event-triggered garbage collection.

mod manager;

pub use manager::{ChatResponse, SessionManager};

use crate::core::{ChainDigest, LogicalTime, Message, SessionId, TokenBudget, TurnRecord};
use crate::da::DaState;
use crate::foa::FoaError;
use crate::ltm::LtmConfig;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("session {0} already has a turn in flight")]
    SessionBusy(SessionId),
    #[error(transparent)]
    Turn(#[from] FoaError),
    #[error("memory pipeline bug: {0}")]
    Da(#[from] crate::da::DaError),
}

/// Engine tuning. Every knob is a config key; ablation switches let the
/// benchmark harness peel memory layers off one at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub budget: TokenBudget,
    /// Idle logical ticks before a session becomes an expiry candidate.
    pub ttl_ticks: u64,
    /// Hard cap on expiry candidates examined per GC event.
    pub gc_work_bound: usize,
    pub ltm: LtmConfig,
    /// When false the memory agent never maintains notes (FoA-only mode).
    pub notes_enabled: bool,
    /// When false sessions are neither seeded from nor distilled into LTM.
    pub ltm_enabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            budget: TokenBudget::default(),
            ttl_ticks: 128,
            gc_work_bound: 16,
            ltm: LtmConfig::default(),
            notes_enabled: true,
            ltm_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    /// Explicitly closed: no longer extendable, still inheritable and
    /// reusable until TTL expiry.
    Inactive,
    Expired,
}

/// One cached dialogue with its working memory and turn references.
#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: SessionId,
    pub(crate) messages: Vec<Message>,
    pub(crate) dialogue_hashes: Vec<ChainDigest>,
    pub(crate) da: DaState,
    pub(crate) turn_refs: Vec<ChainDigest>,
    pub(crate) status: SessionStatus,
    pub(crate) last_active: LogicalTime,
    pub(crate) answer_cache: HashMap<ChainDigest, String>,
}

impl Session {
    fn new(session_id: SessionId, da: DaState, now: LogicalTime) -> Self {
        Self {
            session_id,
            messages: Vec::new(),
            dialogue_hashes: Vec::new(),
            da,
            turn_refs: Vec::new(),
            status: SessionStatus::Active,
            last_active: now,
            answer_cache: HashMap::new(),
        }
    }

    fn chain_end(&self) -> ChainDigest {
        self.dialogue_hashes.last().copied().unwrap_or_else(crate::core::chain_seed)
    }
}

/// Turn records shared across sessions, reference-counted so forked and
/// expired sessions can share turn data safely. An entry is removed exactly
/// when its refcount reaches zero.
#[derive(Debug, Default)]
pub struct TurnStore {
    entries: HashMap<ChainDigest, (TurnRecord, u64)>,
}

impl TurnStore {
    /// Stores a record at refcount 1, or bumps the refcount when the hash
    /// is already present (turn-level reuse).
    pub fn insert_or_increment(&mut self, hash: ChainDigest, record: TurnRecord) {
        self.entries
            .entry(hash)
            .and_modify(|(_, rc)| *rc += 1)
            .or_insert((record, 1));
    }

    pub fn increment(&mut self, hash: &ChainDigest) {
        if let Some((_, rc)) = self.entries.get_mut(hash) {
            *rc += 1;
        }
    }

    /// Drops one reference; returns true when the entry was freed.
    pub fn decrement(&mut self, hash: &ChainDigest) -> bool {
        let Some((_, rc)) = self.entries.get_mut(hash) else {
            return false;
        };
        *rc -= 1;
        if *rc == 0 {
            self.entries.remove(hash);
            true
        } else {
            false
        }
    }

    pub fn get(&self, hash: &ChainDigest) -> Option<&TurnRecord> {
        self.entries.get(hash).map(|(r, _)| r)
    }

    pub fn refcount(&self, hash: &ChainDigest) -> Option<u64> {
        self.entries.get(hash).map(|(_, rc)| *rc)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How a request was resolved against the session cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    /// The exact dialogue was answered before; served from cache.
    Reuse { session: SessionId },
    /// The request extends a live session by one user message.
    Extend { session: SessionId },
    /// A stored dialogue is a proper prefix of the request; its memory was
    /// forked into a new session.
    Inherit { session: SessionId, ancestor: SessionId },
    Fresh { session: SessionId },
}

impl Resolution {
    pub fn kind(&self) -> &'static str {
        match self {
            Resolution::Reuse { .. } => "reuse",
            Resolution::Extend { .. } => "extend",
            Resolution::Inherit { .. } => "inherit",
            Resolution::Fresh { .. } => "fresh",
        }
    }

    pub fn session(&self) -> SessionId {
        match self {
            Resolution::Reuse { session }
            | Resolution::Extend { session }
            | Resolution::Inherit { session, .. }
            | Resolution::Fresh { session } => *session,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GcReport {
    pub sessions_expired: u64,
    pub turns_freed: u64,
    pub work_units: u64,
}

/// Metadata dump of one session, without memory bodies; the `mem` CLI
/// renders these.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSnapshot {
    pub session_id: SessionId,
    pub status: SessionStatus,
    pub message_count: usize,
    pub turn_count: usize,
    pub turn_refs: Vec<String>,
    pub last_active: LogicalTime,
    pub update_cursor: crate::core::TurnId,
    pub active_notes: usize,
    pub cached_answers: usize,
}

/// Raw dialogue view used by resolution oracles and inspection tooling.
#[derive(Debug, Clone)]
pub struct DialogueSnapshot {
    pub session_id: SessionId,
    pub status: SessionStatus,
    pub last_active: LogicalTime,
    pub messages: Vec<Message>,
}
