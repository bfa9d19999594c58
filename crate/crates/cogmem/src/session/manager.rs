//! The orchestration core: resolves requests against the session cache,
//! drives the two-pass turn pipeline, consolidates memory behind the
//! per-session ordering barrier, and runs bounded garbage collection on
//! engine events.

use super::{
    DialogueSnapshot, EngineConfig, EngineError, GcReport, Resolution, Session, SessionSnapshot,
    SessionStatus, TurnStore,
};
use crate::agents::ChatProvider;
use crate::core::{
    chain_of, hash_chain, LogicalTime, Message, Role, SessionId, TurnRecord,
};
use crate::da::{
    apply_turn_update, derive_note_ops, init_session_da, summarize_turn, DaState, SeededMemory,
};
use crate::events::{Event, EventLog};
use crate::foa::{run_turn, SessionView};
use crate::ltm::{distill_session, rewrite_query, LtmStore};
use parking_lot::{Mutex, RwLock};
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

/// Reply for one resolved request.
#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub answer: String,
    pub session_id: SessionId,
    /// 0 for a cache reuse, otherwise 1 or 2.
    pub windows_used: u8,
    pub prompt_tokens: u64,
    pub resolution: Resolution,
}

struct ManagerState {
    sessions: BTreeMap<SessionId, Session>,
    turn_store: TurnStore,
    in_flight: HashSet<SessionId>,
    clock: LogicalTime,
    next_session: u64,
}

/// The engine façade. Resolution and GC are serialized per manager; turn
/// pipelines for distinct sessions run outside the manager lock, and a
/// session is single-flight: one in-progress turn at a time.
pub struct SessionManager {
    inner: Mutex<ManagerState>,
    ltm: Arc<RwLock<LtmStore>>,
    reasoning: Arc<dyn ChatProvider>,
    memory: Arc<dyn ChatProvider>,
    config: EngineConfig,
    events: EventLog,
}

impl SessionManager {
    pub fn new(
        config: EngineConfig,
        reasoning: Arc<dyn ChatProvider>,
        memory: Arc<dyn ChatProvider>,
    ) -> Self {
        let ltm = Arc::new(RwLock::new(LtmStore::new(config.ltm)));
        Self::with_ltm(config, reasoning, memory, ltm)
    }

    /// Builds a manager around an existing (possibly shared) long-term
    /// store.
    pub fn with_ltm(
        config: EngineConfig,
        reasoning: Arc<dyn ChatProvider>,
        memory: Arc<dyn ChatProvider>,
        ltm: Arc<RwLock<LtmStore>>,
    ) -> Self {
        assert_eq!(ltm.read().config().dimension, config.ltm.dimension);
        Self {
            inner: Mutex::new(ManagerState {
                sessions: BTreeMap::new(),
                turn_store: TurnStore::default(),
                in_flight: HashSet::new(),
                clock: 0,
                next_session: 0,
            }),
            ltm,
            reasoning,
            memory,
            config,
            events: EventLog::new(),
        }
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    pub fn events(&self) -> EventLog {
        self.events.clone()
    }

    pub fn ltm(&self) -> Arc<RwLock<LtmStore>> {
        self.ltm.clone()
    }

    /// Resolves and answers one full-message-list request.
    pub fn handle_request(&self, messages: Vec<Message>) -> Result<ChatResponse, EngineError> {
        validate_request(&messages)?;
        let chain = chain_of(&messages);
        let final_digest = *chain.last().expect("validated non-empty");

        let mut state = self.inner.lock();
        state.clock += 1;
        let now = state.clock;

        // (a) exact dialogue served before: reuse, zero provider calls
        for (id, sess) in state.sessions.iter_mut() {
            if sess.status == SessionStatus::Expired {
                continue;
            }
            if let Some(answer) = sess.answer_cache.get(&final_digest) {
                let answer = answer.clone();
                sess.last_active = now;
                return Ok(ChatResponse {
                    answer,
                    session_id: *id,
                    windows_used: 0,
                    prompt_tokens: 0,
                    resolution: Resolution::Reuse { session: *id },
                });
            }
        }

        let prefix = &chain[..chain.len() - 1];
        // (b) a live session whose whole dialogue is the request minus the
        // new user message: extend it
        let extend_target = state
            .sessions
            .iter()
            .find(|(_, s)| s.status == SessionStatus::Active && s.dialogue_hashes == prefix)
            .map(|(id, _)| *id);

        let (target, resolution) = if let Some(id) = extend_target {
            if state.in_flight.contains(&id) {
                return Err(EngineError::SessionBusy(id));
            }
            (id, Resolution::Extend { session: id })
        } else {
            // (c) longest stored proper prefix, most recent wins ties:
            // inherit by forking. Empty sessions are not inheritance
            // ancestors; forking nothing is just a fresh session.
            let mut best: Option<(usize, LogicalTime, SessionId)> = None;
            for (id, s) in state.sessions.iter() {
                if s.status == SessionStatus::Expired || s.messages.is_empty() {
                    continue;
                }
                let len = s.dialogue_hashes.len();
                if len < chain.len() && s.dialogue_hashes[..] == chain[..len] {
                    let key = (len, s.last_active, *id);
                    if best.is_none_or(|b| key > b) {
                        best = Some(key);
                    }
                }
            }
            // creation-triggered GC runs before seeding so freshly distilled
            // knowledge is already retrievable
            self.gc_event_locked(&mut state, now);
            match best {
                Some((_, _, ancestor)) => {
                    let id = self.fork_session_locked(&mut state, ancestor, now);
                    (id, Resolution::Inherit { session: id, ancestor })
                }
                None => {
                    let id = self.create_fresh_locked(&mut state, &messages[0].content, now);
                    (id, Resolution::Fresh { session: id })
                }
            }
        };

        // replay any not-yet-recorded (user, assistant) pairs ahead of the
        // final user message into the session
        let recorded = state.sessions[&target].messages.len();
        let tail = &messages[recorded..messages.len() - 1];
        if tail.len() % 2 != 0
            || tail
                .chunks(2)
                .any(|p| p[0].role != Role::User || p[1].role != Role::Assistant)
        {
            return Err(EngineError::MalformedRequest(
                "unrecorded history must be (user, assistant) pairs".into(),
            ));
        }
        for pair in tail.chunks(2).map(|p| (p[0].clone(), p[1].clone())) {
            self.absorb_pair_locked(&mut state, target, pair.0, pair.1, now);
        }

        // snapshot the session at the barrier and release the lock for the
        // reasoning passes
        let sess = &state.sessions[&target];
        let turn_id = sess.da.update_cursor + 1;
        let da_snapshot = sess.da.clone();
        let view = SessionView {
            notes: da_snapshot.active_notes().cloned().collect(),
            turn_summaries: da_snapshot.turn_summaries.clone(),
            ltm_hits: da_snapshot.seeded_memories.clone(),
        };
        let full_turns: Vec<TurnRecord> = sess
            .turn_refs
            .iter()
            .map(|h| state.turn_store.get(h).expect("live turn_ref resolves").clone())
            .collect();
        let user_input = messages.last().expect("validated").content.clone();
        state.in_flight.insert(target);
        drop(state);

        let outcome = run_turn(
            target,
            turn_id,
            &view,
            &full_turns,
            &user_input,
            self.reasoning.as_ref(),
            self.config.budget,
            &self.events,
        );
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                // failed turns leave no partial memory update; the session
                // stays consistent and extendable
                self.inner.lock().in_flight.remove(&target);
                return Err(EngineError::Turn(e));
            }
        };
        if outcome.answer.trim().is_empty() {
            self.inner.lock().in_flight.remove(&target);
            return Err(EngineError::Turn(crate::foa::FoaError::TurnFailed {
                reason: "reasoning agent produced an empty answer".into(),
            }));
        }
        self.events.emit(Event::AnswerDelivered { session: target, turn: turn_id });
        for warning in &outcome.warnings {
            self.events
                .emit(Event::MemoryWarning { session: target, detail: warning.clone() });
        }

        // post-turn consolidation: the answer is already deliverable; the
        // per-session barrier only orders this against the session's next
        // turn
        let summary = summarize_turn(&user_input, &outcome.answer, self.memory.as_ref());
        let (ops, warnings) = if self.config.notes_enabled {
            derive_note_ops(&summary.text, &da_snapshot, self.memory.as_ref())
        } else {
            (Vec::new(), Vec::new())
        };
        for warning in warnings {
            self.events.emit(Event::MemoryWarning { session: target, detail: warning });
        }

        let mut state = self.inner.lock();
        let now = state.clock;
        let sess = state.sessions.get_mut(&target).expect("session exists");
        let user_msg = Message::user(user_input.clone()).expect("validated");
        let assistant_msg =
            Message::assistant(outcome.answer.clone()).expect("checked non-empty above");
        let after_user = hash_chain(&sess.chain_end(), &user_msg);
        let after_assistant = hash_chain(&after_user, &assistant_msg);
        let record = TurnRecord {
            turn_id,
            user_input,
            response: outcome.answer.clone(),
            summary: summary.text,
            summary_is_fallback: summary.is_fallback,
            turn_hash: after_assistant,
            prompt_tokens: outcome.prompt_tokens,
            output_tokens: outcome.output_tokens,
            created_at: now,
        };
        let update_warnings = apply_turn_update(&mut sess.da, &record, ops)?;
        self.events.emit(Event::TurnUpdateApplied { session: target, turn: turn_id });
        for warning in update_warnings {
            self.events.emit(Event::MemoryWarning { session: target, detail: warning });
        }
        self.complete_turn_locked(&mut state, target, record, user_msg, assistant_msg, now);
        state.in_flight.remove(&target);
        Ok(ChatResponse {
            answer: outcome.answer,
            session_id: target,
            windows_used: outcome.windows_used,
            prompt_tokens: outcome.prompt_tokens,
            resolution,
        })
    }

    /// Records a completed turn: turn store (refcounted), turn_refs, the
    /// answer cache keyed by the dialogue digest at the user message, the
    /// session transcript, and a GC event.
    fn complete_turn_locked(
        &self,
        state: &mut ManagerState,
        target: SessionId,
        record: TurnRecord,
        user_msg: Message,
        assistant_msg: Message,
        now: LogicalTime,
    ) {
        let turn_id = record.turn_id;
        let hash = record.turn_hash;
        state.turn_store.insert_or_increment(hash, record);
        let sess = state.sessions.get_mut(&target).expect("session exists");
        let after_user = hash_chain(&sess.chain_end(), &user_msg);
        let after_assistant = hash_chain(&after_user, &assistant_msg);
        debug_assert_eq!(after_assistant, hash);
        sess.turn_refs.push(hash);
        sess.answer_cache.insert(after_user, assistant_msg.content.clone());
        sess.messages.push(user_msg);
        sess.messages.push(assistant_msg);
        sess.dialogue_hashes.push(after_user);
        sess.dialogue_hashes.push(after_assistant);
        sess.last_active = now;
        self.events.emit(Event::TurnCompleted { session: target, turn: turn_id });
        self.gc_event_locked(state, now);
    }

    /// Replays one client-provided (user, assistant) pair into the session:
    /// summarized and note-integrated like any turn, but with zero token
    /// spend attributed.
    fn absorb_pair_locked(
        &self,
        state: &mut ManagerState,
        target: SessionId,
        user_msg: Message,
        assistant_msg: Message,
        now: LogicalTime,
    ) {
        let summary = summarize_turn(&user_msg.content, &assistant_msg.content, self.memory.as_ref());
        let da_snapshot = state.sessions[&target].da.clone();
        let (ops, warnings) = if self.config.notes_enabled {
            derive_note_ops(&summary.text, &da_snapshot, self.memory.as_ref())
        } else {
            (Vec::new(), Vec::new())
        };
        for warning in warnings {
            self.events.emit(Event::MemoryWarning { session: target, detail: warning });
        }
        let sess = state.sessions.get_mut(&target).expect("session exists");
        let after_user = hash_chain(&sess.chain_end(), &user_msg);
        let after_assistant = hash_chain(&after_user, &assistant_msg);
        let turn_id = sess.da.update_cursor + 1;
        let record = TurnRecord {
            turn_id,
            user_input: user_msg.content.clone(),
            response: assistant_msg.content.clone(),
            summary: summary.text,
            summary_is_fallback: summary.is_fallback,
            turn_hash: after_assistant,
            prompt_tokens: 0,
            output_tokens: 0,
            created_at: now,
        };
        apply_turn_update(&mut sess.da, &record, ops)
            .expect("absorption preserves turn ordering");
        self.events.emit(Event::TurnUpdateApplied { session: target, turn: turn_id });
        self.complete_turn_locked(state, target, record, user_msg, assistant_msg, now);
    }

    fn mint_session_id(state: &mut ManagerState) -> SessionId {
        state.next_session += 1;
        SessionId(state.next_session)
    }

    /// Fresh session: empty notes, LTM seeded through query rewriting over
    /// the request head.
    fn create_fresh_locked(
        &self,
        state: &mut ManagerState,
        request_head: &str,
        now: LogicalTime,
    ) -> SessionId {
        let seeds = if self.config.ltm_enabled {
            let (query, _fell_back) = rewrite_query(request_head, self.memory.as_ref());
            self.ltm
                .write()
                .retrieve(&query, self.config.ltm.retrieve_k, self.config.ltm.retrieve_min_sim)
                .into_iter()
                .map(|hit| SeededMemory {
                    entry_id: hit.entry.entry_id,
                    content: hit.entry.content,
                    similarity: hit.similarity,
                })
                .collect()
        } else {
            Vec::new()
        };
        let id = Self::mint_session_id(state);
        state.sessions.insert(id, Session::new(id, init_session_da(seeds), now));
        self.events.emit(Event::SessionCreated { session: id });
        id
    }

    /// Inheritance is a fork, not a move: the new session deep-copies the
    /// ancestor's active notes and summaries and shares its turns with
    /// bumped refcounts. The ancestor keeps serving other requests.
    fn fork_session_locked(
        &self,
        state: &mut ManagerState,
        ancestor_id: SessionId,
        now: LogicalTime,
    ) -> SessionId {
        let ancestor = state.sessions.get(&ancestor_id).expect("ancestor exists").clone();
        let id = Self::mint_session_id(state);
        for hash in &ancestor.turn_refs {
            state.turn_store.increment(hash);
        }
        let session = Session {
            session_id: id,
            messages: ancestor.messages.clone(),
            dialogue_hashes: ancestor.dialogue_hashes.clone(),
            da: ancestor.da.fork(),
            turn_refs: ancestor.turn_refs.clone(),
            status: SessionStatus::Active,
            last_active: now,
            answer_cache: ancestor.answer_cache.clone(),
        };
        state.sessions.insert(id, session);
        self.events.emit(Event::SessionForked { session: id, ancestor: ancestor_id });
        id
    }

    /// Bounded expiry pass. Each event examines at most `gc_work_bound`
    /// candidates regardless of store size — the consistent-latency
    /// contract — and leaves the rest for the next event. Every expiry
    /// first lets the LTM review the session (distill + integrate), then
    /// releases its turns and working memory.
    fn gc_event_locked(&self, state: &mut ManagerState, now: LogicalTime) -> GcReport {
        let candidates: Vec<SessionId> = state
            .sessions
            .iter()
            .filter(|(id, s)| {
                s.status != SessionStatus::Expired
                    && !state.in_flight.contains(id)
                    && s.last_active + self.config.ttl_ticks <= now
            })
            .map(|(id, _)| *id)
            .take(self.config.gc_work_bound)
            .collect();
        let mut report = GcReport::default();
        for id in candidates {
            report.work_units += 1;
            if self.config.ltm_enabled {
                let da = &state.sessions[&id].da;
                let distilled = distill_session(id, da, self.memory.as_ref());
                if !distilled.is_empty() {
                    self.ltm.write().integrate(distilled, self.memory.as_ref(), now);
                }
            }
            let sess = state.sessions.get_mut(&id).expect("candidate exists");
            let refs = std::mem::take(&mut sess.turn_refs);
            sess.answer_cache.clear();
            sess.da = DaState::default();
            sess.status = SessionStatus::Expired;
            for hash in refs {
                if state.turn_store.decrement(&hash) {
                    report.turns_freed += 1;
                }
            }
            self.events.emit(Event::SessionExpired { session: id });
            report.sessions_expired += 1;
        }
        self.events.emit(Event::GcRun {
            sessions_expired: report.sessions_expired,
            turns_freed: report.turns_freed,
            work_units: report.work_units,
        });
        report
    }

    /// Explicit GC trigger: advances the clock one tick and runs a bounded
    /// pass.
    pub fn gc_event(&self) -> GcReport {
        let mut state = self.inner.lock();
        state.clock += 1;
        let now = state.clock;
        self.gc_event_locked(&mut state, now)
    }

    /// Advances logical time without doing work; lets callers age sessions
    /// toward expiry deterministically.
    pub fn advance_clock(&self, ticks: u64) {
        self.inner.lock().clock += ticks;
    }

    pub fn clock(&self) -> LogicalTime {
        self.inner.lock().clock
    }

    /// Marks a session inactive (explicit close). It stops extending but
    /// remains inheritable and reusable until TTL expiry.
    pub fn deactivate(&self, id: SessionId) -> bool {
        let mut state = self.inner.lock();
        match state.sessions.get_mut(&id) {
            Some(s) if s.status == SessionStatus::Active => {
                s.status = SessionStatus::Inactive;
                true
            }
            _ => false,
        }
    }

    pub fn session_snapshot(&self, id: SessionId) -> Option<SessionSnapshot> {
        let state = self.inner.lock();
        state.sessions.get(&id).map(snapshot_of)
    }

    pub fn sessions_overview(&self) -> Vec<SessionSnapshot> {
        let state = self.inner.lock();
        state.sessions.values().map(snapshot_of).collect()
    }

    /// Raw recorded dialogues, the ground truth the resolution oracle
    /// compares against.
    pub fn dialogue_snapshots(&self) -> Vec<DialogueSnapshot> {
        let state = self.inner.lock();
        state
            .sessions
            .values()
            .map(|s| DialogueSnapshot {
                session_id: s.session_id,
                status: s.status,
                last_active: s.last_active,
                messages: s.messages.clone(),
            })
            .collect()
    }

    /// (turn hash hex, refcount) pairs for the whole turn store.
    pub fn turn_store_snapshot(&self) -> Vec<(String, u64)> {
        let state = self.inner.lock();
        let mut out: Vec<(String, u64)> = state
            .turn_store
            .entries
            .iter()
            .map(|(h, (_, rc))| (h.to_hex(), *rc))
            .collect();
        out.sort();
        out
    }

    pub fn turn_store_len(&self) -> usize {
        self.inner.lock().turn_store.len()
    }

    /// Per-session turn reference hashes (hex) for live sessions.
    pub fn turn_ref_snapshot(&self) -> Vec<(SessionId, Vec<String>)> {
        let state = self.inner.lock();
        state
            .sessions
            .values()
            .map(|s| (s.session_id, s.turn_refs.iter().map(|h| h.to_hex()).collect()))
            .collect()
    }
}

fn snapshot_of(s: &Session) -> SessionSnapshot {
    SessionSnapshot {
        session_id: s.session_id,
        status: s.status,
        message_count: s.messages.len(),
        turn_count: s.turn_refs.len(),
        turn_refs: s.turn_refs.iter().map(|h| h.to_hex()).collect(),
        last_active: s.last_active,
        update_cursor: s.da.update_cursor,
        active_notes: s.da.active_notes().count(),
        cached_answers: s.answer_cache.len(),
    }
}

fn validate_request(messages: &[Message]) -> Result<(), EngineError> {
    if messages.is_empty() {
        return Err(EngineError::MalformedRequest("empty message list".into()));
    }
    if messages.iter().any(|m| m.content.trim().is_empty()) {
        return Err(EngineError::MalformedRequest("blank message content".into()));
    }
    if messages.last().expect("non-empty").role != Role::User {
        return Err(EngineError::MalformedRequest("final message must be user-role".into()));
    }
    Ok(())
}
