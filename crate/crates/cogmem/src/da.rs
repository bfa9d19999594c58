//! Direct-Access session working memory: the notes ledger, per-turn
//! summarization, and the post-turn update pipeline.
//!
//! Notes are the distilled state of a session. The memory agent maintains
//! them through a line-oriented op grammar; malformed or stale ops degrade
//! memory quality but never crash the dialogue.

use crate::agents::{ChatProvider, CompletionParams, ProviderError};
use crate::core::{Note, NoteId, NoteStatus, TurnId, TurnRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DaError {
    #[error("out-of-order turn update: expected turn {expected}, got {got}")]
    OutOfOrderTurn { expected: TurnId, got: TurnId },
}

/// A long-term memory entry loaded into the DA at session start. Read-only
/// for the rest of the session; distillation reconciles at session end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededMemory {
    pub entry_id: String,
    pub content: String,
    pub similarity: f64,
}

/// Session-level working memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaState {
    pub notes: Vec<Note>,
    pub turn_summaries: Vec<(TurnId, String)>,
    pub seeded_memories: Vec<SeededMemory>,
    /// Highest turn id whose post-turn update has completed.
    pub update_cursor: TurnId,
    next_note_seq: u64,
}

impl DaState {
    pub fn active_notes(&self) -> impl Iterator<Item = &Note> {
        self.notes.iter().filter(|n| n.status == NoteStatus::Active)
    }

    fn active_mut(&mut self, id: &NoteId) -> Option<&mut Note> {
        self.notes.iter_mut().find(|n| &n.note_id == id && n.status == NoteStatus::Active)
    }

    fn mint_note_id(&mut self) -> NoteId {
        self.next_note_seq += 1;
        NoteId(format!("n{}", self.next_note_seq))
    }

    /// Working-memory copy for an inheriting session: active notes only,
    /// all summaries and seeds, counters preserved so new note ids never
    /// collide with inherited ones.
    pub fn fork(&self) -> DaState {
        DaState {
            notes: self.notes.iter().filter(|n| n.status == NoteStatus::Active).cloned().collect(),
            turn_summaries: self.turn_summaries.clone(),
            seeded_memories: self.seeded_memories.clone(),
            update_cursor: self.update_cursor,
            next_note_seq: self.next_note_seq,
        }
    }
}

/// One memory-agent instruction against the notes ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoteOp {
    Add(String),
    Revise(NoteId, String),
    Retire(NoteId),
}

/// Creates the working memory for a new session: empty notes, the given
/// retrieval hits seeded in, cursor at zero.
pub fn init_session_da(retrieved: Vec<SeededMemory>) -> DaState {
    DaState { seeded_memories: retrieved, ..DaState::default() }
}

pub const SUMMARIZE_TEMPLATE: &str = "TASK: summarize-turn\n\
You are the memory agent. Compress this exchange into one line that keeps \
every observation, feedback signal, and action taken.\n\
USER_INPUT:\n{USER_INPUT}\n\
RESPONSE:\n{RESPONSE}";

pub const NOTE_OPS_TEMPLATE: &str = "TASK: update-notes\n\
You are the memory agent. Given the new turn summary and the current notes, \
emit note operations, one per line:\n\
ADD: <text>\n\
REVISE <id>: <text>\n\
RETIRE <id>\n\
Emit nothing to leave the notes unchanged.\n\
SUMMARY:\n{SUMMARY}\n\
NOTES:\n{NOTES}";

/// Renders one note the way both prompts and context windows show it.
pub fn render_note_line(note: &Note) -> String {
    format!("[note {}] {}", note.note_id, note.content)
}

fn render_notes_block<'a>(notes: impl Iterator<Item = &'a Note>) -> String {
    let lines: Vec<String> = notes.map(render_note_line).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

fn ask(agent: &dyn ChatProvider, prompt: String) -> Result<String, ProviderError> {
    let message = crate::core::Message::user(prompt).expect("templates are non-empty");
    agent.complete(&[message], &CompletionParams::default()).map(|c| c.text)
}

pub const FALLBACK_SUMMARY_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub text: String,
    pub is_fallback: bool,
}

/// Asks the memory agent for a turn summary. A transport failure is retried
/// once; an empty or still-failing completion falls back to a response
/// prefix so the record is never blank.
pub fn summarize_turn(
    user_input: &str,
    response: &str,
    memory_agent: &dyn ChatProvider,
) -> SummaryOutcome {
    let prompt = SUMMARIZE_TEMPLATE
        .replace("{USER_INPUT}", user_input)
        .replace("{RESPONSE}", response);
    let completion = ask(memory_agent, prompt.clone()).or_else(|_| ask(memory_agent, prompt));
    match completion {
        Ok(text) if !text.trim().is_empty() => {
            SummaryOutcome { text: text.trim().to_string(), is_fallback: false }
        }
        _ => SummaryOutcome {
            text: response.chars().take(FALLBACK_SUMMARY_CHARS).collect(),
            is_fallback: true,
        },
    }
}

/// Asks the memory agent for note ops against the current ledger and parses
/// them. Provider failure yields no ops plus a warning.
pub fn derive_note_ops(
    summary: &str,
    existing_notes: &DaState,
    memory_agent: &dyn ChatProvider,
) -> (Vec<NoteOp>, Vec<String>) {
    let prompt = NOTE_OPS_TEMPLATE
        .replace("{SUMMARY}", summary)
        .replace("{NOTES}", &render_notes_block(existing_notes.active_notes()));
    match ask(memory_agent, prompt) {
        Ok(output) => parse_note_ops(&output, existing_notes),
        Err(e) => (Vec::new(), vec![format!("note-op derivation failed: {e}")]),
    }
}

/// Parses the op grammar. Unknown ids and malformed lines are dropped with
/// warnings; robustness beats strictness for memory maintenance.
pub fn parse_note_ops(output: &str, existing_notes: &DaState) -> (Vec<NoteOp>, Vec<String>) {
    let active: Vec<&NoteId> = existing_notes.active_notes().map(|n| &n.note_id).collect();
    let mut ops = Vec::new();
    let mut warnings = Vec::new();
    for raw in output.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(text) = line.strip_prefix("ADD:") {
            let text = text.trim();
            if text.is_empty() {
                warnings.push(format!("dropped ADD with empty content: {raw:?}"));
            } else {
                ops.push(NoteOp::Add(text.to_string()));
            }
        } else if let Some(rest) = line.strip_prefix("REVISE ") {
            match rest.split_once(':') {
                Some((id, text)) if !text.trim().is_empty() => {
                    let id = NoteId(id.trim().to_string());
                    if active.contains(&&id) {
                        ops.push(NoteOp::Revise(id, text.trim().to_string()));
                    } else {
                        warnings.push(format!("dropped REVISE of unknown note {id}"));
                    }
                }
                _ => warnings.push(format!("dropped malformed REVISE line: {raw:?}")),
            }
        } else if let Some(rest) = line.strip_prefix("RETIRE ") {
            let id_text = rest.trim();
            if id_text.is_empty() || id_text.contains(char::is_whitespace) {
                warnings.push(format!("dropped malformed RETIRE line: {raw:?}"));
            } else {
                let id = NoteId(id_text.to_string());
                if active.contains(&&id) {
                    ops.push(NoteOp::Retire(id));
                } else {
                    warnings.push(format!("dropped RETIRE of unknown note {id}"));
                }
            }
        } else {
            warnings.push(format!("dropped malformed note-op line: {raw:?}"));
        }
    }
    (ops, warnings)
}

/// Applies one turn's consolidation: appends the summary, runs the note ops
/// in order, advances the cursor. Turns must arrive strictly in order; the
/// session barrier makes anything else an orchestration bug.
pub fn apply_turn_update(
    state: &mut DaState,
    turn: &TurnRecord,
    ops: Vec<NoteOp>,
) -> Result<Vec<String>, DaError> {
    if turn.turn_id != state.update_cursor + 1 {
        return Err(DaError::OutOfOrderTurn {
            expected: state.update_cursor + 1,
            got: turn.turn_id,
        });
    }
    let mut warnings = Vec::new();
    state.turn_summaries.push((turn.turn_id, turn.summary.clone()));
    for op in ops {
        match op {
            NoteOp::Add(content) => {
                let note_id = state.mint_note_id();
                state.notes.push(Note {
                    note_id,
                    content,
                    status: NoteStatus::Active,
                    source_turns: vec![turn.turn_id],
                    revision_of: None,
                });
            }
            NoteOp::Revise(id, content) => match state.active_mut(&id) {
                Some(old) => {
                    old.status = NoteStatus::Revised;
                    let mut source_turns = old.source_turns.clone();
                    if !source_turns.contains(&turn.turn_id) {
                        source_turns.push(turn.turn_id);
                    }
                    let note_id = state.mint_note_id();
                    state.notes.push(Note {
                        note_id,
                        content,
                        status: NoteStatus::Active,
                        source_turns,
                        revision_of: Some(id),
                    });
                }
                None => warnings.push(format!("skipped REVISE of inactive note {id}")),
            },
            NoteOp::Retire(id) => match state.active_mut(&id) {
                Some(note) => note.status = NoteStatus::Retired,
                None => warnings.push(format!("skipped RETIRE of inactive note {id}")),
            },
        }
    }
    state.update_cursor = turn.turn_id;
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedProvider;
    use crate::core::{chain_seed, NoteStatus};
    use proptest::prelude::*;

    fn turn(id: TurnId, summary: &str) -> TurnRecord {
        TurnRecord {
            turn_id: id,
            user_input: format!("input {id}"),
            response: format!("response {id}"),
            summary: summary.to_string(),
            summary_is_fallback: false,
            turn_hash: chain_seed(),
            prompt_tokens: 0,
            output_tokens: 0,
            created_at: id,
        }
    }

    #[test]
    fn init_empty_retrieval_is_fully_empty() {
        let da = init_session_da(Vec::new());
        assert!(da.notes.is_empty());
        assert!(da.turn_summaries.is_empty());
        assert!(da.seeded_memories.is_empty());
        assert_eq!(da.update_cursor, 0);
    }

    #[test]
    fn init_keeps_seeds_but_not_notes() {
        let seeds = vec![
            SeededMemory { entry_id: "m1".into(), content: "a".into(), similarity: 0.9 },
            SeededMemory { entry_id: "m2".into(), content: "b".into(), similarity: 0.8 },
            SeededMemory { entry_id: "m3".into(), content: "c".into(), similarity: 0.7 },
        ];
        let da = init_session_da(seeds.clone());
        assert_eq!(da.seeded_memories, seeds);
        assert!(da.notes.is_empty());
    }

    #[test]
    fn summarize_uses_agent_output() {
        let agent = ScriptedProvider::new("S");
        let s = summarize_turn("in", "out", &agent);
        assert_eq!(s, SummaryOutcome { text: "S".into(), is_fallback: false });
    }

    #[test]
    fn summarize_empty_completion_falls_back() {
        let agent = ScriptedProvider::new("");
        let long_response: String = "x".repeat(500);
        let s = summarize_turn("in", &long_response, &agent);
        assert!(s.is_fallback);
        assert_eq!(s.text, "x".repeat(FALLBACK_SUMMARY_CHARS));
    }

    #[test]
    fn parse_single_add() {
        let da = DaState::default();
        let (ops, warnings) = parse_note_ops("ADD: rule involves parity", &da);
        assert_eq!(ops, vec![NoteOp::Add("rule involves parity".into())]);
        assert!(warnings.is_empty());
    }

    #[test]
    fn parse_revise_and_retire() {
        let mut da = DaState::default();
        apply_turn_update(
            &mut da,
            &turn(1, "s"),
            vec![NoteOp::Add("one".into()), NoteOp::Add("two".into())],
        )
        .unwrap();
        let (ops, warnings) =
            parse_note_ops("REVISE n1: rule is sum-parity\nRETIRE n2", &da);
        assert_eq!(
            ops,
            vec![
                NoteOp::Revise(NoteId("n1".into()), "rule is sum-parity".into()),
                NoteOp::Retire(NoteId("n2".into())),
            ]
        );
        assert!(warnings.is_empty());
    }

    #[test]
    fn parse_unknown_id_warns_and_drops() {
        let da = DaState::default();
        let (ops, warnings) = parse_note_ops("REVISE ghost: x", &da);
        assert!(ops.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn parse_malformed_lines_warn() {
        let da = DaState::default();
        let (ops, warnings) = parse_note_ops("do something\nADD:\n\n", &da);
        assert!(ops.is_empty());
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn apply_empty_ops_appends_summary_and_advances() {
        let mut da = DaState::default();
        apply_turn_update(&mut da, &turn(1, "first"), Vec::new()).unwrap();
        assert_eq!(da.turn_summaries, vec![(1, "first".to_string())]);
        assert_eq!(da.update_cursor, 1);
    }

    #[test]
    fn apply_out_of_order_errors() {
        let mut da = DaState::default();
        let err = apply_turn_update(&mut da, &turn(2, "s"), Vec::new()).unwrap_err();
        assert_eq!(err, DaError::OutOfOrderTurn { expected: 1, got: 2 });
    }

    #[test]
    fn revise_leaves_single_active_note_in_chain() {
        let mut da = DaState::default();
        apply_turn_update(&mut da, &turn(1, "s1"), vec![NoteOp::Add("v1".into())]).unwrap();
        apply_turn_update(
            &mut da,
            &turn(2, "s2"),
            vec![NoteOp::Revise(NoteId("n1".into()), "v2".into())],
        )
        .unwrap();
        let n1 = da.notes.iter().find(|n| n.note_id.0 == "n1").unwrap();
        let n2 = da.notes.iter().find(|n| n.note_id.0 == "n2").unwrap();
        assert_eq!(n1.status, NoteStatus::Revised);
        assert_eq!(n2.status, NoteStatus::Active);
        assert_eq!(n2.revision_of, Some(NoteId("n1".into())));
        assert_eq!(da.active_notes().count(), 1);
    }

    #[test]
    fn ten_sequential_updates_cover_all_turns() {
        let mut da = DaState::default();
        for id in 1..=10 {
            apply_turn_update(&mut da, &turn(id, &format!("s{id}")), Vec::new()).unwrap();
        }
        let ids: Vec<TurnId> = da.turn_summaries.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, (1..=10).collect::<Vec<_>>());
    }

    /// Follows revision_of links to the chain root.
    fn chain_root(da: &DaState, note: &Note) -> NoteId {
        let mut current = note.note_id.clone();
        let mut hops = 0;
        while let Some(prev) = da
            .notes
            .iter()
            .find(|n| n.note_id == current)
            .and_then(|n| n.revision_of.clone())
        {
            current = prev;
            hops += 1;
            assert!(hops <= da.notes.len(), "revision cycle detected");
        }
        current
    }

    proptest! {
        #[test]
        fn note_chains_stay_acyclic_with_one_active_head(
            steps in prop::collection::vec((0u8..3, 0usize..8, "[a-z]{1,6}"), 1..40)
        ) {
            let mut da = DaState::default();
            for (i, (kind, pick, text)) in steps.into_iter().enumerate() {
                let active: Vec<NoteId> =
                    da.active_notes().map(|n| n.note_id.clone()).collect();
                let op = match kind {
                    0 => NoteOp::Add(text),
                    1 if !active.is_empty() =>
                        NoteOp::Revise(active[pick % active.len()].clone(), text),
                    2 if !active.is_empty() =>
                        NoteOp::Retire(active[pick % active.len()].clone()),
                    _ => NoteOp::Add(text),
                };
                apply_turn_update(&mut da, &turn(i as TurnId + 1, "s"), vec![op]).unwrap();
            }
            // ids unique
            let mut ids: Vec<&NoteId> = da.notes.iter().map(|n| &n.note_id).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), da.notes.len());
            // at most one active note per revision chain (walks also prove acyclicity)
            let mut active_roots = Vec::new();
            for note in da.active_notes() {
                let root = chain_root(&da, note);
                prop_assert!(!active_roots.contains(&root), "two active notes share a chain");
                active_roots.push(root);
            }
            // summary per turn, in order
            let got: Vec<TurnId> = da.turn_summaries.iter().map(|(id, _)| *id).collect();
            let want: Vec<TurnId> = (1..=da.update_cursor).collect();
            prop_assert_eq!(got, want);
        }
    }
}
