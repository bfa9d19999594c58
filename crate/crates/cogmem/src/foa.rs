//! Focus of Attention: per-turn bounded context reconstruction and the
//! two-pass sufficiency protocol.
//!
//! Each turn the engine assembles a first context window from the session's
//! working memory. The reasoning agent either answers (`SUFFICIENT`) or
//! names turns it must see in full (`NEED_TURNS`); at most one refinement
//! pass is allowed, so latency stays bounded. Windows never exceed the
//! token budget: history summaries evict oldest-first, then the weakest
//! long-term memories. Notes, the preamble, and the user input are never
//! evicted — if they alone exceed the budget the assembly fails loudly
//! rather than silently truncating state.

use crate::agents::{ChatProvider, CompletionParams};
use crate::core::{estimate_tokens, Message, SessionId, TokenBudget, TurnId, TurnRecord};
use crate::da::{render_note_line, SeededMemory};
use crate::events::{Event, EventLog};
use crate::core::Note;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FoaError {
    #[error("context exceeds budget even after eviction: needs {required} of {limit} tokens")]
    BudgetExceeded { required: u64, limit: u64 },
    #[error("reasoning agent violated the sufficiency protocol: {raw:?}")]
    ProtocolViolation { raw: String },
    #[error("turn failed: {reason}")]
    TurnFailed { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentTag {
    Preamble,
    LtmMemory,
    Note,
    HistorySummary,
    ExpandedTurn,
    UserInput,
}

/// One ordered piece of an assembled window. `body` is exactly the text the
/// segment contributes to the rendered prompt (minus the joining newline).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub tag: SegmentTag,
    pub turn_id: Option<TurnId>,
    pub body: String,
    /// Retrieval similarity, present on `LtmMemory` segments; drives the
    /// weakest-hit eviction order.
    pub similarity: Option<f64>,
}

impl Segment {
    fn rendered(&self) -> String {
        format!("{}\n", self.body)
    }

    fn token_cost(&self) -> u64 {
        estimate_tokens(&self.rendered())
    }
}

/// The ordered, token-budgeted prompt for one reasoning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub kind: WindowKind,
    pub segments: Vec<Segment>,
    pub token_count: u64,
}

impl ContextWindow {
    fn recount(&mut self) {
        self.token_count = self.segments.iter().map(Segment::token_cost).sum();
    }

    pub fn segments_tagged(&self, tag: SegmentTag) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.tag == tag)
    }
}

/// The reasoning agent's structured reply to a context window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SufficiencyVerdict {
    Sufficient(String),
    NeedTurns(Vec<TurnId>),
}

/// Immutable snapshot of session memory taken at the ordering barrier.
#[derive(Debug, Clone, Default)]
pub struct SessionView {
    /// Active notes only.
    pub notes: Vec<Note>,
    /// (turn id, summary), ascending.
    pub turn_summaries: Vec<(TurnId, String)>,
    /// Long-term memories retrieved at session start, similarity descending.
    pub ltm_hits: Vec<SeededMemory>,
}

/// First-pass prompt template. The text before the first placeholder is the
/// preamble segment; each placeholder receives its section's rendered
/// segments.
pub const FIRST_WINDOW_TEMPLATE: &str = "\
You are the reasoning agent. The context below is your entire state: \
long-term memories, session notes, summarized dialogue history with turn \
identifiers, and the new user input.
Reply with exactly one of:
SUFFICIENT
<your answer>
or, if you must see specific past turns in full before answering:
NEED_TURNS: <comma-separated turn numbers>
You may request turns only once per turn; after they are expanded you must \
answer.
{LTM_MEMORIES}{NOTES}{HISTORY}{USER_INPUT}";

/// Second-pass template: identical head, with requested turns expanded in
/// place of their summaries.
pub const SECOND_WINDOW_TEMPLATE: &str = "\
You are the reasoning agent. The context below is your entire state: \
long-term memories, session notes, summarized dialogue history with turn \
identifiers, and the new user input.
Reply with exactly one of:
SUFFICIENT
<your answer>
or, if you must see specific past turns in full before answering:
NEED_TURNS: <comma-separated turn numbers>
You may request turns only once per turn; after they are expanded you must \
answer.
{LTM_MEMORIES}{NOTES}{HISTORY}{EXPANDED_TURNS}{USER_INPUT}";

fn preamble_body() -> &'static str {
    let head = FIRST_WINDOW_TEMPLATE
        .split("{LTM_MEMORIES}")
        .next()
        .expect("template has placeholder");
    head.strip_suffix('\n').unwrap_or(head)
}

fn history_body(turn_id: TurnId, summary: &str) -> String {
    format!("[turn {turn_id}] {summary}")
}

fn expanded_body(turn: &TurnRecord) -> String {
    format!(
        "[turn {} expanded]\nuser: {}\nassistant: {}",
        turn.turn_id, turn.user_input, turn.response
    )
}

fn memory_body(hit: &SeededMemory) -> String {
    format!("[memory] {}", hit.content)
}

fn user_input_body(input: &str) -> String {
    format!("[user] {input}")
}

/// Renders a window to the exact prompt string sent to the reasoning agent:
/// the concatenation of each segment's body plus a newline, which is also
/// what the template substitution produces.
pub fn render_window(window: &ContextWindow) -> String {
    window.segments.iter().map(Segment::rendered).collect()
}

/// Evicts until the window fits the budget. `protected_history` holds turn
/// ids whose summaries must not be dropped (second-pass requested set).
fn evict_to_fit(
    window: &mut ContextWindow,
    budget: TokenBudget,
    allow_expanded_eviction: bool,
) -> Result<(), FoaError> {
    window.recount();
    let limit = budget.max_window_tokens;
    while window.token_count > limit {
        // oldest history summary first
        let victim = window
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.tag == SegmentTag::HistorySummary)
            .min_by_key(|(_, s)| s.turn_id)
            .map(|(i, _)| i);
        // then the weakest long-term memory (later position loses ties)
        let victim = victim.or_else(|| {
            window
                .segments
                .iter()
                .enumerate()
                .filter(|(_, s)| s.tag == SegmentTag::LtmMemory)
                .min_by(|(ai, a), (bi, b)| {
                    a.similarity
                        .partial_cmp(&b.similarity)
                        .unwrap()
                        .then(bi.cmp(ai))
                })
                .map(|(i, _)| i)
        });
        // expanded turns go last: requested detail is the point of pass two
        let victim = victim.or_else(|| {
            if !allow_expanded_eviction {
                return None;
            }
            window
                .segments
                .iter()
                .enumerate()
                .filter(|(_, s)| s.tag == SegmentTag::ExpandedTurn)
                .min_by_key(|(_, s)| s.turn_id)
                .map(|(i, _)| i)
        });
        match victim {
            Some(i) => {
                window.segments.remove(i);
                window.recount();
            }
            None => {
                return Err(FoaError::BudgetExceeded { required: window.token_count, limit });
            }
        }
    }
    Ok(())
}

/// Builds the First Context Window: preamble, retrieved memories, all
/// active notes, one summary per completed turn ascending, then the user
/// input.
pub fn assemble_first_window(
    view: &SessionView,
    user_input: &str,
    budget: TokenBudget,
) -> Result<ContextWindow, FoaError> {
    debug_assert!(!user_input.trim().is_empty(), "user input must be non-empty");
    let mut segments = Vec::new();
    segments.push(Segment {
        tag: SegmentTag::Preamble,
        turn_id: None,
        body: preamble_body().to_string(),
        similarity: None,
    });
    for hit in &view.ltm_hits {
        segments.push(Segment {
            tag: SegmentTag::LtmMemory,
            turn_id: None,
            body: memory_body(hit),
            similarity: Some(hit.similarity),
        });
    }
    for note in &view.notes {
        segments.push(Segment {
            tag: SegmentTag::Note,
            turn_id: None,
            body: render_note_line(note),
            similarity: None,
        });
    }
    let mut summaries = view.turn_summaries.clone();
    summaries.sort_by_key(|(id, _)| *id);
    for (turn_id, summary) in &summaries {
        segments.push(Segment {
            tag: SegmentTag::HistorySummary,
            turn_id: Some(*turn_id),
            body: history_body(*turn_id, summary),
            similarity: None,
        });
    }
    segments.push(Segment {
        tag: SegmentTag::UserInput,
        turn_id: None,
        body: user_input_body(user_input),
        similarity: None,
    });
    let mut window = ContextWindow { kind: WindowKind::First, segments, token_count: 0 };
    evict_to_fit(&mut window, budget, false)?;
    Ok(window)
}

/// Parses the sufficiency grammar: a first non-blank line of exactly
/// `SUFFICIENT` (remainder is the answer) or `NEED_TURNS: <ids>`.
pub fn parse_sufficiency(agent_output: &str) -> Result<SufficiencyVerdict, FoaError> {
    let violation = || FoaError::ProtocolViolation { raw: agent_output.to_string() };
    let mut rest = agent_output;
    loop {
        let (line, tail) = match rest.find('\n') {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => (rest, ""),
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if tail.is_empty() {
                return Err(violation());
            }
            rest = tail;
            continue;
        }
        if trimmed == "SUFFICIENT" {
            let answer = tail.trim();
            if answer.is_empty() {
                return Err(violation());
            }
            return Ok(SufficiencyVerdict::Sufficient(answer.to_string()));
        }
        if let Some(id_list) = trimmed.strip_prefix("NEED_TURNS:") {
            let mut ids: Vec<TurnId> = Vec::new();
            for part in id_list.split(',') {
                let part = part.trim();
                let id: TurnId = part.parse().map_err(|_| violation())?;
                if id == 0 {
                    return Err(violation());
                }
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            if ids.is_empty() {
                return Err(violation());
            }
            return Ok(SufficiencyVerdict::NeedTurns(ids));
        }
        return Err(violation());
    }
}

/// Builds the Second Context Window from the first: each requested turn's
/// summary is replaced by the full exchange. Requested ids with no stored
/// turn are skipped and reported as warnings; if none resolve, the content
/// matches the first window re-tagged as second and reasoning proceeds.
pub fn assemble_second_window(
    first: &ContextWindow,
    full_turns: &[TurnRecord],
    requested_ids: &[TurnId],
    budget: TokenBudget,
) -> Result<(ContextWindow, Vec<String>), FoaError> {
    assert_eq!(first.kind, WindowKind::First, "second window builds on a first window");
    let mut warnings = Vec::new();
    let mut expansions: Vec<&TurnRecord> = Vec::new();
    for id in requested_ids {
        match full_turns.iter().find(|t| t.turn_id == *id) {
            Some(turn) if !expansions.iter().any(|t| t.turn_id == *id) => expansions.push(turn),
            Some(_) => {}
            None => warnings.push(format!("requested turn {id} is not stored; skipped")),
        }
    }
    expansions.sort_by_key(|t| t.turn_id);
    let expanded_ids: Vec<TurnId> = expansions.iter().map(|t| t.turn_id).collect();

    let mut segments: Vec<Segment> = first
        .segments
        .iter()
        .filter(|s| {
            !(s.tag == SegmentTag::HistorySummary
                && s.turn_id.is_some_and(|id| expanded_ids.contains(&id)))
        })
        .cloned()
        .collect();
    let insert_at = segments
        .iter()
        .position(|s| s.tag == SegmentTag::UserInput)
        .unwrap_or(segments.len());
    for (offset, turn) in expansions.iter().enumerate() {
        segments.insert(
            insert_at + offset,
            Segment {
                tag: SegmentTag::ExpandedTurn,
                turn_id: Some(turn.turn_id),
                body: expanded_body(turn),
                similarity: None,
            },
        );
    }
    let mut window = ContextWindow { kind: WindowKind::Second, segments, token_count: 0 };
    evict_to_fit(&mut window, budget, true)?;
    Ok((window, warnings))
}

/// Outcome of one completed dialogue turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub answer: String,
    /// 1 when the first window sufficed, 2 when a refinement pass ran.
    pub windows_used: u8,
    /// Sum of token_count over every window actually sent (retries resend).
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub warnings: Vec<String>,
}

struct TokenAccount {
    prompt_tokens: u64,
    output_tokens: u64,
}

/// Sends one window, parsing the reply with a single retry on a protocol
/// violation. Transport failures fail the turn.
fn send_and_parse(
    window: &ContextWindow,
    provider: &dyn ChatProvider,
    account: &mut TokenAccount,
) -> Result<SufficiencyVerdict, FoaError> {
    let prompt = render_window(window);
    let message = Message::user(prompt).expect("rendered window is non-empty");
    let mut last_violation = None;
    for _attempt in 0..2 {
        let completion = provider
            .complete(std::slice::from_ref(&message), &CompletionParams::default())
            .map_err(|e| FoaError::TurnFailed { reason: format!("reasoning provider: {e}") })?;
        account.prompt_tokens += window.token_count;
        account.output_tokens += completion.output_tokens;
        match parse_sufficiency(&completion.text) {
            Ok(verdict) => return Ok(verdict),
            Err(violation) => last_violation = Some(violation),
        }
    }
    let raw = match last_violation {
        Some(FoaError::ProtocolViolation { raw }) => raw,
        _ => String::new(),
    };
    Err(FoaError::TurnFailed { reason: format!("protocol violation after retry: {raw:?}") })
}

/// Drives one full turn: first window, sufficiency check, optional single
/// refinement. A second `NEED_TURNS` is a protocol violation — the paper's
/// turn structure allows exactly one refinement — and fails the turn
/// without touching session state.
#[allow(clippy::too_many_arguments)]
pub fn run_turn(
    session_id: SessionId,
    turn_id: TurnId,
    view: &SessionView,
    full_turns: &[TurnRecord],
    user_input: &str,
    reasoning_agent: &dyn ChatProvider,
    budget: TokenBudget,
    events: &EventLog,
) -> Result<TurnOutcome, FoaError> {
    let mut account = TokenAccount { prompt_tokens: 0, output_tokens: 0 };
    let first = assemble_first_window(view, user_input, budget)?;
    events.emit(Event::WindowAssembled {
        session: session_id,
        turn: turn_id,
        kind: WindowKind::First,
        token_count: first.token_count,
    });
    let verdict = send_and_parse(&first, reasoning_agent, &mut account)?;
    let need = match verdict {
        SufficiencyVerdict::Sufficient(answer) => {
            return Ok(TurnOutcome {
                answer,
                windows_used: 1,
                prompt_tokens: account.prompt_tokens,
                output_tokens: account.output_tokens,
                warnings: Vec::new(),
            });
        }
        SufficiencyVerdict::NeedTurns(ids) => ids,
    };
    let (second, warnings) = assemble_second_window(&first, full_turns, &need, budget)?;
    events.emit(Event::WindowAssembled {
        session: session_id,
        turn: turn_id,
        kind: WindowKind::Second,
        token_count: second.token_count,
    });
    match send_and_parse(&second, reasoning_agent, &mut account)? {
        SufficiencyVerdict::Sufficient(answer) => Ok(TurnOutcome {
            answer,
            windows_used: 2,
            prompt_tokens: account.prompt_tokens,
            output_tokens: account.output_tokens,
            warnings,
        }),
        SufficiencyVerdict::NeedTurns(_) => Err(FoaError::TurnFailed {
            reason: "reasoning agent requested turns twice; one refinement pass allowed".into(),
        }),
    }
}
