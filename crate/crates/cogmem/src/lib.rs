//! CogMem — a layered memory engine for multi-turn reasoning agents.
//!
//! The engine gives chat-style agents three cooperating memory layers:
//!
//! - **Focus of Attention** ([`foa`]): a token-bounded context window
//!   rebuilt from scratch every turn, with a two-pass sufficiency protocol
//!   for expanding specific past turns on demand.
//! - **Direct-Access memory** ([`da`]): session-scoped notes and per-turn
//!   summaries maintained by a lightweight memory agent.
//! - **Long-Term Memory** ([`ltm`]): a persistent, vector-indexed store of
//!   distilled strategies that seeds new sessions and absorbs insights when
//!   sessions expire.
//!
//! The [`session`] module ties the layers together: request resolution
//! (reuse / extend / inherit / fresh), reference-counted turn storage, and
//! event-triggered garbage collection with a hard per-event work bound.
//! [`harness`] contains a deterministic rule-discovery benchmark used to
//! exercise the whole stack without any real LLM.

pub mod agents;
pub mod core;
pub mod da;
pub mod events;
pub mod foa;
pub mod harness;
pub mod ltm;
pub mod session;
pub mod vector_index;

pub use crate::core::{Message, Role, SessionId, TokenBudget, TurnId};
pub use agents::{ChatProvider, HttpProvider, ScriptedProvider};
pub use session::{EngineConfig, SessionManager};
