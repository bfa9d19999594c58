//! Shared domain types, canonical message hashing, and token estimation.
//!
//! Everything here is an immutable value type; the rest of the engine is
//! built on this vocabulary.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

/// Monotone logical timestamp. The session manager owns the counter; wall
/// clocks never enter the engine, which keeps TTL and GC behavior
/// reproducible.
pub type LogicalTime = u64;

/// 1-based turn index within a session.
pub type TurnId = u64;

/// Opaque session identifier, allocated by the session manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl SessionId {
    pub fn parse(text: &str) -> Option<Self> {
        text.strip_prefix('s').and_then(|n| n.parse().ok()).map(SessionId)
    }
}

impl Serialize for SessionId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SessionId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        SessionId::parse(&s).ok_or_else(|| serde::de::Error::custom("invalid session id"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoreError {
    #[error("message content is empty after trimming")]
    EmptyMessage,
}

/// Chat role. Only the two dialogue roles exist in the engine; the wire
/// client additionally understands `system` on the protocol level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    /// Byte tag mixed into the hash chain.
    fn chain_byte(self) -> u8 {
        match self {
            Role::User => 0,
            Role::Assistant => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One chat message, mirroring the chat-completions wire shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self, CoreError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(CoreError::EmptyMessage);
        }
        Ok(Self { role, content })
    }

    pub fn user(content: impl Into<String>) -> Result<Self, CoreError> {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Result<Self, CoreError> {
        Self::new(Role::Assistant, content)
    }
}

/// 256-bit chain digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainDigest(pub [u8; 32]);

impl ChainDigest {
    pub fn to_hex(self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            use fmt::Write;
            write!(s, "{b:02x}").unwrap();
        }
        s
    }

    pub fn from_hex(hex: &str) -> Option<Self> {
        if hex.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            out[i] = ((hi << 4) | lo) as u8;
        }
        Some(Self(out))
    }
}

impl fmt::Debug for ChainDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainDigest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ChainDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ChainDigest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ChainDigest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ChainDigest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid digest hex"))
    }
}

/// Name of the digest algorithm, recorded in snapshot headers so a loader
/// can refuse files hashed under a different construction.
pub const HASH_ALGORITHM: &str = "sha-256";

/// Domain-separation string the empty-dialogue seed digest is derived from.
pub const CHAIN_SEED_DOMAIN: &str = "cogmem.chain.seed.v1";

/// Seed digest of the empty dialogue: `SHA-256(CHAIN_SEED_DOMAIN)`.
pub fn chain_seed() -> ChainDigest {
    static SEED: std::sync::OnceLock<ChainDigest> = std::sync::OnceLock::new();
    *SEED.get_or_init(|| {
        let mut h = Sha256::new();
        h.update(CHAIN_SEED_DOMAIN.as_bytes());
        ChainDigest(h.finalize().into())
    })
}

/// Trims and collapses internal whitespace runs to single spaces. Case is
/// preserved; whitespace noise must not break prefix matching.
pub fn canonical(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, word) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Extends a chain digest by one message:
/// `SHA-256(prev || role_byte || len_be64(canonical) || canonical_bytes)`.
pub fn hash_chain(prev: &ChainDigest, message: &Message) -> ChainDigest {
    let canon = canonical(&message.content);
    let mut h = Sha256::new();
    h.update(prev.0);
    h.update([message.role.chain_byte()]);
    h.update((canon.len() as u64).to_be_bytes());
    h.update(canon.as_bytes());
    ChainDigest(h.finalize().into())
}

/// All prefix digests `[h_1 .. h_n]` of a dialogue, folding [`hash_chain`]
/// from the seed.
pub fn chain_of(messages: &[Message]) -> Vec<ChainDigest> {
    let mut out = Vec::with_capacity(messages.len());
    let mut prev = chain_seed();
    for m in messages {
        prev = hash_chain(&prev, m);
        out.push(prev);
    }
    out
}

/// Deterministic token estimate: `ceil(chars / 4)` over Unicode scalars.
/// Close enough to subword tokenizers for budget enforcement; a real
/// tokenizer can be slotted in behind the same signature.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// One completed dialogue exchange plus its consolidation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_id: TurnId,
    pub user_input: String,
    pub response: String,
    /// Memory-agent summary; non-empty once the post-turn update completed.
    pub summary: String,
    /// Set when the summary came from the truncation fallback rather than
    /// the memory agent.
    pub summary_is_fallback: bool,
    /// Chain digest of the dialogue prefix ending at this turn's response.
    pub turn_hash: ChainDigest,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub created_at: LogicalTime,
}

/// Identifier of a Direct-Access note. Short on purpose so the memory agent
/// can name it in revise/retire ops.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoteId(pub String);

impl fmt::Display for NoteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoteStatus {
    Active,
    Revised,
    Retired,
}

/// A Direct-Access memory item: a plan or intermediate conclusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: NoteId,
    pub content: String,
    pub status: NoteStatus,
    /// Turns that contributed to this note. Empty only for notes seeded
    /// from long-term memory at session start.
    pub source_turns: Vec<TurnId>,
    /// Previous note in the revision chain, if this note supersedes one.
    pub revision_of: Option<NoteId>,
}

/// Hard cap on assembled context windows, in estimated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_window_tokens: u64,
}

impl TokenBudget {
    pub fn new(max_window_tokens: u64) -> Self {
        assert!(max_window_tokens > 0, "budget must be positive");
        Self { max_window_tokens }
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self { max_window_tokens: 2048 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn estimate_empty_is_zero() {
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn estimate_exact_block() {
        assert_eq!(estimate_tokens("abcd"), 1);
    }

    #[test]
    fn estimate_partial_block_rounds_up() {
        // ceil(5 / 4) = 2
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn estimate_counts_scalars_not_bytes() {
        assert_eq!(estimate_tokens("ééé"), 1);
    }

    #[test]
    fn canonical_collapses_whitespace() {
        assert_eq!(canonical("hi   there "), "hi there");
        assert_eq!(canonical("\t a \n b "), "a b");
    }

    #[test]
    fn seed_is_hash_of_domain_string() {
        let mut h = Sha256::new();
        h.update(CHAIN_SEED_DOMAIN.as_bytes());
        assert_eq!(chain_seed(), ChainDigest(h.finalize().into()));
    }

    #[test]
    fn empty_chain_is_empty() {
        assert_eq!(chain_of(&[]), Vec::new());
    }

    #[test]
    fn single_message_chain_has_length_one() {
        let m = Message::user("a").unwrap();
        assert_eq!(chain_of(&[m]).len(), 1);
    }

    #[test]
    fn chain_matches_scratch_recompute() {
        let msgs = vec![Message::user("a").unwrap(), Message::assistant("b").unwrap()];
        let folded = chain_of(&msgs);
        let mut prev = chain_seed();
        for (i, m) in msgs.iter().enumerate() {
            prev = hash_chain(&prev, m);
            assert_eq!(folded[i], prev);
        }
    }

    #[test]
    fn whitespace_variants_hash_identically() {
        let a = Message::user("hi   there ").unwrap();
        let b = Message::user(" hi there").unwrap();
        assert_eq!(hash_chain(&chain_seed(), &a), hash_chain(&chain_seed(), &b));
    }

    #[test]
    fn role_affects_digest() {
        let u = Message::user("x").unwrap();
        let a = Message::assistant("x").unwrap();
        assert_ne!(hash_chain(&chain_seed(), &u), hash_chain(&chain_seed(), &a));
    }

    #[test]
    fn empty_message_rejected() {
        assert_eq!(Message::user("   "), Err(CoreError::EmptyMessage));
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = chain_seed();
        assert_eq!(ChainDigest::from_hex(&d.to_hex()), Some(d));
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        ("[a-z ]{1,12}", prop::bool::ANY).prop_filter_map("non-blank", |(s, user)| {
            let role = if user { Role::User } else { Role::Assistant };
            Message::new(role, s).ok()
        })
    }

    proptest! {
        #[test]
        fn prefix_property(msgs in prop::collection::vec(arb_message(), 0..20), split in 0usize..20) {
            let k = split.min(msgs.len());
            let full = chain_of(&msgs);
            let prefix = chain_of(&msgs[..k]);
            prop_assert_eq!(&full[..k], &prefix[..]);
        }

        #[test]
        fn canonical_idempotent(s in "\\PC{0,64}") {
            prop_assert_eq!(canonical(&canonical(&s)), canonical(&s));
        }

        #[test]
        fn estimate_subadditive(a in "\\PC{0,64}", b in "\\PC{0,64}") {
            let joined = format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) <= estimate_tokens(&a) + estimate_tokens(&b) + 1);
            prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&a).max(estimate_tokens(&b)));
        }
    }
}
