//! Provider abstraction for the reasoning and memory agents.
//!
//! Two implementations ship: an OpenAI-compatible wire client for real
//! deployments, and a deterministic scripted provider that doubles as the
//! test oracle for all orchestration behavior. The two agent roles are
//! always configured independently so a heavyweight reasoner can pair with
//! a lightweight memory model.

use crate::core::{estimate_tokens, Message};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: status {status}: {body_excerpt}")]
    Transport { status: u16, body_excerpt: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("network error: {0}")]
    Network(String),
}

/// Decoding parameters. Defaults are deterministic on purpose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_output_tokens: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// A chat-completion backend. Implementations must be total: every call
/// returns text or a typed transport error, never hangs the turn pipeline.
pub trait ChatProvider: Send + Sync {
    fn complete(
        &self,
        messages: &[Message],
        params: &CompletionParams,
    ) -> Result<Completion, ProviderError>;
}

/// Renders messages to one role-prefixed prompt string, the canonical form
/// scripted providers match against and record.
pub fn render_prompt(messages: &[Message]) -> String {
    let mut out = String::new();
    for (i, m) in messages.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(m.role.as_str());
        out.push_str(": ");
        out.push_str(&m.content);
    }
    out
}

/// Append-only log of every (prompt, response) pair a provider served.
/// Cloning shares the log; the engine's boundedness and purity assertions
/// read it back.
#[derive(Clone, Default)]
pub struct Transcript {
    entries: Arc<Mutex<Vec<(String, String)>>>,
    calls: Arc<AtomicU64>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, prompt: String, response: String) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.entries.lock().push((prompt, response));
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        self.entries.lock().clone()
    }
}

#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    Exact(String),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Exact(s) => prompt == s,
        }
    }
}

/// Deterministic pattern → response provider. First matching rule wins;
/// identical call sequences yield identical transcripts.
pub struct ScriptedProvider {
    rules: Vec<(Matcher, String)>,
    default_response: String,
    transcript: Transcript,
}

impl ScriptedProvider {
    pub fn new(default_response: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default_response: default_response.into(),
            transcript: Transcript::new(),
        }
    }

    /// Adds a substring-match rule. Rules fire in insertion order.
    pub fn rule(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((Matcher::Substring(needle.into()), response.into()));
        self
    }

    pub fn exact_rule(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((Matcher::Exact(prompt.into()), response.into()));
        self
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(
        &self,
        messages: &[Message],
        _params: &CompletionParams,
    ) -> Result<Completion, ProviderError> {
        let prompt = render_prompt(messages);
        let response = self
            .rules
            .iter()
            .find(|(m, _)| m.matches(&prompt))
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| self.default_response.clone());
        self.transcript.record(prompt.clone(), response.clone());
        Ok(Completion {
            prompt_tokens: estimate_tokens(&prompt),
            output_tokens: estimate_tokens(&response),
            text: response,
        })
    }
}

// Chat-completions wire shapes. Role strings on the wire are exactly
// "user" / "assistant" / "system".

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireMessage {
    role: String,
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: Option<WireMessage>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// POSTs `{endpoint}/v1/chat/completions` and extracts
/// `choices[0].message.content` plus usage counts.
pub fn http_complete(
    endpoint: &str,
    api_key: Option<&str>,
    model_name: &str,
    messages: &[Message],
    params: &CompletionParams,
) -> Result<Completion, ProviderError> {
    let body = WireRequest {
        model: model_name,
        messages: messages
            .iter()
            .map(|m| WireMessage { role: m.role.as_str().to_string(), content: m.content.clone() })
            .collect(),
        temperature: params.temperature,
        max_tokens: params.max_output_tokens,
    };
    let url = format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'));
    let client = reqwest::blocking::Client::new();
    let mut req = client.post(&url).json(&body);
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let resp = req.send().map_err(|e| ProviderError::Network(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| ProviderError::Network(e.to_string()))?;
    if !(200..300).contains(&status) {
        let body_excerpt: String = text.chars().take(200).collect();
        return Err(ProviderError::Transport { status, body_excerpt });
    }
    parse_wire_response(&text)
}

fn parse_wire_response(body: &str) -> Result<Completion, ProviderError> {
    let parsed: WireResponse = serde_json::from_str(body)
        .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::MalformedResponse("empty choices".into()))?;
    let message = choice
        .message
        .ok_or_else(|| ProviderError::MalformedResponse("choice missing message".into()))?;
    let usage = parsed
        .usage
        .ok_or_else(|| ProviderError::MalformedResponse("missing usage".into()))?;
    let prompt_tokens = usage
        .prompt_tokens
        .ok_or_else(|| ProviderError::MalformedResponse("missing usage.prompt_tokens".into()))?;
    let output_tokens = usage.completion_tokens.ok_or_else(|| {
        ProviderError::MalformedResponse("missing usage.completion_tokens".into())
    })?;
    Ok(Completion { text: message.content, prompt_tokens, output_tokens })
}

/// OpenAI-compatible provider bound to one endpoint and model. The API key
/// comes from the caller; the CLI reads it from the `COGMEM_API_KEY`
/// environment variable.
pub struct HttpProvider {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub params: CompletionParams,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            params: CompletionParams::default(),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn complete(
        &self,
        messages: &[Message],
        params: &CompletionParams,
    ) -> Result<Completion, ProviderError> {
        http_complete(&self.endpoint, self.api_key.as_deref(), &self.model, messages, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn msg(content: &str) -> Vec<Message> {
        vec![Message::user(content).unwrap()]
    }

    #[test]
    fn default_response_when_no_rule_matches() {
        let p = ScriptedProvider::new("fallback");
        let c = p.complete(&msg("hello"), &CompletionParams::default()).unwrap();
        assert_eq!(c.text, "fallback");
    }

    #[test]
    fn first_matching_rule_wins() {
        let p = ScriptedProvider::new("d").rule("hel", "first").rule("hello", "second");
        let c = p.complete(&msg("hello"), &CompletionParams::default()).unwrap();
        assert_eq!(c.text, "first");
    }

    #[test]
    fn exact_rule_requires_full_prompt() {
        let p = ScriptedProvider::new("d").exact_rule("user: hi", "yes");
        assert_eq!(p.complete(&msg("hi"), &CompletionParams::default()).unwrap().text, "yes");
        assert_eq!(p.complete(&msg("hi!"), &CompletionParams::default()).unwrap().text, "d");
    }

    #[test]
    fn transcript_is_deterministic() {
        let run = || {
            let p = ScriptedProvider::new("d").rule("a", "ra");
            for text in ["a one", "b two", "a three"] {
                p.complete(&msg(text), &CompletionParams::default()).unwrap();
            }
            p.transcript().entries()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn token_accounting_uses_estimator() {
        let p = ScriptedProvider::new("12345678");
        let c = p.complete(&msg("abcd"), &CompletionParams::default()).unwrap();
        // prompt renders as "user: abcd" (10 chars)
        assert_eq!(c.prompt_tokens, estimate_tokens("user: abcd"));
        assert_eq!(c.output_tokens, 2);
    }

    #[test]
    fn render_prompt_role_prefixes() {
        let ms = vec![Message::user("q").unwrap(), Message::assistant("a").unwrap()];
        assert_eq!(render_prompt(&ms), "user: q\nassistant: a");
    }

    /// One-shot HTTP stub: accepts a single connection, ignores the request
    /// body, answers with the given status line and payload.
    fn spawn_stub(status_line: &'static str, body: String) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let mut read = Vec::new();
            loop {
                let n = stream.read(&mut buf).unwrap();
                read.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&read);
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let content_len = text
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if read.len() >= head_end + 4 + content_len {
                        break;
                    }
                }
            }
            let resp = format!(
                "HTTP/1.1 {status_line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(resp.as_bytes()).unwrap();
        });
        format!("http://{addr}")
    }

    #[test]
    fn http_complete_parses_valid_fixture() {
        let fixture = serde_json::json!({
            "id": "chatcmpl-1",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": "SUFFICIENT\nok"}}],
            "usage": {"prompt_tokens": 42, "completion_tokens": 5}
        });
        let endpoint = spawn_stub("200 OK", fixture.to_string());
        let c = http_complete(&endpoint, Some("k"), "test-model", &msg("hi"), &CompletionParams::default())
            .unwrap();
        assert_eq!(c.text, "SUFFICIENT\nok");
        assert_eq!(c.prompt_tokens, 42);
        assert_eq!(c.output_tokens, 5);
    }

    #[test]
    fn http_complete_empty_choices_is_malformed() {
        let fixture = serde_json::json!({"choices": [], "usage": {"prompt_tokens": 1, "completion_tokens": 1}});
        let endpoint = spawn_stub("200 OK", fixture.to_string());
        let err = http_complete(&endpoint, None, "m", &msg("hi"), &CompletionParams::default())
            .unwrap_err();
        assert!(matches!(err, ProviderError::MalformedResponse(_)), "{err}");
    }

    #[test]
    fn http_complete_surfaces_429() {
        let endpoint = spawn_stub("429 Too Many Requests", "{\"error\":\"rate\"}".to_string());
        let err = http_complete(&endpoint, None, "m", &msg("hi"), &CompletionParams::default())
            .unwrap_err();
        match err {
            ProviderError::Transport { status, .. } => assert_eq!(status, 429),
            other => panic!("expected transport error, got {other}"),
        }
    }
}
