//! Text-completion and embedding providers. Episodes talk to a
//! [`CompletionProvider`]: either the live HTTP client for
//! chat-completion-compatible services, a scripted provider replaying
//! canned responses, or the hash provider that derives deterministic,
//! well-formed responses from the prompt itself.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("scripted provider queue exhausted")]
    ScriptExhausted,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot embed empty text")]
    EmptyInput,
}

/// Which cognitive prompt a completion request belongs to. Drives
/// per-module model routing and scripted-response routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    React,
    Plan,
    ReflectQuestions,
    ReflectInsights,
    Act,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::React,
        PromptKind::Plan,
        PromptKind::ReflectQuestions,
        PromptKind::ReflectInsights,
        PromptKind::Act,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            PromptKind::React => "react",
            PromptKind::Plan => "plan",
            PromptKind::ReflectQuestions => "reflect_questions",
            PromptKind::ReflectInsights => "reflect_insights",
            PromptKind::Act => "act",
        }
    }

    pub fn from_key(key: &str) -> Option<PromptKind> {
        PromptKind::ALL.into_iter().find(|k| k.key() == key)
    }

    /// Recognizes which template a rendered prompt came from by an
    /// instruction sentence unique to that template's body.
    pub fn sniff(prompt: &str) -> Option<PromptKind> {
        if prompt.contains("Review the plan and the actions to execute") {
            Some(PromptKind::React)
        } else if prompt.contains("Each action you determinate can only be one of the following") {
            Some(PromptKind::Act)
        } else if prompt.contains("generate a new plan and new objectives") {
            Some(PromptKind::Plan)
        } else if prompt.contains("formulate the 3 most salient high-level questions") {
            Some(PromptKind::ReflectQuestions)
        } else if prompt.contains("for each one of the group of memories") {
            Some(PromptKind::ReflectInsights)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait CompletionProvider: Send {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError>;
    fn name(&self) -> &'static str;
}

/// Connection settings for the live provider, plus the per-prompt model
/// map: the action prompt goes to `action_model`, everything else to
/// `default_model` unless overridden per prompt kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token. The
    /// token itself never appears in logs.
    pub token_env: String,
    pub default_model: String,
    pub action_model: String,
    #[serde(default)]
    pub model_overrides: BTreeMap<String, String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            token_env: "HARVEST_API_TOKEN".into(),
            default_model: "gpt-3.5-turbo".into(),
            action_model: "gpt-4".into(),
            model_overrides: BTreeMap::new(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_base_ms: 1000,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl ProviderConfig {
    /// Model a prompt kind routes to.
    pub fn model_for(&self, kind: PromptKind) -> &str {
        if let Some(m) = self.model_overrides.get(kind.key()) {
            return m;
        }
        match kind {
            PromptKind::Act => &self.action_model,
            _ => &self.default_model,
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted provider

/// Replays canned responses. Entries are separated by `---` lines; an entry
/// may start with `@react`, `@plan`, `@reflect_questions`,
/// `@reflect_insights`, or `@act` to serve only prompts of that kind
/// (recognized by sniffing), otherwise entries feed one strict global
/// queue. A leading `#cycle` line makes every queue repeat instead of
/// exhausting.
pub struct ScriptedProvider {
    queue: Vec<String>,
    next: usize,
    tagged: BTreeMap<PromptKind, (Vec<String>, usize)>,
    cycle: bool,
}

impl ScriptedProvider {
    pub fn from_entries(entries: Vec<String>) -> Self {
        ScriptedProvider { queue: entries, next: 0, tagged: BTreeMap::new(), cycle: false }
    }

    pub fn parse(script: &str) -> Self {
        let mut cycle = false;
        let mut body = script;
        if let Some(rest) = script.strip_prefix("#cycle") {
            cycle = true;
            body = rest.trim_start_matches(['\r', '\n']);
        }
        let mut queue = Vec::new();
        let mut tagged: BTreeMap<PromptKind, (Vec<String>, usize)> = BTreeMap::new();
        for raw in body.split("\n---\n") {
            let raw = raw.trim_matches('\n');
            if raw.is_empty() {
                continue;
            }
            let (kind, text) = match raw.strip_prefix('@') {
                Some(rest) => {
                    let (tag, text) = rest.split_once('\n').unwrap_or((rest, ""));
                    (PromptKind::from_key(tag.trim()), text)
                }
                None => (None, raw),
            };
            match kind {
                Some(k) => tagged.entry(k).or_default().0.push(text.to_string()),
                None => queue.push(text.to_string()),
            }
        }
        ScriptedProvider { queue, next: 0, tagged, cycle }
    }

    fn pop(queue: &mut Vec<String>, next: &mut usize, cycle: bool) -> Option<String> {
        if *next >= queue.len() {
            if cycle && !queue.is_empty() {
                *next = 0;
            } else {
                return None;
            }
        }
        let out = queue[*next].clone();
        *next += 1;
        Some(out)
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        if let Some(kind) = PromptKind::sniff(&request.prompt) {
            if let Some((queue, next)) = self.tagged.get_mut(&kind) {
                if let Some(out) = Self::pop(queue, next, self.cycle) {
                    return Ok(out);
                }
                return Err(LlmError::ScriptExhausted);
            }
        }
        Self::pop(&mut self.queue, &mut self.next, self.cycle).ok_or(LlmError::ScriptExhausted)
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

// ---------------------------------------------------------------------------
// Hash provider

/// Derives a deterministic, well-formed response from the prompt text
/// alone: the same prompt always yields the same response. Action choices
/// chase apples mentioned in the prompt, which makes unattended episodes
/// both reproducible and eventful.
pub struct HashProvider {
    pub rows: i32,
    pub cols: i32,
    salt: u64,
}

impl HashProvider {
    pub fn new(rows: i32, cols: i32, salt: u64) -> Self {
        HashProvider { rows, cols, salt }
    }

    fn act_answer(&self, prompt: &str, h: u64) -> String {
        let apple_re = regex_cached();
        let apples: Vec<(i32, i32)> = apple_re
            .captures_iter(prompt)
            .map(|c| (c[1].parse().unwrap(), c[2].parse().unwrap()))
            .collect();
        match h % 10 {
            0..=5 if !apples.is_empty() => {
                let (r, c) = apples[(h / 16) as usize % apples.len()];
                format!("go to position ({r}, {c})")
            }
            6 => "stay put".to_string(),
            _ => {
                let r = 1 + (h / 7 % (self.rows as u64 - 2).max(1)) as i32;
                let c = 1 + (h / 11 % (self.cols as u64 - 2).max(1)) as i32;
                format!("explore ({r}, {c})")
            }
        }
    }
}

fn regex_cached() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(r"Observed an apple at position \[(\d+), (\d+)\]").unwrap()
    })
}

impl CompletionProvider for HashProvider {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        let h = fnv1a(request.prompt.as_bytes()) ^ self.salt;
        let body = match PromptKind::sniff(&request.prompt) {
            Some(PromptKind::React) => {
                // React roughly once in four prompts.
                let change = h % 4 == 0;
                format!(
                    "{{\n \"Reasoning\": \"Deterministic review of the observations.\",\n \"Answer\": {change}\n}}"
                )
            }
            Some(PromptKind::Plan) => concat!(
                "{\n \"Reasoning\": \"Apples nearby are the main opportunity.\",\n",
                " \"Goals\": \"Collect apples while keeping every tree alive.\",\n",
                " \"Plan\": \"Move towards visible apples, avoid taking the last apple of a tree, and keep exploring when nothing is in sight.\"\n}"
            )
            .to_string(),
            Some(PromptKind::ReflectQuestions) => concat!(
                "{\n",
                "    \"Question_1\": {\"Reasoning\": \"Resource state matters most.\", \"Question\": \"Which trees still hold apples?\"},\n",
                "    \"Question_2\": {\"Reasoning\": \"Other entities shape outcomes.\", \"Question\": \"Who has been harvesting nearby?\"},\n",
                "    \"Question_3\": {\"Reasoning\": \"Risk awareness.\", \"Question\": \"Have any attacks happened around me?\"}\n",
                "}"
            )
            .to_string(),
            Some(PromptKind::ReflectInsights) => concat!(
                "{\n",
                "    \"Insight_1\": {\"Reasoning\": \"Derived from group 1.\", \"Insight\": \"Apples regrow only near other apples.\"},\n",
                "    \"Insight_2\": {\"Reasoning\": \"Derived from group 2.\", \"Insight\": \"Some harvesters do not restrain themselves.\"},\n",
                "    \"Insight_3\": {\"Reasoning\": \"Derived from group 3.\", \"Insight\": \"Staying near living trees pays off.\"}\n",
                "}"
            )
            .to_string(),
            Some(PromptKind::Act) => {
                let answer = self.act_answer(&request.prompt, h);
                format!(
                    "{{\n    \"Opportunities\": \"Visible apples.\",\n    \"Threats\": \"Depletion and attackers.\",\n    \"Options\": \"Harvest, explore, or wait.\",\n    \"Consequences\": \"Harvesting may deplete a tree.\",\n    \"Final analysis\": \"Deterministic choice from the prompt digest.\",\n    \"Answer\": \"{answer}\"\n}}"
                )
            }
            None => "{}".to_string(),
        };
        Ok(format!("```json\n{body}\n```"))
    }

    fn name(&self) -> &'static str {
        "hash"
    }
}

// ---------------------------------------------------------------------------
// Live provider

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    total_tokens: u64,
}

/// Blocking HTTP client for chat-completion-compatible endpoints. Each
/// prompt is sent as a single user message; transient failures are retried
/// with exponential backoff.
pub struct LiveProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    token: String,
    pub calls: u64,
    pub total_tokens: u64,
}

impl LiveProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        let token = std::env::var(&config.token_env).map_err(|_| {
            LlmError::AuthFailure(format!("environment variable {} is not set", config.token_env))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(LiveProvider { config, client, token, calls: 0, total_tokens: 0 })
    }

    fn send(&self, request: &CompletionRequest) -> Result<reqwest::blocking::Response, LlmError> {
        let body = ChatRequest {
            model: &request.model,
            messages: vec![ChatMessage { role: "user", content: &request.prompt }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        self.client
            .post(&self.config.endpoint)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout
                } else {
                    LlmError::Transport(e.to_string())
                }
            })
    }
}

impl CompletionProvider for LiveProvider {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut attempt = 0u32;
        loop {
            let outcome = self.send(request);
            self.calls += 1;
            match outcome {
                Ok(response) => {
                    let status = response.status();
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(LlmError::AuthFailure(format!("status {status}")));
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        if attempt >= self.config.max_retries {
                            return Err(LlmError::RateLimited(attempt + 1));
                        }
                    } else {
                        let parsed: ChatResponse = response
                            .json()
                            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                        if let Some(usage) = &parsed.usage {
                            self.total_tokens += usage.total_tokens;
                        }
                        let text = parsed
                            .choices
                            .into_iter()
                            .next()
                            .and_then(|c| c.message.content)
                            .ok_or_else(|| {
                                LlmError::MalformedResponse("no choices in response".into())
                            })?;
                        return Ok(text);
                    }
                }
                Err(LlmError::Timeout | LlmError::Transport(_)) if attempt < self.config.max_retries => {}
                Err(e) => return Err(e),
            }
            let wait = self.config.backoff_base_ms.saturating_mul(1u64 << attempt.min(8));
            std::thread::sleep(Duration::from_millis(wait));
            attempt += 1;
        }
    }

    fn name(&self) -> &'static str {
        "live"
    }
}

// ---------------------------------------------------------------------------
// Embeddings

pub trait Embedder: Send + Sync {
    /// Fixed-dimension unit vector for a piece of text.
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
    fn dim(&self) -> usize;
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic bag-of-words embedding: whitespace tokens are hashed into
/// `dim` buckets, counted, and L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 256 }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let mut counts = vec![0.0f64; self.dim];
        let mut any = false;
        for token in text.split_whitespace() {
            any = true;
            let bucket = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        if !any {
            return Err(LlmError::EmptyInput);
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut counts {
            *v /= norm;
        }
        Ok(counts)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
