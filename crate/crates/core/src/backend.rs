//! Chat-completion backends: a remote HTTP endpoint and a deterministic
//! scripted mock.
//!
//! A [`Backend`] is shared by all inquiries of a protocol run and owns the
//! call counter and the in-flight cap. Each inquiry opens its own
//! [`Session`]; scripted sessions carry their own seeded responder so the
//! response sequence of one inquiry does not depend on how other inquiries
//! were scheduled.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::BackendError;

/// Default sampling temperature for agents under test.
pub const AGENT_TEMPERATURE: f64 = 1.0;
/// Default sampling temperature for judge models.
pub const JUDGE_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn single(system_prompt: impl Into<String>, query: impl Into<String>, temperature: f64) -> Self {
        Self { system_prompt: system_prompt.into(), turns: vec![Turn::user(query)], temperature, seed: None }
    }

    /// Turns must open and close on a user turn (or be empty); consecutive
    /// user turns are allowed because several participants may speak before
    /// the agent does.
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if let (Some(first), Some(last)) = (self.turns.first(), self.turns.last()) {
            if first.role != Role::User || last.role != Role::User {
                return Err(BackendError::InvalidRequest("turns must start and end with a user turn".into()));
            }
        }
        Ok(())
    }

    pub fn last_user_turn(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "RetryPolicy::default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "RetryPolicy::default_backoff")]
    pub base_backoff_ms: u64,
    /// Relative jitter applied to each delay, e.g. 0.2 for +/-20%.
    #[serde(default = "RetryPolicy::default_jitter")]
    pub jitter: f64,
}

impl RetryPolicy {
    fn default_attempts() -> u32 {
        3
    }
    fn default_backoff() -> u64 {
        500
    }
    fn default_jitter() -> f64 {
        0.2
    }

    /// Delay before retry number `retry` (1-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << (retry.saturating_sub(1)).min(16);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor))
    }

    fn jittered_delay(&self, retry: u32) -> Duration {
        let nominal = self.nominal_delay(retry).as_secs_f64();
        let j = self.jitter.clamp(0.0, 1.0);
        let scale = if j > 0.0 { rand::rng().random_range(1.0 - j..=1.0 + j) } else { 1.0 };
        Duration::from_secs_f64(nominal * scale)
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: Self::default_attempts(),
            base_backoff_ms: Self::default_backoff(),
            jitter: Self::default_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    FixedAnswer {
        text: String,
    },
    ConformWithProbability {
        p: f64,
        conform_text: String,
        dissent_text: String,
    },
    EchoLastMessage,
    TemplateResponder {
        /// Substring pattern (matched against the last user turn) to reply.
        patterns: BTreeMap<String, String>,
        #[serde(default)]
        default: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub seed: u64,
}

impl ScriptedPolicy {
    pub fn fixed(text: impl Into<String>) -> Self {
        Self { kind: PolicyKind::FixedAnswer { text: text.into() }, seed: 0 }
    }

    pub fn conform(p: f64, conform_text: impl Into<String>, dissent_text: impl Into<String>, seed: u64) -> Self {
        Self {
            kind: PolicyKind::ConformWithProbability {
                p,
                conform_text: conform_text.into(),
                dissent_text: dissent_text.into(),
            },
            seed,
        }
    }

    pub fn echo() -> Self {
        Self { kind: PolicyKind::EchoLastMessage, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match &self.kind {
            PolicyKind::ConformWithProbability { p, .. } if !(0.0..=1.0).contains(p) => {
                Err(BackendError::Config(format!("probability {p} outside [0, 1]")))
            }
            PolicyKind::TemplateResponder { patterns, .. } => {
                for a in patterns.keys() {
                    if a.is_empty() {
                        return Err(BackendError::Config("empty responder pattern".into()));
                    }
                    if let Some(b) = patterns.keys().find(|b| *b != a && b.contains(a.as_str())) {
                        return Err(BackendError::Config(format!("responder patterns overlap: {a:?} / {b:?}")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The same policy re-seeded for an independent stream (one per inquiry).
    pub fn for_stream(&self, stream: u64) -> ScriptedPolicy {
        ScriptedPolicy { kind: self.kind.clone(), seed: mix_seed(self.seed, stream) }
    }
}

/// SplitMix64 finaliser over a pair; used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pure scripted reply for call number `call_index` under `policy`.
pub fn scripted_respond(policy: &ScriptedPolicy, call_index: u64, request: &ChatRequest) -> ChatResponse {
    let start = Instant::now();
    let content = match &policy.kind {
        PolicyKind::FixedAnswer { text } => text.clone(),
        PolicyKind::ConformWithProbability { p, conform_text, dissent_text } => {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            rng.set_stream(call_index);
            if rng.random::<f64>() < *p {
                conform_text.clone()
            } else {
                dissent_text.clone()
            }
        }
        PolicyKind::EchoLastMessage => request.last_user_turn().unwrap_or_default().to_string(),
        PolicyKind::TemplateResponder { patterns, default } => {
            let last = request.last_user_turn().unwrap_or_default();
            patterns
                .iter()
                .find(|(pat, _)| last.contains(pat.as_str()))
                .map(|(_, reply)| reply.clone())
                .or_else(|| default.clone())
                .unwrap_or_default()
        }
    };
    ChatResponse { content, token_usage: None, latency_ms: start.elapsed().as_secs_f64() * 1e3 }
}

/// Stateful wrapper that advances the call index.
#[derive(Debug, Clone)]
pub struct ScriptedResponder {
    policy: ScriptedPolicy,
    next_call: u64,
}

impl ScriptedResponder {
    pub fn new(policy: ScriptedPolicy) -> Self {
        Self { policy, next_call: 0 }
    }

    pub fn respond(&mut self, request: &ChatRequest) -> ChatResponse {
        let r = scripted_respond(&self.policy, self.next_call, request);
        self.next_call += 1;
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendTarget {
    Scripted {
        policy: ScriptedPolicy,
    },
    Http {
        endpoint: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub id: String,
    pub model: String,
    #[serde(flatten)]
    pub target: BackendTarget,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "BackendConfig::default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "BackendConfig::default_temperature")]
    pub temperature: f64,
    #[serde(default = "BackendConfig::default_in_flight")]
    pub max_in_flight: usize,
}

impl BackendConfig {
    fn default_timeout() -> u64 {
        60_000
    }
    fn default_temperature() -> f64 {
        AGENT_TEMPERATURE
    }
    fn default_in_flight() -> usize {
        4
    }

    pub fn scripted(id: impl Into<String>, policy: ScriptedPolicy) -> Self {
        Self {
            id: id.into(),
            model: "scripted".into(),
            target: BackendTarget::Scripted { policy },
            retry: RetryPolicy::default(),
            timeout_ms: Self::default_timeout(),
            temperature: AGENT_TEMPERATURE,
            max_in_flight: Self::default_in_flight(),
        }
    }

    pub fn http(id: impl Into<String>, model: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            model: model.into(),
            target: BackendTarget::Http { endpoint: endpoint.into(), api_key_env: None },
            retry: RetryPolicy::default(),
            timeout_ms: Self::default_timeout(),
            temperature: AGENT_TEMPERATURE,
            max_in_flight: Self::default_in_flight(),
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.retry.max_attempts < 1 {
            return Err(BackendError::Config("max_attempts must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if let BackendTarget::Scripted { policy } = &self.target {
            policy.validate()?;
        }
        Ok(())
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
struct Inner {
    config: BackendConfig,
    calls: AtomicU64,
    gate: Gate,
    http: Option<ureq::Agent>,
}

/// A configured backend. Cheap to clone; clones share the call counter.
#[derive(Debug, Clone)]
pub struct Backend {
    inner: Arc<Inner>,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let http = match &config.target {
            BackendTarget::Http { .. } => Some(
                ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
                    .http_status_as_error(false)
                    .build()
                    .into(),
            ),
            BackendTarget::Scripted { .. } => None,
        };
        let gate = Gate::new(config.max_in_flight);
        Ok(Self { inner: Arc::new(Inner { config, calls: AtomicU64::new(0), gate, http }) })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.inner.config
    }

    /// Completed `complete_chat` invocations (successful or exhausted).
    pub fn calls(&self) -> u64 {
        self.inner.calls.load(Ordering::SeqCst)
    }

    /// Opens a session for one inquiry. `stream` picks the scripted
    /// policy's random stream; ignored by remote backends.
    pub fn session(&self, stream: u64) -> Session {
        let responder = match &self.inner.config.target {
            BackendTarget::Scripted { policy } => Some(ScriptedResponder::new(policy.for_stream(stream))),
            BackendTarget::Http { .. } => None,
        };
        Session { backend: self.clone(), responder }
    }
}

/// Anything that answers chat requests.
pub trait ChatClient {
    fn complete_chat(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub struct Session {
    backend: Backend,
    responder: Option<ScriptedResponder>,
}

impl Session {
    pub fn backend(&self) -> &Backend {
        &self.backend
    }
}

impl ChatClient for Session {
    fn complete_chat(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let inner = &self.backend.inner;
        let _slot = inner.gate.enter();
        let result = match (&mut self.responder, &inner.config.target) {
            (Some(r), _) => Ok(r.respond(request)),
            (None, BackendTarget::Http { endpoint, api_key_env }) => {
                let agent = inner.http.as_ref().expect("http agent built for http target");
                http_complete(agent, &inner.config, endpoint, api_key_env.as_deref(), request)
            }
            (None, BackendTarget::Scripted { .. }) => unreachable!("scripted session without responder"),
        };
        if !matches!(result, Err(BackendError::MissingAuth(_))) {
            inner.calls.fetch_add(1, Ordering::SeqCst);
        }
        result
    }
}

enum Attempt {
    Done(ChatResponse),
    Retry(BackendError),
    Fatal(BackendError),
}

fn http_complete(
    agent: &ureq::Agent,
    config: &BackendConfig,
    endpoint: &str,
    api_key_env: Option<&str>,
    request: &ChatRequest,
) -> Result<ChatResponse, BackendError> {
    let key = match api_key_env {
        Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingAuth(var.to_string()))?),
        None => None,
    };
    let body = wire_request(&config.model, request);
    let policy = config.retry;
    let mut last_err = None;
    for attempt in 1..=policy.max_attempts {
        if attempt > 1 {
            std::thread::sleep(policy.jittered_delay(attempt - 1));
        }
        match http_attempt(agent, endpoint, key.as_deref(), &body, attempt) {
            Attempt::Done(r) => return Ok(r),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(e) => {
                log::warn!("{}: attempt {attempt}/{} failed: {e}", config.id, policy.max_attempts);
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or(BackendError::Transport { attempts: 0, reason: "no attempts".into() }))
}

fn http_attempt(agent: &ureq::Agent, endpoint: &str, key: Option<&str>, body: &serde_json::Value, attempt: u32) -> Attempt {
    let start = Instant::now();
    let mut req = agent.post(endpoint).header("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = match req.send_json(body) {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(BackendError::Transport { attempts: attempt, reason: e.to_string() }),
    };
    let status = resp.status().as_u16();
    if status == 429 {
        return Attempt::Retry(BackendError::RateLimited { attempts: attempt });
    }
    if status >= 500 {
        return Attempt::Retry(BackendError::Transport { attempts: attempt, reason: format!("HTTP {status}") });
    }
    if status >= 400 {
        return Attempt::Fatal(BackendError::Transport { attempts: attempt, reason: format!("HTTP {status}") });
    }
    let text = match resp.body_mut().read_to_string() {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(BackendError::Transport { attempts: attempt, reason: e.to_string() }),
    };
    match parse_wire_response(&text) {
        Ok((content, token_usage)) => Attempt::Done(ChatResponse {
            content,
            token_usage,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        }),
        Err(e) => Attempt::Fatal(e),
    }
}

/// Chat-completions request body: system prompt first, then the turns.
pub fn wire_request(model: &str, request: &ChatRequest) -> serde_json::Value {
    let mut messages = Vec::with_capacity(request.turns.len() + 1);
    if !request.system_prompt.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_prompt}));
    }
    for t in &request.turns {
        messages.push(json!({"role": t.role.as_str(), "content": t.content}));
    }
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Extracts `choices[0].message.content` and optional `usage`.
pub fn parse_wire_response(text: &str) -> Result<(String, Option<TokenUsage>), BackendError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| BackendError::MalformedReply(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| BackendError::MalformedReply("missing choices[0].message.content".into()))?
        .to_string();
    let usage = v.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt: u.get("prompt_tokens")?.as_u64()?,
            completion: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((content, usage))
}
