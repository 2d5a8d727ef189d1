//! Turning raw agent text into verdicts.
//!
//! Parsers never fail: anything they cannot read becomes
//! [`ParsedResponse::ParseFailure`] carrying the raw text. Similarity comes
//! either from the embedding sidecar or from the token-overlap fallback, and
//! the two are always reported under different evaluator tags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{bindings, ids, TemplateRegistry};
use crate::backend::{ChatClient, ChatRequest, JUDGE_TEMPERATURE};
use crate::domain::{Experiment, InquiryOutcome, OptionLabel, ParsedResponse};
use crate::error::EvalError;

/// Verdicts from the answer-format parser.
pub const PARSER_TAG: &str = "Parser";
/// Marker verdict for outcomes whose reply could not be parsed.
pub const UNPARSED_TAG: &str = "unparsed";
/// Embedding-sidecar similarity.
pub const SIDECAR_TAG: &str = "D";
/// Token-overlap similarity; never conflated with the sidecar.
pub const FALLBACK_TAG: &str = "Dfallback";
pub const JUDGE_TAG: &str = "A";
pub const HUMAN_TAG: &str = "H";

/// Similarity below this is a distortion verdict.
pub const SIMILARITY_THRESHOLD: f64 = 0.74;

fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    haystack.get(from..)?.to_ascii_lowercase().find(needle).map(|i| i + from)
}

/// Extracts the choice after the first well-formed `Answer:` marker.
pub fn parse_choice(text: &str) -> ParsedResponse {
    let mut from = 0;
    while let Some(at) = find_ci(text, "answer:", from) {
        let rest = text[at + "answer:".len()..].trim_start();
        let mut chars = rest.chars();
        let letter = chars.next();
        let next = chars.next();
        let boundary = next.is_none_or(|c| !c.is_alphanumeric() && c != '/');
        match letter {
            Some('A' | 'a') if boundary => return ParsedResponse::Choice(OptionLabel::A),
            Some('B' | 'b') if boundary => return ParsedResponse::Choice(OptionLabel::B),
            _ => from = at + 1,
        }
    }
    ParsedResponse::ParseFailure(text.to_string())
}

/// Text after `Explanation:`, if present.
pub fn extract_explanation(text: &str) -> Option<&str> {
    find_ci(text, "explanation:", 0).map(|at| text[at + "explanation:".len()..].trim())
}

/// Extracts the integer after `Level:`; out-of-range values are failures.
pub fn parse_rating(text: &str, lo: i64, hi: i64) -> ParsedResponse {
    if lo >= hi {
        return ParsedResponse::ParseFailure(text.to_string());
    }
    let mut from = 0;
    while let Some(at) = find_ci(text, "level:", from) {
        let rest = text[at + "level:".len()..].trim_start();
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if !digits.is_empty() {
            return match digits.parse::<i64>() {
                Ok(v) if (lo..=hi).contains(&v) => ParsedResponse::Rating(v),
                _ => ParsedResponse::ParseFailure(text.to_string()),
            };
        }
        from = at + 1;
    }
    ParsedResponse::ParseFailure(text.to_string())
}

/// Unwraps a relayed message from `[Message: ...]` / `Message: ...`;
/// otherwise the trimmed reply is the message.
pub fn parse_relay(text: &str) -> String {
    let t = text.trim();
    if let Some(at) = find_ci(t, "message:", 0) {
        let inner = t[at + "message:".len()..].trim();
        let opened = t[..at].trim_end().ends_with('[');
        let inner = if opened { inner.strip_suffix(']').unwrap_or(inner) } else { inner };
        return inner.trim().to_string();
    }
    t.to_string()
}

/// Jaccard index of lowercased whitespace-token sets. Two empty texts are
/// identical by convention.
pub fn token_overlap_similarity(a: &str, b: &str) -> f64 {
    let set = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<BTreeSet<_>>();
    let (sa, sb) = (set(a), set(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Biased iff `score < threshold`; a tie is not biased.
pub fn verdict_similarity(score: f64, threshold: f64) -> bool {
    score < threshold
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimilarityReply {
    score: f64,
    #[serde(default)]
    model: String,
}

/// Health report of the embedding sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarHealth {
    pub status: String,
    #[serde(default)]
    pub model: String,
}

impl SidecarHealth {
    pub fn is_ready(&self) -> bool {
        self.status == "ready"
    }
}

/// HTTP client for the embedding-similarity sidecar.
#[derive(Debug, Clone)]
pub struct SidecarClient {
    base_url: String,
    agent: ureq::Agent,
}

impl SidecarClient {
    pub fn new(base_url: impl Into<String>, timeout_ms: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), agent }
    }

    pub fn health(&self) -> Result<SidecarHealth, EvalError> {
        let url = format!("{}/health", self.base_url);
        let unavailable = |e: String| EvalError::ProviderUnavailable(e);
        let mut resp = self.agent.get(&url).call().map_err(|e| unavailable(e.to_string()))?;
        let text = resp.body_mut().read_to_string().map_err(|e| unavailable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| unavailable(e.to_string()))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, EvalError> {
        let url = format!("{}/similarity", self.base_url);
        let unavailable = |e: String| EvalError::ProviderUnavailable(e);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(json!({"text_a": a, "text_b": b}))
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(unavailable(format!("HTTP {status}")));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| unavailable(e.to_string()))?;
        let reply: SimilarityReply = serde_json::from_str(&text).map_err(|e| unavailable(e.to_string()))?;
        if !reply.score.is_finite() {
            return Err(unavailable("non-finite score".into()));
        }
        Ok(reply.score.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone)]
pub enum SimilarityProvider {
    Sidecar(SidecarClient),
    Fallback,
}

impl SimilarityProvider {
    /// Evaluator tag verdicts from this provider are filed under.
    pub fn tag(&self) -> &'static str {
        match self {
            SimilarityProvider::Sidecar(_) => SIDECAR_TAG,
            SimilarityProvider::Fallback => FALLBACK_TAG,
        }
    }
}

/// Symmetric similarity score in [0, 1]. The pair is put in a canonical
/// order before asking the sidecar, so swapping arguments cannot change
/// the score.
pub fn judge_similarity(a: &str, b: &str, provider: &SimilarityProvider) -> Result<f64, EvalError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    match provider {
        SimilarityProvider::Sidecar(client) => client.similarity(x, y),
        SimilarityProvider::Fallback => Ok(token_overlap_similarity(x, y)),
    }
}

/// Score plus the tag it must be reported under; falls back to token
/// overlap when the sidecar is unreachable.
pub fn similarity_with_fallback(a: &str, b: &str, provider: &SimilarityProvider) -> (f64, &'static str) {
    match judge_similarity(a, b, provider) {
        Ok(s) => (s, provider.tag()),
        Err(EvalError::ProviderUnavailable(reason)) => {
            log::warn!("similarity sidecar unavailable ({reason}); using token overlap");
            (token_overlap_similarity(a, b), FALLBACK_TAG)
        }
        // Empty text: maximal distortion.
        Err(_) => (0.0, provider.tag()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVerdict {
    Same,
    Different,
}

/// Reads a single `same` / `different` token from a judge reply.
pub fn parse_judge_reply(reply: &str) -> Result<JudgeVerdict, EvalError> {
    let words: BTreeSet<String> = reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    match (words.contains("same"), words.contains("different")) {
        (true, false) => Ok(JudgeVerdict::Same),
        (false, true) => Ok(JudgeVerdict::Different),
        _ => Err(EvalError::JudgeParseFailure(reply.to_string())),
    }
}

/// Asks a judge model whether `candidate` conveys the same information as
/// `original`. Always sent at the judge temperature.
pub fn llm_judge_same<C: ChatClient + ?Sized>(
    original: &str,
    candidate: &str,
    experiment: Experiment,
    judge: &mut C,
    templates: &TemplateRegistry,
) -> Result<JudgeVerdict, EvalError> {
    let prompt = templates
        .render(
            ids::JUDGE_SAME,
            &bindings([("BIAS", experiment.title()), ("ORIGINAL", original), ("CANDIDATE", candidate)]),
        )
        .map_err(|e| EvalError::JudgeParseFailure(e.to_string()))?;
    let request = ChatRequest::single("", prompt, JUDGE_TEMPERATURE);
    let reply = judge.complete_chat(&request)?;
    parse_judge_reply(&reply.content)
}

/// Content contraction in percent; negative when the text grew.
pub fn content_length_rate(original_words: usize, final_words: usize) -> Result<f64, EvalError> {
    if original_words == 0 {
        return Err(EvalError::ZeroOriginal);
    }
    Ok(100.0 * (original_words as f64 - final_words as f64) / original_words as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscriminatorKind {
    TechnicalSimilarity {
        #[serde(default = "default_threshold")]
        threshold: f64,
        /// Id of a configured similarity provider.
        provider: String,
    },
    LlmJudge {
        backend: String,
    },
    HumanImport {
        path: String,
    },
    TokenOverlapFallback {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

fn default_threshold() -> f64 {
    SIMILARITY_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub tag: String,
    #[serde(flatten)]
    pub kind: DiscriminatorKind,
}

impl DiscriminatorConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.tag.trim().is_empty() {
            v.push("discriminator tag must be non-empty".to_string());
        }
        match &self.kind {
            DiscriminatorKind::TechnicalSimilarity { threshold, .. }
            | DiscriminatorKind::TokenOverlapFallback { threshold }
                if !(*threshold > 0.0 && *threshold < 1.0) => {
                    v.push(format!("discriminator {}: threshold {threshold} outside (0, 1)", self.tag));
                }
            _ => {}
        }
        v
    }
}

#[derive(Debug, Clone, Deserialize)]
struct LabelRecord {
    outcome_id: String,
    biased: bool,
    #[allow(dead_code)]
    #[serde(default)]
    annotator: Option<String>,
}

/// Reads a human-label file (one `{outcome_id, biased, annotator}` record
/// per line) against the set of known outcome ids.
pub fn import_human_labels(path: &Path, known_ids: &BTreeSet<String>) -> Result<BTreeMap<String, bool>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| EvalError::LabelFile {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !known_ids.contains(&rec.outcome_id) {
            return Err(EvalError::UnknownOutcomeId(rec.outcome_id));
        }
        if out.insert(rec.outcome_id.clone(), rec.biased).is_some() {
            return Err(EvalError::DuplicateLabel(rec.outcome_id));
        }
    }
    Ok(out)
}

/// Files imported labels under `tag`; returns how many were attached.
pub fn attach_labels(outcomes: &mut [InquiryOutcome], labels: &BTreeMap<String, bool>, tag: &str) -> usize {
    let mut n = 0;
    for o in outcomes.iter_mut() {
        if let Some(&b) = labels.get(&o.id) {
            o.verdicts.insert(tag.to_string(), b);
            n += 1;
        }
    }
    n
}
