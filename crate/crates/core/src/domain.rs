//! Shared domain types and their invariant checks.
//!
//! Everything in here is a plain value object. The only mutable piece of
//! state is [`AgentProfile::memory`], which is append-only for the lifetime
//! of one simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Sender id used for messages that originate from the harness itself.
pub const SYSTEM_SENDER: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    LlmAgent,
    ScriptedPersona,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub round_index: u32,
    pub content: String,
    /// Agent id of the speaker, or [`SYSTEM_SENDER`].
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: String,
    pub display_name: String,
    pub identity_text: String,
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beliefs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memory: Vec<MemoryEntry>,
    /// Response script reference; required for scripted personas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
}

impl AgentProfile {
    pub fn llm(id: impl Into<String>, display_name: impl Into<String>, identity_text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            display_name: display_name.into(),
            identity_text: identity_text.into(),
            kind: AgentKind::LlmAgent,
            beliefs: Vec::new(),
            memory: Vec::new(),
            script: None,
        }
    }

    pub fn scripted(id: impl Into<String>, display_name: impl Into<String>, script: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            display_name: display_name.into(),
            identity_text: String::new(),
            kind: AgentKind::ScriptedPersona,
            beliefs: Vec::new(),
            memory: Vec::new(),
            script: Some(script.into()),
        }
    }

    pub fn is_llm(&self) -> bool {
        self.kind == AgentKind::LlmAgent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionLabel {
    A,
    B,
}

impl OptionLabel {
    pub fn other(self) -> Self {
        match self {
            OptionLabel::A => OptionLabel::B,
            OptionLabel::B => OptionLabel::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptionLabel::A => "A",
            OptionLabel::B => "B",
        }
    }
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McqKind {
    Known,
    Unknown,
}

impl McqKind {
    /// Short dataset tag used in rate keys (`K` / `uK`).
    pub fn tag(self) -> &'static str {
        match self {
            McqKind::Known => "K",
            McqKind::Unknown => "uK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub option_a: String,
    pub option_b: String,
    pub kind: McqKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<OptionLabel>,
}

impl McqItem {
    /// Renders the question the way the prompt templates expect it.
    pub fn render(&self) -> String {
        format!("{} A: {} B: {}", self.question.trim(), self.option_a, self.option_b)
    }
}

/// Whitespace-run token count; punctuation stays attached to its token.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformStory {
    pub id: String,
    pub text: String,
    pub word_count: usize,
}

impl InformStory {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self { id: id.into(), word_count: word_count(&text), text }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    /// Set on CogAction records: the CogScene id this action belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_scene: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slot_scopes: BTreeMap<String, KnowledgeScope>,
}

impl Scene {
    /// Slot bindings this scene provides, keyed by template slot name.
    pub fn bindings(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("SCENARIO".to_string(), self.scenario.clone());
        if let Some(r) = &self.resource {
            out.insert("RESOURCE".to_string(), r.clone());
        }
        if let Some(r) = &self.relation {
            out.insert("RELATION".to_string(), r.clone());
        }
        if let Some(a) = &self.action {
            out.insert("ACTION".to_string(), a.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityPair {
    pub inferior: String,
    pub superior: String,
}

impl IdentityPair {
    pub fn new(inferior: impl Into<String>, superior: impl Into<String>) -> Self {
        Self { inferior: inferior.into(), superior: superior.into() }
    }

    /// Condition tag, e.g. `student>teacher`.
    pub fn tag(&self) -> String {
        format!("{}>{}", slug(&self.inferior), slug(&self.superior))
    }
}

fn slug(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join("-")
}

/// Visibility class of a routed piece of information.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeScope {
    Common,
    ConfidentialMutual(BTreeSet<String>),
    Private(String),
}

impl KnowledgeScope {
    pub fn mutual<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        KnowledgeScope::ConfidentialMutual(ids.into_iter().map(Into::into).collect())
    }

    pub fn private(id: impl Into<String>) -> Self {
        KnowledgeScope::Private(id.into())
    }

    /// Ids the scope names explicitly (empty for `Common`).
    pub fn named_ids(&self) -> Vec<&str> {
        match self {
            KnowledgeScope::Common => Vec::new(),
            KnowledgeScope::ConfidentialMutual(ids) => ids.iter().map(String::as_str).collect(),
            KnowledgeScope::Private(id) => vec![id.as_str()],
        }
    }

    /// Rewrites role placeholders (e.g. `X`, `Y`) into concrete agent ids.
    /// Ids without a mapping are kept as they are.
    pub fn resolve(&self, roles: &BTreeMap<String, String>) -> KnowledgeScope {
        let map = |id: &String| roles.get(id).cloned().unwrap_or_else(|| id.clone());
        match self {
            KnowledgeScope::Common => KnowledgeScope::Common,
            KnowledgeScope::ConfidentialMutual(ids) => {
                KnowledgeScope::ConfidentialMutual(ids.iter().map(map).collect())
            }
            KnowledgeScope::Private(id) => KnowledgeScope::Private(map(id)),
        }
    }

    fn shape_violations(&self) -> Vec<String> {
        match self {
            KnowledgeScope::ConfidentialMutual(ids) if ids.len() < 2 => {
                vec!["confidential mutual scope requires set size >= 2".to_string()]
            }
            KnowledgeScope::Private(id) if id.trim().is_empty() => {
                vec!["private scope must name exactly one id".to_string()]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub round_index: u32,
    pub sender: String,
    pub recipients: BTreeSet<String>,
    pub content: String,
    pub scope: KnowledgeScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variation {
    AllWrong,
    OneRight,
    OneUnknown,
}

impl Variation {
    pub fn letter(self) -> char {
        match self {
            Variation::AllWrong => 'W',
            Variation::OneRight => 'R',
            Variation::OneUnknown => 'N',
        }
    }
}

/// Group sizes the herd protocol is configured for.
pub const HERD_GROUP_SIZES: [u32; 2] = [7, 49];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioCondition {
    pub n_humans: u32,
    pub variation: Variation,
    pub dataset_kind: McqKind,
}

impl ScenarioCondition {
    pub fn new(dataset_kind: McqKind, n_humans: u32, variation: Variation) -> Self {
        Self { n_humans, variation, dataset_kind }
    }

    /// `7W`, `49W`, ...
    pub fn tag(&self) -> String {
        format!("{}{}", self.n_humans, self.variation.letter())
    }

    /// `K[7W]`, `uK[49W]`, ... as used in table headers.
    pub fn label(&self) -> String {
        format!("{}[{}]", self.dataset_kind.tag(), self.tag())
    }

    /// The eight herd conditions in table column order.
    pub fn table_order() -> Vec<ScenarioCondition> {
        let mut out = Vec::new();
        for kind in [McqKind::Known, McqKind::Unknown] {
            out.push(Self::new(kind, 7, Variation::AllWrong));
            out.push(Self::new(kind, 7, Variation::OneRight));
            out.push(Self::new(kind, 7, Variation::OneUnknown));
            out.push(Self::new(kind, 49, Variation::AllWrong));
        }
        out
    }
}

impl FromStr for ScenarioCondition {
    type Err = DomainError;

    /// Accepts `K[7W]`, `K7W`, `uK[49W]`, `uk49w`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::BadCondition(s.to_string());
        let cleaned: String = s.chars().filter(|c| !matches!(c, '[' | ']' | ' ')).collect();
        let lower = cleaned.to_lowercase();
        let (kind, rest) = if let Some(rest) = lower.strip_prefix("uk") {
            (McqKind::Unknown, rest)
        } else if let Some(rest) = lower.strip_prefix('k') {
            (McqKind::Known, rest)
        } else {
            return Err(bad());
        };
        let letter = rest.chars().last().ok_or_else(bad)?;
        let variation = match letter {
            'w' => Variation::AllWrong,
            'r' => Variation::OneRight,
            'n' => Variation::OneUnknown,
            _ => return Err(bad()),
        };
        let n_humans: u32 = rest[..rest.len() - 1].parse().map_err(|_| bad())?;
        if n_humans == 0 {
            return Err(bad());
        }
        Ok(Self::new(kind, n_humans, variation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Herd,
    Authority,
    BenFranklin,
    Confirmation,
    Halo,
    RumorChain,
    Gambler,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Herd,
        Experiment::Authority,
        Experiment::BenFranklin,
        Experiment::Confirmation,
        Experiment::Halo,
        Experiment::RumorChain,
        Experiment::Gambler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Herd => "herd",
            Experiment::Authority => "authority",
            Experiment::BenFranklin => "ben_franklin",
            Experiment::Confirmation => "confirmation",
            Experiment::Halo => "halo",
            Experiment::RumorChain => "rumor_chain",
            Experiment::Gambler => "gambler",
        }
    }

    /// Human-readable bias name, used in judge prompts and table headers.
    pub fn title(self) -> &'static str {
        match self {
            Experiment::Herd => "Herd Effect",
            Experiment::Authority => "Authority Effect",
            Experiment::BenFranklin => "Ben Franklin Effect",
            Experiment::Confirmation => "Confirmation Bias",
            Experiment::Halo => "Halo Effect",
            Experiment::RumorChain => "Rumor Chain Effect",
            Experiment::Gambler => "Gambler's Fallacy",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace(['-', ' '], "_");
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == norm)
            .ok_or_else(|| DomainError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedResponse {
    Choice(OptionLabel),
    Rating(i64),
    FreeText(String),
    /// Raw text kept for later adjudication.
    ParseFailure(String),
}

impl ParsedResponse {
    pub fn choice(&self) -> Option<OptionLabel> {
        match self {
            ParsedResponse::Choice(c) => Some(*c),
            _ => None,
        }
    }

    pub fn rating(&self) -> Option<i64> {
        match self {
            ParsedResponse::Rating(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, ParsedResponse::ParseFailure(_))
    }
}

/// Experimental/control arm of a Ben Franklin trial pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FavorGroup {
    Experimental,
    Control,
}

impl FavorGroup {
    /// Condition tag of the arm.
    pub fn tag(self) -> &'static str {
        match self {
            FavorGroup::Experimental => "experimental",
            FavorGroup::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FavorTrial {
    pub group: FavorGroup,
    pub initial_level: i64,
    /// `None` when the re-rating could not be parsed.
    pub final_level: Option<i64>,
    pub scene_id: String,
    pub favor_action_id: String,
}

pub const INITIAL_LEVEL_RANGE: (i64, i64) = (1, 10);
pub const FINAL_LEVEL_RANGE: (i64, i64) = (1, 11);

/// Per-hop record for the rumor chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    /// Index of the agent that produced this piece (0-based).
    pub agent_index: u32,
    pub input: String,
    pub output: String,
    pub words: usize,
    /// Similarity to the original story, keyed by evaluator tag.
    #[serde(default)]
    pub similarity: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InquiryOutcome {
    /// Unique per outcome; human-label files refer to this.
    pub id: String,
    /// Groups outcomes that came out of the same inquiry (one rumor chain
    /// yields several pieces).
    pub inquiry_id: String,
    pub experiment: Experiment,
    pub condition_tags: Vec<String>,
    pub repetition_index: u32,
    pub question_index: u32,
    pub parsed: ParsedResponse,
    pub verdicts: BTreeMap<String, bool>,
    pub api_calls: u32,
    /// Simulated communication rounds of the inquiry.
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favor: Option<FavorTrial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop: Option<HopRecord>,
}

impl InquiryOutcome {
    pub fn has_tags(&self, tags: &[&str]) -> bool {
        tags.iter().all(|t| self.condition_tags.iter().any(|c| c == t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RateMetric {
    Bqa,
    Bmha,
}

impl RateMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            RateMetric::Bqa => "Bqa",
            RateMetric::Bmha => "Bmha",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RateKey {
    pub metric: RateMetric,
    pub dataset_tag: String,
    pub condition_tag: String,
    pub evaluator_tag: String,
}

impl RateKey {
    pub fn new(
        metric: RateMetric,
        dataset_tag: impl Into<String>,
        condition_tag: impl Into<String>,
        evaluator_tag: impl Into<String>,
    ) -> Self {
        Self {
            metric,
            dataset_tag: dataset_tag.into(),
            condition_tag: condition_tag.into(),
            evaluator_tag: evaluator_tag.into(),
        }
    }
}

impl fmt::Display for RateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Rate_{}[{}][{}][{}]",
            self.metric.as_str(),
            self.dataset_tag,
            self.condition_tag,
            self.evaluator_tag
        )
    }
}

/// Result of checking one item's invariants. Violations are data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Anything that can appear in a dataset or transcript file.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetItem {
    Mcq(McqItem),
    Inform(InformStory),
    Scene(Scene),
    Identity(AgentProfile),
    IdentityPair(IdentityPair),
    Scope(KnowledgeScope),
    Message(Message),
    Condition(ScenarioCondition),
    Outcome(InquiryOutcome),
}

pub fn validate_item(item: &DatasetItem) -> ValidationReport {
    let mut v = Vec::new();
    match item {
        DatasetItem::Mcq(m) => {
            match (m.kind, m.correct) {
                (McqKind::Known, None) => v.push("Known requires correct".to_string()),
                (McqKind::Unknown, Some(_)) => v.push("Unknown must not carry correct".to_string()),
                _ => {}
            }
            if m.option_a == m.option_b {
                v.push("option_a must differ from option_b".to_string());
            }
            if m.id.trim().is_empty() {
                v.push("id must be non-empty".to_string());
            }
        }
        DatasetItem::Inform(s) => {
            let actual = word_count(&s.text);
            if actual != s.word_count {
                v.push(format!("word_count {} does not match text ({actual})", s.word_count));
            }
        }
        DatasetItem::Scene(s) => {
            let bound = s.bindings();
            for (slot, scope) in &s.slot_scopes {
                if !bound.contains_key(slot) {
                    v.push(format!("slot scope names unbound slot {slot}"));
                }
                v.extend(scope.shape_violations());
            }
        }
        DatasetItem::Identity(p) => {
            if p.id.trim().is_empty() {
                v.push("id must be non-empty".to_string());
            }
            if p.kind == AgentKind::ScriptedPersona && p.script.is_none() {
                v.push("scripted persona requires a response script reference".to_string());
            }
            if p.memory.windows(2).any(|w| w[1].round_index < w[0].round_index) {
                v.push("memory round_index must be non-decreasing".to_string());
            }
        }
        DatasetItem::IdentityPair(p) => {
            if p.inferior == p.superior {
                v.push("inferior must differ from superior".to_string());
            }
        }
        DatasetItem::Scope(s) => v.extend(s.shape_violations()),
        DatasetItem::Message(m) => {
            v.extend(m.scope.shape_violations());
            match &m.scope {
                KnowledgeScope::Common => {
                    if m.recipients.contains(&m.sender) {
                        v.push("sender must not receive its own common message".to_string());
                    }
                }
                KnowledgeScope::ConfidentialMutual(ids) => {
                    if &m.recipients != ids {
                        v.push("recipients must equal the confidential set".to_string());
                    }
                }
                KnowledgeScope::Private(id) => {
                    if m.recipients.len() != 1 || !m.recipients.contains(id) {
                        v.push("recipients must be exactly the private target".to_string());
                    }
                }
            }
        }
        DatasetItem::Condition(c) => {
            if !HERD_GROUP_SIZES.contains(&c.n_humans) {
                v.push(format!("n_humans {} not in configured set {:?}", c.n_humans, HERD_GROUP_SIZES));
            }
        }
        DatasetItem::Outcome(o) => {
            if o.verdicts.is_empty() {
                v.push("verdicts must be non-empty".to_string());
            }
            if let Some(f) = &o.favor {
                let (lo, hi) = INITIAL_LEVEL_RANGE;
                if !(lo..=hi).contains(&f.initial_level) {
                    v.push("initial_level out of [1,10]".to_string());
                }
                if let Some(fl) = f.final_level {
                    let (lo, hi) = FINAL_LEVEL_RANGE;
                    if !(lo..=hi).contains(&fl) {
                        v.push("final_level out of [1,11]".to_string());
                    }
                }
            }
        }
    }
    ValidationReport { violations: v }
}

/// Header line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub run_id: String,
    pub experiment: Experiment,
    pub backend_id: String,
    pub model: String,
    pub temperature: f64,
    pub seed: u64,
    pub started_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub inquiry_id: String,
    #[serde(flatten)]
    pub message: Message,
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Header(TranscriptHeader),
    Message(LoggedMessage),
    Outcome(InquiryOutcome),
    Footer { finished_at: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub messages: Vec<LoggedMessage>,
    pub outcomes: Vec<InquiryOutcome>,
    pub finished_at: Option<String>,
    /// Emission order of messages and outcomes, as indices into the two
    /// vectors (`true` = outcome).
    #[serde(skip)]
    order: Vec<(bool, usize)>,
}

impl Transcript {
    pub fn new(header: TranscriptHeader) -> Self {
        Self { header, messages: Vec::new(), outcomes: Vec::new(), finished_at: None, order: Vec::new() }
    }

    pub fn push_message(&mut self, m: LoggedMessage) {
        self.order.push((false, self.messages.len()));
        self.messages.push(m);
    }

    pub fn push_outcome(&mut self, o: InquiryOutcome) {
        self.order.push((true, self.outcomes.len()));
        self.outcomes.push(o);
    }

    /// Records in emission order, header first.
    pub fn records(&self) -> Vec<TranscriptRecord> {
        let mut out = vec![TranscriptRecord::Header(self.header.clone())];
        for &(is_outcome, i) in &self.order {
            out.push(if is_outcome {
                TranscriptRecord::Outcome(self.outcomes[i].clone())
            } else {
                TranscriptRecord::Message(self.messages[i].clone())
            });
        }
        if let Some(f) = &self.finished_at {
            out.push(TranscriptRecord::Footer { finished_at: f.clone() });
        }
        out
    }

    pub fn to_ndjson(&self) -> Result<String, serde_json::Error> {
        let mut s = String::new();
        for r in self.records() {
            s.push_str(&serde_json::to_string(&r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Parses a transcript. A truncated final line (from a killed run) is
    /// ignored; any other malformed line is an error.
    pub fn from_ndjson(text: &str) -> Result<Self, DomainError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut transcript: Option<Transcript> = None;
        for (i, line) in lines.iter().enumerate() {
            let record: TranscriptRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
                Err(e) => return Err(DomainError::Transcript { line: i + 1, reason: e.to_string() }),
            };
            match (record, transcript.as_mut()) {
                (TranscriptRecord::Header(h), None) => transcript = Some(Transcript::new(h)),
                (TranscriptRecord::Header(_), Some(_)) => {
                    return Err(DomainError::Transcript { line: i + 1, reason: "duplicate header".into() })
                }
                (_, None) => {
                    return Err(DomainError::Transcript { line: i + 1, reason: "missing header".into() })
                }
                (TranscriptRecord::Message(m), Some(t)) => t.push_message(m),
                (TranscriptRecord::Outcome(o), Some(t)) => t.push_outcome(o),
                (TranscriptRecord::Footer { finished_at }, Some(t)) => t.finished_at = Some(finished_at),
            }
        }
        transcript.ok_or(DomainError::Transcript { line: 0, reason: "empty transcript".into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(correct: Option<OptionLabel>) -> McqItem {
        McqItem {
            id: "k1".into(),
            question: "What is the color of the apple?".into(),
            option_a: "Red".into(),
            option_b: "Blue".into(),
            kind: McqKind::Known,
            correct,
        }
    }

    #[test]
    fn known_mcq_with_answer_is_ok() {
        assert!(validate_item(&DatasetItem::Mcq(known(Some(OptionLabel::A)))).is_ok());
    }

    #[test]
    fn known_mcq_without_answer_is_flagged() {
        let r = validate_item(&DatasetItem::Mcq(known(None)));
        assert_eq!(r.violations, vec!["Known requires correct".to_string()]);
    }

    #[test]
    fn unknown_with_answer_and_equal_options() {
        let mut m = known(Some(OptionLabel::B));
        m.kind = McqKind::Unknown;
        m.option_b = m.option_a.clone();
        assert_eq!(validate_item(&DatasetItem::Mcq(m)).violations.len(), 2);
    }

    #[test]
    fn mutual_scope_needs_two_ids() {
        let r = validate_item(&DatasetItem::Scope(KnowledgeScope::mutual(["x"])));
        assert!(r.violations[0].contains("set size >= 2"));
        assert!(validate_item(&DatasetItem::Scope(KnowledgeScope::mutual(["x", "y"]))).is_ok());
    }

    #[test]
    fn validation_does_not_mutate() {
        let item = DatasetItem::Mcq(known(None));
        let before = item.clone();
        let _ = validate_item(&item);
        assert_eq!(item, before);
    }

    #[test]
    fn inform_word_count_checked() {
        let mut s = InformStory::new("s1", "Evan dropped a coin, wishing.");
        assert_eq!(s.word_count, 5);
        assert!(validate_item(&DatasetItem::Inform(s.clone())).is_ok());
        s.word_count = 4;
        assert!(!validate_item(&DatasetItem::Inform(s)).is_ok());
    }

    #[test]
    fn scene_scope_on_missing_slot() {
        let mut scene = Scene {
            id: "s".into(),
            scenario: "A job interview".into(),
            resource: None,
            relation: None,
            action: None,
            parent_scene: None,
            slot_scopes: BTreeMap::new(),
        };
        scene.slot_scopes.insert("RESOURCE".into(), KnowledgeScope::Common);
        assert!(!validate_item(&DatasetItem::Scene(scene.clone())).is_ok());
        scene.resource = Some("a position".into());
        assert!(validate_item(&DatasetItem::Scene(scene)).is_ok());
    }

    #[test]
    fn scripted_persona_needs_script() {
        let mut p = AgentProfile::scripted("h1", "Human 1", "herd");
        assert!(validate_item(&DatasetItem::Identity(p.clone())).is_ok());
        p.script = None;
        assert!(!validate_item(&DatasetItem::Identity(p)).is_ok());
    }

    #[test]
    fn condition_parsing_and_labels() {
        let c: ScenarioCondition = "uK[49W]".parse().unwrap();
        assert_eq!(c, ScenarioCondition::new(McqKind::Unknown, 49, Variation::AllWrong));
        assert_eq!(c.label(), "uK[49W]");
        assert_eq!("k7r".parse::<ScenarioCondition>().unwrap().tag(), "7R");
        assert!("X7W".parse::<ScenarioCondition>().is_err());
        assert!("K0W".parse::<ScenarioCondition>().is_err());
        let headers: Vec<String> = ScenarioCondition::table_order().iter().map(|c| c.label()).collect();
        assert_eq!(
            headers,
            ["K[7W]", "K[7R]", "K[7N]", "K[49W]", "uK[7W]", "uK[7R]", "uK[7N]", "uK[49W]"]
        );
    }

    #[test]
    fn rate_key_renders_canonically() {
        let k = RateKey::new(RateMetric::Bqa, "K", "S", "H");
        assert_eq!(k.to_string(), "Rate_Bqa[K][S][H]");
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.as_str().parse::<Experiment>().unwrap(), e);
        }
        assert_eq!("Ben Franklin".parse::<Experiment>().unwrap(), Experiment::BenFranklin);
        assert!("telepathy".parse::<Experiment>().is_err());
    }

    #[test]
    fn truncated_transcript_tail_is_ignored() {
        let header = TranscriptHeader {
            run_id: "r".into(),
            experiment: Experiment::Gambler,
            backend_id: "mock".into(),
            model: "m".into(),
            temperature: 1.0,
            seed: 1,
            started_at: "t".into(),
        };
        let t = Transcript::new(header);
        let mut text = t.to_ndjson().unwrap();
        text.push_str("{\"record\":\"outc");
        let back = Transcript::from_ndjson(&text).unwrap();
        assert_eq!(back, t);
    }
}
