use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("unrecognised condition {0:?} (expected e.g. K[7W])")]
    BadCondition(String),
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("transcript line {line}: {reason}")]
    Transcript { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing auth secret: environment variable {0} is not set")]
    MissingAuth(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding for slot {0}")]
    MissingSlot(String),
    #[error("binding for unknown slot {0}")]
    UnknownSlot(String),
    #[error("template {id}: placeholders and required slots disagree")]
    SlotMismatch { id: String },
    #[error("no template registered under {0:?}")]
    NotRegistered(String),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent {agent} is not a recipient of this message")]
    NotARecipient { agent: String },
    #[error("respond called on scripted persona {0}")]
    ScriptedAgentMisuse(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("scope references non-participant {0}")]
    ScopeViolation(String),
    #[error("sender and receiver are both {0}")]
    SelfSend(String),
    #[error("{0} is not a participant")]
    NotAParticipant(String),
    #[error("capacity set is empty")]
    EmptySet,
    #[error("invalid combination {kind}: {n_humans} human(s), {n_agents} agent(s)")]
    InvalidCombination { kind: String, n_humans: usize, n_agents: usize },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Schema { path: PathBuf, line: usize, reason: String },
    #[error("manifest lists {expected} items for {path} but file holds {actual}")]
    CountMismatch { path: PathBuf, expected: usize, actual: usize },
    #[error("repetitions must be at least 1")]
    InvalidRepetitions,
    #[error("qualification needs a Known item with a declared answer ({0})")]
    NotQualifiable(String),
    #[error("sample of {requested} from {available} items")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("similarity provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("similarity inputs must be non-empty")]
    EmptyInput,
    #[error("judge reply not parseable: {0:?}")]
    JudgeParseFailure(String),
    #[error("original length must be positive")]
    ZeroOriginal,
    #[error("label refers to unknown outcome {0}")]
    UnknownOutcomeId(String),
    #[error("duplicate label for outcome {0}")]
    DuplicateLabel(String),
    #[error("{path}:{line}: {reason}")]
    LabelFile { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid protocol config: {0}")]
    Config(String),
    #[error("offers must differ and both sit below the anchor")]
    DegenerateOffers,
    #[error("gambler NUMBER must be at least 1")]
    NoLossHistory,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

impl ProtocolError {
    pub fn is_backend_exhaustion(&self) -> bool {
        matches!(
            self,
            ProtocolError::Agent(AgentError::Backend(_))
                | ProtocolError::Eval(EvalError::Backend(_))
                | ProtocolError::Dataset(DatasetError::Backend(_))
        )
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no outcomes match the selection")]
    EmptySelection,
    #[error("empty list")]
    EmptyList,
    #[error("rates are not commensurable: {0}")]
    Incommensurable(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}
