//! The seven experiment protocols and the machinery they share.
//!
//! Every protocol expands its config into an ordered list of inquiry specs
//! and runs them through [`execute`], which fans out over a thread pool
//! sized to the backend's in-flight cap and hands results to a sink in
//! inquiry order. Each inquiry draws from its own backend session, so the
//! output does not depend on scheduling.

pub mod authority;
pub mod ben_franklin;
pub mod confirmation;
pub mod gambler;
pub mod halo;
pub mod herd;
pub mod rumor;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{respond, ReasoningMode, TemplateRegistry};
use crate::backend::{mix_seed, Backend, Session};
use crate::dataset::{DatasetBundle, DatasetName};
use crate::domain::{
    AgentProfile, Experiment, InquiryOutcome, KnowledgeScope, LoggedMessage, McqKind, OptionLabel, ParsedResponse,
    RateMetric, SYSTEM_SENDER,
};
use crate::error::ProtocolError;
use crate::evaluators::{SimilarityProvider, PARSER_TAG, UNPARSED_TAG};
use crate::metrics::ChainTrajectory;
use crate::topology::{agent_id, build_combination, deliver, route_by_scope, Combination, CommMode, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    /// Single-prompt questionnaire.
    #[default]
    Survey,
    /// Multi-round exchange between scripted humans and agents.
    Simulation,
}

impl ProtocolMode {
    pub fn metric(self) -> RateMetric {
        match self {
            ProtocolMode::Survey => RateMetric::Bqa,
            ProtocolMode::Simulation => RateMetric::Bmha,
        }
    }
}

/// Subordinate/authority pairing with the setting it plays out in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityCase {
    pub inferior: String,
    pub superior: String,
    pub scenario: String,
}

/// Experiment-specific knobs. Unused fields are ignored by other
/// protocols; every field has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Herd conditions such as `K[7W]`; empty means all eight.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<String>,
    /// MCQ datasets for the authority protocol; empty means both.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<McqKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<AuthorityCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer_a: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer_b: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stranger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bestie: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Rumor chain length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    /// Gambler losing streak.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<u32>,
    /// CogIdentity id whose identity text becomes the agent's system prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_identity: Option<String>,
    #[serde(default)]
    pub reasoning: ReasoningMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Prefix of outcome ids; defaults to the experiment name.
    pub label: String,
    pub experiment: Experiment,
    pub backend: String,
    /// p: repetitions of each question.
    pub repetitions: u32,
    /// q: questions (or stories, scenes) drawn per condition.
    pub questions: u32,
    pub mode: ProtocolMode,
    pub seed: u64,
    pub params: ProtocolParams,
}

impl ProtocolConfig {
    pub fn new(experiment: Experiment, backend: impl Into<String>, repetitions: u32, questions: u32) -> Self {
        Self {
            label: experiment.as_str().to_string(),
            experiment,
            backend: backend.into(),
            repetitions,
            questions,
            mode: ProtocolMode::Survey,
            seed: 0,
            params: ProtocolParams::default(),
        }
    }

    pub fn with_mode(mut self, mode: ProtocolMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_params(mut self, params: ProtocolParams) -> Self {
        self.params = params;
        self
    }

    /// Datasets this protocol draws from, with the minimum size each needs.
    pub fn required_datasets(&self) -> Vec<(DatasetName, usize)> {
        let q = self.questions as usize;
        let mcq = |k: McqKind| match k {
            McqKind::Known => DatasetName::KnownMcq,
            McqKind::Unknown => DatasetName::UnknownMcq,
        };
        let mut out: Vec<(DatasetName, usize)> = match self.experiment {
            Experiment::Herd => herd::conditions(self)
                .map(|cs| cs.iter().map(|c| (mcq(c.dataset_kind), q)).collect())
                .unwrap_or_default(),
            Experiment::Authority if self.params.datasets.is_empty() => {
                vec![(DatasetName::KnownMcq, q), (DatasetName::UnknownMcq, q)]
            }
            Experiment::Authority => self.params.datasets.iter().map(|k| (mcq(*k), q)).collect(),
            Experiment::BenFranklin => vec![(DatasetName::Cogaction, 1)],
            Experiment::RumorChain => vec![(DatasetName::Inform, q)],
            _ => Vec::new(),
        };
        if self.params.agent_identity.is_some() {
            out.push((DatasetName::Cogidentity, 1));
        }
        out.sort();
        out.dedup();
        out
    }

    /// Everything wrong with this config, without running it.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let name = &self.label;
        if self.repetitions == 0 {
            v.push(format!("{name}: repetitions must be at least 1"));
        }
        if self.questions == 0 {
            v.push(format!("{name}: questions must be at least 1"));
        }
        let check = match self.experiment {
            Experiment::Herd => herd::conditions(self).map(|_| ()),
            Experiment::Confirmation => confirmation::Offers::from_params(&self.params).map(|_| ()),
            Experiment::Gambler => gambler::streak(self).map(|_| ()),
            Experiment::RumorChain => rumor::chain_length(self).map(|_| ()),
            _ => Ok(()),
        };
        if let Err(e) = check {
            v.push(format!("{name}: {e}"));
        }
        match (self.experiment, self.mode) {
            (Experiment::Gambler, ProtocolMode::Simulation) => {
                v.push(format!("{name}: gambler is defined as a survey only"))
            }
            (Experiment::RumorChain, ProtocolMode::Survey) => {
                v.push(format!("{name}: rumor_chain is defined as a simulation only"))
            }
            _ => {}
        }
        v
    }
}

/// Shared, read-only inputs of a protocol run.
#[derive(Clone, Copy)]
pub struct ProtocolContext<'a> {
    pub backend: &'a Backend,
    /// Judge model for the rumor chain's "A" evaluator.
    pub judge: Option<&'a Backend>,
    pub templates: &'a TemplateRegistry,
    pub data: &'a DatasetBundle,
    pub similarity: &'a SimilarityProvider,
    /// Similarity below this marks a relayed piece as distorted.
    pub threshold: f64,
}

impl ProtocolContext<'_> {
    pub fn temperature(&self) -> f64 {
        self.backend.config().temperature
    }
}

/// What one inquiry produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InquiryResult {
    pub index: usize,
    pub messages: Vec<LoggedMessage>,
    pub outcomes: Vec<InquiryOutcome>,
    pub trajectory: Option<ChainTrajectory>,
    /// Content-length rate of a rumor chain, original to final piece.
    pub length_rate: Option<f64>,
}

/// Everything a protocol run produced, in inquiry order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolRun {
    pub outcomes: Vec<InquiryOutcome>,
    pub trajectories: Vec<ChainTrajectory>,
    pub length_rates: Vec<f64>,
    pub inquiries: usize,
}

impl ProtocolRun {
    fn absorb(&mut self, r: InquiryResult) {
        self.inquiries += 1;
        self.outcomes.extend(r.outcomes);
        self.trajectories.extend(r.trajectory);
        self.length_rates.extend(r.length_rate);
    }
}

/// Receives each finished inquiry, in order.
pub type Sink<'s> = dyn FnMut(&InquiryResult) -> std::io::Result<()> + 's;

/// Runs `specs` in parallel batches; results reach `sink` in spec order.
/// On the first failing inquiry, results before it are still delivered.
pub fn execute<S, F>(
    specs: &[S],
    cfg: &ProtocolConfig,
    ctx: &ProtocolContext<'_>,
    run: F,
    sink: &mut Sink<'_>,
) -> Result<ProtocolRun, ProtocolError>
where
    S: Sync,
    F: Fn(usize, &S, &mut Session) -> Result<InquiryResult, ProtocolError> + Sync,
{
    let threads = ctx.backend.config().max_in_flight.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ProtocolError::Config(e.to_string()))?;
    let batch = threads * 8;
    let mut out = ProtocolRun::default();
    for (b, chunk) in specs.chunks(batch).enumerate() {
        let base = b * batch;
        let results: Vec<Result<InquiryResult, ProtocolError>> = pool.install(|| {
            chunk
                .par_iter()
                .enumerate()
                .map(|(i, spec)| {
                    let index = base + i;
                    let mut session = ctx.backend.session(mix_seed(cfg.seed, index as u64));
                    let mut r = run(index, spec, &mut session)?;
                    r.index = index;
                    Ok(r)
                })
                .collect()
        });
        for r in results {
            let r = r?;
            sink(&r)?;
            out.absorb(r);
        }
    }
    Ok(out)
}

/// Runs the protocol named in `cfg`.
pub fn run_protocol(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>, sink: &mut Sink<'_>) -> Result<ProtocolRun, ProtocolError> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(ProtocolError::Config(problems.join("; ")));
    }
    match cfg.experiment {
        Experiment::Herd => herd::run(cfg, ctx, sink),
        Experiment::Authority => authority::run(cfg, ctx, sink),
        Experiment::BenFranklin => ben_franklin::run(cfg, ctx, sink),
        Experiment::Confirmation => confirmation::run(cfg, ctx, sink),
        Experiment::Halo => halo::run(cfg, ctx, sink),
        Experiment::RumorChain => rumor::run(cfg, ctx, sink),
        Experiment::Gambler => gambler::run(cfg, ctx, sink),
    }
}

/// Like [`run_protocol`] but collects everything in memory.
pub fn run_collect(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>) -> Result<ProtocolRun, ProtocolError> {
    run_protocol(cfg, ctx, &mut |_| Ok(()))
}

pub(crate) fn inquiry_id(cfg: &ProtocolConfig, index: usize) -> String {
    format!("{}/{index:06}", cfg.label)
}

/// Verdict map for a choice-judged reply.
pub(crate) fn choice_verdicts(parsed: &ParsedResponse, biased: OptionLabel) -> BTreeMap<String, bool> {
    let mut v = BTreeMap::new();
    match parsed.choice() {
        Some(c) => v.insert(PARSER_TAG.to_string(), c == biased),
        None => v.insert(UNPARSED_TAG.to_string(), true),
    };
    v
}

/// Fields shared by every outcome of a single-call inquiry.
pub(crate) struct OutcomeDraft<'a> {
    pub cfg: &'a ProtocolConfig,
    pub index: usize,
    pub tags: [String; 3],
    pub repetition: u32,
    pub question: u32,
    pub rounds: u32,
}

impl OutcomeDraft<'_> {
    pub fn finish(self, parsed: ParsedResponse, verdicts: BTreeMap<String, bool>) -> InquiryOutcome {
        let id = inquiry_id(self.cfg, self.index);
        InquiryOutcome {
            id: format!("{id}/0"),
            inquiry_id: id,
            experiment: self.cfg.experiment,
            condition_tags: self.tags.to_vec(),
            repetition_index: self.repetition,
            question_index: self.question,
            parsed,
            verdicts,
            api_calls: 1,
            rounds: self.rounds,
            favor: None,
            hop: None,
        }
    }
}

/// Identity text for the agent, if the config names one.
pub(crate) fn agent_identity(cfg: &ProtocolConfig, data: &DatasetBundle) -> Result<String, ProtocolError> {
    match &cfg.params.agent_identity {
        None => Ok(String::new()),
        Some(id) => data
            .identities
            .iter()
            .find(|p| &p.id == id)
            .map(|p| p.identity_text.clone())
            .ok_or_else(|| ProtocolError::Config(format!("no identity {id:?} in cogidentity"))),
    }
}

/// One inquiry's participants, their memories and the message log.
pub(crate) struct Exchange {
    pub topology: Topology,
    pub profiles: Vec<AgentProfile>,
    pub log: Vec<LoggedMessage>,
    inquiry_id: String,
}

impl Exchange {
    pub fn new(
        kind: Combination,
        n_humans: usize,
        n_agents: usize,
        mode: CommMode,
        inquiry_id: String,
        identity: &str,
    ) -> Result<Self, ProtocolError> {
        let topology = build_combination(kind, n_humans, n_agents, mode)?;
        let profiles = topology
            .participants
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if p.kind == crate::domain::AgentKind::LlmAgent {
                    AgentProfile::llm(&p.id, &p.id, identity)
                } else {
                    AgentProfile::scripted(&p.id, format!("Participant {}", i + 1), "protocol")
                }
            })
            .collect();
        Ok(Self { topology, profiles, log: Vec::new(), inquiry_id })
    }

    /// Routes `content` under `scope`, delivers it and logs it.
    pub fn send(&mut self, sender: &str, content: &str, scope: &KnowledgeScope, round: u32) -> Result<(), ProtocolError> {
        let msg = route_by_scope(content, scope, &self.topology, sender, round)?;
        deliver(&msg, &mut self.profiles)?;
        self.log.push(LoggedMessage { inquiry_id: self.inquiry_id.clone(), message: msg });
        Ok(())
    }

    /// Poses `query` to agent `agent` (one backend call) and broadcasts the
    /// reply. The query is logged but, being the live prompt, is not added
    /// to memory before the call.
    pub fn ask(
        &mut self,
        sender: &str,
        agent: usize,
        query: &str,
        round: u32,
        ctx: &ProtocolContext<'_>,
        session: &mut Session,
        reasoning: ReasoningMode,
    ) -> Result<String, ProtocolError> {
        let id = agent_id(agent);
        let pos = self.profiles.iter().position(|p| p.id == id).ok_or_else(|| {
            ProtocolError::Topology(crate::error::TopologyError::NotAParticipant(id.clone()))
        })?;
        let q = route_by_scope(query, &KnowledgeScope::private(&id), &self.topology, sender, round)?;
        self.log.push(LoggedMessage { inquiry_id: self.inquiry_id.clone(), message: q });
        let reply = respond(&self.profiles[pos], query, reasoning, session, ctx.temperature())?.content;
        self.send(&id, &reply, &KnowledgeScope::Common, round)?;
        Ok(reply)
    }
}

/// Single-prompt survey: a questioner asks agent 0 once.
pub(crate) fn survey_exchange(inquiry_id: String, identity: &str) -> Result<Exchange, ProtocolError> {
    Exchange::new(Combination::SingleHSingleA, 1, 1, CommMode::PointToPoint, inquiry_id, identity)
}

pub(crate) const QUESTIONER: &str = "human_0";
pub(crate) const SYSTEM: &str = SYSTEM_SENDER;

/// `4th`, `11th`, `22nd`, ...
pub fn ordinal(n: u32) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// `$1,000`
pub fn dollars(v: u64) -> String {
    let digits = v.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    format!("${out}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, ScriptedPolicy};
    use crate::domain::ScenarioCondition;
    use crate::evaluators::SIMILARITY_THRESHOLD;

    fn fixture(policy: ScriptedPolicy) -> (Backend, TemplateRegistry, DatasetBundle, SimilarityProvider) {
        let backend = Backend::new(BackendConfig::scripted("mock", policy)).unwrap();
        (backend, TemplateRegistry::default(), DatasetBundle::samples(), SimilarityProvider::Fallback)
    }

    fn run_with(cfg: &ProtocolConfig, policy: ScriptedPolicy) -> (ProtocolRun, u64) {
        let (backend, templates, data, similarity) = fixture(policy);
        let ctx = ProtocolContext { backend: &backend, judge: None, templates: &templates, data: &data, similarity: &similarity, threshold: SIMILARITY_THRESHOLD };
        let run = run_collect(cfg, &ctx).unwrap();
        (run, backend.calls())
    }

    #[test]
    fn formatting_helpers() {
        assert_eq!(ordinal(4), "4th");
        assert_eq!(ordinal(1), "1st");
        assert_eq!(ordinal(12), "12th");
        assert_eq!(ordinal(22), "22nd");
        assert_eq!(dollars(1000), "$1,000");
        assert_eq!(dollars(50), "$50");
        assert_eq!(dollars(1234567), "$1,234,567");
    }

    #[test]
    fn herd_always_b_is_fully_biased() {
        let cfg = ProtocolConfig::new(Experiment::Herd, "mock", 2, 3);
        let (run, calls) = run_with(&cfg, ScriptedPolicy::fixed("Answer: B. Because."));
        let conditions = ScenarioCondition::table_order().len();
        assert_eq!(run.outcomes.len(), conditions * 6);
        assert_eq!(calls as usize, run.outcomes.len());
        assert!(run.outcomes.iter().all(|o| o.verdicts[PARSER_TAG]));
    }

    #[test]
    fn herd_simulation_records_declared_rounds() {
        let mut params = ProtocolParams::default();
        params.conditions = vec!["uK[7W]".into()];
        let cfg = ProtocolConfig::new(Experiment::Herd, "mock", 1, 2)
            .with_mode(ProtocolMode::Simulation)
            .with_params(params);
        let (run, calls) = run_with(&cfg, ScriptedPolicy::fixed("Answer: A."));
        assert_eq!(calls, 2);
        assert!(run.outcomes.iter().all(|o| o.rounds == 8 && o.api_calls == 1));
        assert!(run.outcomes.iter().all(|o| !o.verdicts[PARSER_TAG]));
    }

    #[test]
    fn unparsed_replies_carry_no_parser_verdict() {
        let cfg = ProtocolConfig::new(Experiment::Halo, "mock", 3, 1);
        let (run, _) = run_with(&cfg, ScriptedPolicy::fixed("I could not say."));
        assert!(run.outcomes.iter().all(|o| !o.verdicts.contains_key(PARSER_TAG) && o.verdicts[UNPARSED_TAG]));
    }

    #[test]
    fn degenerate_offers_rejected() {
        let mut params = ProtocolParams::default();
        params.offer_a = Some(250);
        let cfg = ProtocolConfig::new(Experiment::Confirmation, "mock", 1, 1).with_params(params);
        assert!(cfg.violations().iter().any(|v| v.contains("offer")));
        let mut params = ProtocolParams::default();
        params.offer_b = Some(1000);
        assert!(matches!(confirmation::Offers::from_params(&params), Err(ProtocolError::DegenerateOffers)));
    }

    #[test]
    fn gambler_needs_a_streak() {
        let mut params = ProtocolParams::default();
        params.number = Some(0);
        let cfg = ProtocolConfig::new(Experiment::Gambler, "mock", 1, 1).with_params(params);
        assert!(matches!(gambler::streak(&cfg), Err(ProtocolError::NoLossHistory)));
        assert!(!cfg.violations().is_empty());
    }

    #[test]
    fn mode_restrictions() {
        let g = ProtocolConfig::new(Experiment::Gambler, "mock", 1, 1).with_mode(ProtocolMode::Simulation);
        assert!(!g.violations().is_empty());
        let r = ProtocolConfig::new(Experiment::RumorChain, "mock", 1, 1);
        assert!(!r.violations().is_empty());
    }

    #[test]
    fn echo_chain_preserves_story() {
        let cfg = ProtocolConfig::new(Experiment::RumorChain, "mock", 2, 2).with_mode(ProtocolMode::Simulation);
        let (run, calls) = run_with(&cfg, ScriptedPolicy::echo());
        assert_eq!(calls, 2 * 2 * 15);
        assert_eq!(run.outcomes.len(), 60);
        assert_eq!(run.trajectories.len(), 4);
        for t in &run.trajectories {
            assert_eq!(t.scores.len(), 15);
            assert!(t.scores.iter().all(|s| *s == 1.0));
        }
        for o in &run.outcomes {
            let hop = o.hop.as_ref().unwrap();
            assert_eq!(hop.input, hop.output);
        }
        assert!(run.length_rates.iter().all(|r| *r == 0.0));
        assert_eq!(run.outcomes.iter().filter(|o| o.condition_tags.iter().any(|t| t == rumor::FINAL_TAG)).count(), 4);
    }

    #[test]
    fn franklin_arms_share_initial_levels() {
        let cfg = ProtocolConfig::new(Experiment::BenFranklin, "mock", 2, 3).with_seed(9);
        let (run, calls) = run_with(&cfg, ScriptedPolicy::fixed("Level: 11"));
        assert_eq!(calls, 12);
        let (exp, ctl): (Vec<_>, Vec<_>) =
            run.outcomes.iter().partition(|o| o.favor.as_ref().unwrap().group == crate::domain::FavorGroup::Experimental);
        for (a, b) in exp.iter().zip(&ctl) {
            assert_eq!(a.favor.as_ref().unwrap().initial_level, b.favor.as_ref().unwrap().initial_level);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = ProtocolConfig::new(Experiment::Authority, "mock", 3, 2).with_seed(5);
        let policy = ScriptedPolicy::conform(0.5, "Answer: B.", "Answer: A.", 77);
        let (a, _) = run_with(&cfg, policy.clone());
        let (b, _) = run_with(&cfg, policy);
        assert_eq!(a, b);
    }

    #[test]
    fn sink_sees_inquiries_in_order() {
        let cfg = ProtocolConfig::new(Experiment::Gambler, "mock", 5, 7);
        let (backend, templates, data, similarity) = fixture(ScriptedPolicy::fixed("Answer: A."));
        let ctx = ProtocolContext { backend: &backend, judge: None, templates: &templates, data: &data, similarity: &similarity, threshold: SIMILARITY_THRESHOLD };
        let mut seen = Vec::new();
        run_protocol(&cfg, &ctx, &mut |r| {
            seen.push(r.index);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, (0..35).collect::<Vec<_>>());
    }
}
