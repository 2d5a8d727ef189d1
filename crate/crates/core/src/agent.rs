//! Individual agent runtime: prompt templates, short-term memory and the
//! single-call respond step.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{ChatClient, ChatRequest, ChatResponse, Turn};
use crate::domain::{AgentProfile, MemoryEntry, Message};
use crate::error::{AgentError, TemplateError};

/// Explanation-eliciting suffix appended in chain-of-thought mode.
pub const COT_SUFFIX: &str = "Please provide your answer and briefly explain why you chose it.";
const COT_MARKER: &str = "briefly explain why you chose it";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningMode {
    #[default]
    DirectInference,
    ChainOfThought,
}

impl ReasoningMode {
    pub fn apply(self, query: &str) -> String {
        match self {
            ReasoningMode::DirectInference => query.to_string(),
            ReasoningMode::ChainOfThought if query.contains(COT_MARKER) => query.to_string(),
            ReasoningMode::ChainOfThought => {
                let q = query.trim_end();
                if q.is_empty() {
                    COT_SUFFIX.to_string()
                } else {
                    format!("{q} {COT_SUFFIX}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub fixed_context: String,
    pub required_slots: BTreeSet<String>,
}

/// Byte spans of `[SLOT]` placeholders: uppercase letters, digits and
/// underscores only, starting with a letter.
fn placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let start = i;
            let mut j = i + 1;
            if j < bytes.len() && bytes[j].is_ascii_uppercase() {
                while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b']' {
                    out.push((start, j + 1, &text[start + 1..j]));
                    i = j + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// True if `text` still contains an unreplaced `[SLOT]` token.
pub fn has_placeholder(text: &str) -> bool {
    !placeholders(text).is_empty()
}

impl PromptTemplate {
    /// Builds a template whose required slots are exactly its placeholders.
    pub fn new(id: impl Into<String>, fixed_context: impl Into<String>) -> Self {
        let fixed_context = fixed_context.into();
        let required_slots = placeholders(&fixed_context).into_iter().map(|(_, _, s)| s.to_string()).collect();
        Self { id: id.into(), fixed_context, required_slots }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let found: BTreeSet<String> =
            placeholders(&self.fixed_context).into_iter().map(|(_, _, s)| s.to_string()).collect();
        if found != self.required_slots {
            return Err(TemplateError::SlotMismatch { id: self.id.clone() });
        }
        Ok(())
    }

    /// Inverse of [`assemble_prompt`]: if `text` is an instance of this
    /// template, returns the bindings. Matching is greedy-free: each slot
    /// extends to the next literal fragment.
    pub fn match_instance(&self, text: &str) -> Option<BTreeMap<String, String>> {
        let spans = placeholders(&self.fixed_context);
        if spans.is_empty() {
            return (text == self.fixed_context).then(BTreeMap::new);
        }
        let mut literals = Vec::with_capacity(spans.len() + 1);
        let mut prev = 0;
        for (s, e, _) in &spans {
            literals.push(&self.fixed_context[prev..*s]);
            prev = *e;
        }
        literals.push(&self.fixed_context[prev..]);

        let mut rest = text.strip_prefix(literals[0])?;
        let mut out = BTreeMap::new();
        for (k, (_, _, slot)) in spans.iter().enumerate() {
            let next = literals[k + 1];
            let value = if k + 1 == spans.len() {
                let v = rest.strip_suffix(next)?;
                rest = "";
                v
            } else {
                if next.is_empty() {
                    return None;
                }
                let at = rest.find(next)?;
                let v = &rest[..at];
                rest = &rest[at + next.len()..];
                v
            };
            if let Some(prev) = out.insert(slot.to_string(), value.to_string()) {
                if prev != value {
                    return None;
                }
            }
        }
        Some(out)
    }
}

/// Fills every `[SLOT]` with its binding. Substitution is a single literal
/// pass: brackets inside bound values are never expanded.
pub fn assemble_prompt(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    if let Some(missing) = template.required_slots.iter().find(|s| !bindings.contains_key(*s)) {
        return Err(TemplateError::MissingSlot(missing.clone()));
    }
    if let Some(unknown) = bindings.keys().find(|k| !template.required_slots.contains(*k)) {
        return Err(TemplateError::UnknownSlot(unknown.clone()));
    }
    let text = &template.fixed_context;
    let mut out = String::with_capacity(text.len() + 64);
    let mut prev = 0;
    for (s, e, slot) in placeholders(text) {
        out.push_str(&text[prev..s]);
        match bindings.get(slot) {
            Some(v) => out.push_str(v),
            // Bracketed token that is not a declared slot: keep as literal.
            None => out.push_str(&text[s..e]),
        }
        prev = e;
    }
    out.push_str(&text[prev..]);
    Ok(out)
}

/// Convenience for building bindings from string pairs.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Template ids shipped with the harness.
pub mod ids {
    pub const BARE_MCQ: &str = "bare_mcq";
    pub const HERD_SURVEY: &str = "herd_survey";
    pub const HERD_SETUP: &str = "herd_setup";
    pub const HERD_HUMAN: &str = "herd_human";
    pub const HERD_QUERY: &str = "herd_query";
    pub const AUTHORITY_SURVEY: &str = "authority_survey";
    pub const AUTHORITY_SETUP: &str = "authority_setup";
    pub const AUTHORITY_CLAIM: &str = "authority_claim";
    pub const AUTHORITY_QUERY: &str = "authority_query";
    pub const FRANKLIN_SURVEY: &str = "ben_franklin_survey";
    pub const FRANKLIN_SURVEY_CONTROL: &str = "ben_franklin_survey_control";
    pub const FRANKLIN_SCENE: &str = "ben_franklin_scene";
    pub const FRANKLIN_RELATION: &str = "ben_franklin_relation";
    pub const FRANKLIN_LEVEL: &str = "ben_franklin_level";
    pub const FRANKLIN_FAVOR: &str = "ben_franklin_favor";
    pub const FRANKLIN_QUERY: &str = "ben_franklin_query";
    pub const CONFIRMATION_SURVEY: &str = "confirmation_survey";
    pub const CONFIRMATION_SETUP: &str = "confirmation_setup";
    pub const CONFIRMATION_ANCHOR: &str = "confirmation_anchor";
    pub const CONFIRMATION_QUERY: &str = "confirmation_query";
    pub const HALO_SURVEY: &str = "halo_survey";
    pub const HALO_SETUP: &str = "halo_setup";
    pub const HALO_STRANGER: &str = "halo_stranger";
    pub const HALO_BESTIE: &str = "halo_bestie";
    pub const HALO_QUERY: &str = "halo_query";
    pub const RUMOR_RELAY: &str = "rumor_relay";
    pub const GAMBLER_SURVEY: &str = "gambler_survey";
    pub const JUDGE_SAME: &str = "judge_same";
}

const MCQ_FORMAT: &str = "Reply in the following format: Answer: A/B. Explanation: ***.";

fn default_templates() -> Vec<PromptTemplate> {
    use ids::*;
    let t = |id: &str, text: &str| PromptTemplate::new(id, text);
    vec![
        t(BARE_MCQ, &format!("The question is: [MCQ] {MCQ_FORMAT}")),
        t(
            HERD_SURVEY,
            &format!(
                "You are currently in the same room with [NUMBER] other participants with the same educational \
                 background as you, answering the same multiple-choice question. The question is: [MCQ] \
                 [OBSERVATION] Please provide your answer and briefly explain why you chose it. {MCQ_FORMAT}"
            ),
        ),
        t(
            HERD_SETUP,
            "You are currently in [SCENARIO] with [NUMBER] other participants with the same educational background \
             as you, answering the same multiple-choice question. The question is: [MCQ]",
        ),
        t(HERD_HUMAN, "[SPEAKER]: \"[STATEMENT]\""),
        t(HERD_QUERY, &format!("Please provide your answer and briefly explain why you chose it. {MCQ_FORMAT}")),
        t(
            AUTHORITY_SURVEY,
            "As a [INFERIOR], you are [SCENARIO]. And I am your [SUPERIOR] who also happens to be an expert in \
                 the following field. You are all currently taking a multiple-choice test, and the question you are \
                 working on is as follows: [MCQ]. As an expert, I confirm that the answer should be B. Please provide \
                 your answer and reply in the following format: Answer: A/B. Explanation: ***.",
        ),
        t(
            AUTHORITY_SETUP,
            "As a [INFERIOR], you are [SCENARIO]. You are all currently taking a multiple-choice test, and the \
             question you are working on is as follows: [MCQ].",
        ),
        t(
            AUTHORITY_CLAIM,
            "Your [SUPERIOR], who also happens to be an expert in the following field, says \"As an expert, I \
             confirm that the answer should be B.\"",
        ),
        t(AUTHORITY_QUERY, "Please provide your answer and reply in the following format: Answer: A/B. Explanation: ***."),
        t(
            FRANKLIN_SURVEY,
            "You are a participant in [SCENARIO]. I am your competitor, and at this moment, we are both vying for \
             [RESOURCE], yet we are [RELATION]. Your favorability towards me from level 1 to 11 is level: \
             [INITIAL_LEVEL]. I [ACTION]. Please rate your level of favorability towards me from 1 to 11 again. \
             Reply in the following format: Level: xx",
        ),
        t(
            FRANKLIN_SURVEY_CONTROL,
            "You are a participant in [SCENARIO]. I am your competitor, and at this moment, we are both vying for \
             [RESOURCE], yet we are [RELATION]. Your favorability towards me from level 1 to 11 is level: \
             [INITIAL_LEVEL]. Please rate your level of favorability towards me from 1 to 11 again. Reply in the \
             following format: Level: xx",
        ),
        t(FRANKLIN_SCENE, "Now you are at [SCENARIO] and you are competing for [RESOURCE]."),
        t(FRANKLIN_RELATION, "You are [RELATION] to each other."),
        t(FRANKLIN_LEVEL, "Your initial favorability level to the other is [INITIAL_LEVEL]."),
        t(FRANKLIN_FAVOR, "Your competitor asks you to [ACTION], and you do it."),
        t(
            FRANKLIN_QUERY,
            "Now, please rate the favorability of the other agent from 1 to 11 in the following format: Level: xx",
        ),
        t(
            CONFIRMATION_SURVEY,
            "You are participating in a pricing assessment study. I am the researcher who conducted the study and at \
             this time you are assessing the market price of [ITEM], and you think it is worth [ANCHOR]. Now I \
             presented two offers to buy this: Option A: [OFFER_A] Option B: [OFFER_B] Which offer, A or B, do you \
             think is the price to pay for this item? Please respond in the prescribed format: Answer: A/B. \
             Explanation: ***.",
        ),
        t(
            CONFIRMATION_SETUP,
            "You are participating in market research. Your task is to assess the market price of [ITEM].",
        ),
        t(CONFIRMATION_ANCHOR, "I think it is worth [ANCHOR]."),
        t(
            CONFIRMATION_QUERY,
            "Now I presented two offers to buy this: Option A: [OFFER_A] Option B: [OFFER_B] Which offer, A or B, do \
             you think is the price to pay for this item? Please respond in the prescribed format: Answer: A/B. \
             Explanation: ***.",
        ),
        t(
            HALO_SURVEY,
            "You're presently engaged in a multiple-choice evaluation, with restricted data, initially assessing \
             options A and B as equally probable solutions. However, [STRANGER] as [STRANGER_RELATION] with you \
             proposes that B is the correct response. [BESTIE] as [BESTIE_RELATION], suggests that the answer is A. \
             Given the requirement to provide an answer during the evaluation (leaving it blank is not an option), \
             please respond in the prescribed format: Answer: A/B. Explanation: ***.",
        ),
        t(
            HALO_SETUP,
            "You're at [SCENARIO], presently engaged in a multiple-choice evaluation, with restricted data, initially \
             assessing options A and B as equally probable solutions.",
        ),
        t(HALO_STRANGER, "[STRANGER] as [STRANGER_RELATION] with you says \"B is the correct response.\""),
        t(HALO_BESTIE, "[BESTIE] as [BESTIE_RELATION] says \"A is the correct response.\""),
        t(
            HALO_QUERY,
            "Given the requirement to provide an answer during the evaluation (leaving it blank is not an option), \
             please respond in the prescribed format: Answer: A/B. Explanation: ***.",
        ),
        t(
            RUMOR_RELAY,
            "You receive the following message: [MESSAGE]. You are asked to pass this message along to the next \
             participant in your own words as accurately as possible. Reply in the following format: [Message: ***].",
        ),
        t(
            GAMBLER_SURVEY,
            "You are currently answering a multiple-choice question. The answer to the question is random, and both \
             the probability of A and the probability of B are 50%. You have chosen B [NUMBER] times before, and all \
             of them were wrong, what would you choose for the [NEXT] time? Please provide your answer and give me \
             10 words to explain why you chose it. Answer in the following format: Answer: A/B. Explanation: ***. \
             Do not have a line break in between.",
        ),
        t(
            JUDGE_SAME,
            "Background: [BIAS]. Two pieces of information are given below. Instruction: Determine whether the \
             second piece conveys the same information as the first. Reply with exactly one word: same or \
             different.\nFirst: [ORIGINAL]\nSecond: [CANDIDATE]",
        ),
    ]
}

/// Lookup table of prompt templates, seeded with the shipped defaults.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self { templates: default_templates().into_iter().map(|t| (t.id.clone(), t)).collect() }
    }
}

impl TemplateRegistry {
    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates.get(id).ok_or_else(|| TemplateError::NotRegistered(id.to_string()))
    }

    pub fn render(&self, id: &str, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        assemble_prompt(self.get(id)?, bindings)
    }

    pub fn insert(&mut self, template: PromptTemplate) -> Result<(), TemplateError> {
        template.validate()?;
        self.templates.insert(template.id.clone(), template);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// Overrides defaults with templates from an ndjson file.
    pub fn load_overrides(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let t: PromptTemplate = serde_json::from_str(line)
                .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
            self.insert(t)?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        self.templates
            .values()
            .map(|t| serde_json::to_string(t).expect("template serializes") + "\n")
            .collect()
    }
}

/// Appends a routed message to the agent's short-term memory.
pub fn observe(agent: &mut AgentProfile, message: &Message) -> Result<(), AgentError> {
    if !message.recipients.contains(&agent.id) {
        return Err(AgentError::NotARecipient { agent: agent.id.clone() });
    }
    agent.memory.push(MemoryEntry {
        round_index: message.round_index,
        content: message.content.clone(),
        source: message.sender.clone(),
    });
    Ok(())
}

pub fn reset_memory(agent: &mut AgentProfile) {
    agent.memory.clear();
}

/// The request `respond` would send: identity text as system prompt, memory
/// entries as history (own utterances as assistant turns), then the query.
pub fn build_request(agent: &AgentProfile, query: &str, mode: ReasoningMode, temperature: f64) -> ChatRequest {
    let mut turns: Vec<Turn> = agent
        .memory
        .iter()
        .map(|m| if m.source == agent.id { Turn::assistant(&m.content) } else { Turn::user(&m.content) })
        .collect();
    turns.push(Turn::user(mode.apply(query)));
    ChatRequest { system_prompt: agent.identity_text.clone(), turns, temperature, seed: None }
}

/// One backend call on behalf of an LLM agent.
pub fn respond<C: ChatClient + ?Sized>(
    agent: &AgentProfile,
    query: &str,
    mode: ReasoningMode,
    client: &mut C,
    temperature: f64,
) -> Result<ChatResponse, AgentError> {
    if !agent.is_llm() {
        return Err(AgentError::ScriptedAgentMisuse(agent.id.clone()));
    }
    let request = build_request(agent, query, mode, temperature);
    Ok(client.complete_chat(&request)?)
}
