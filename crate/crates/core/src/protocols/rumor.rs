//! Serial retelling of a story along a chain of agents.
//!
//! Agent k receives the piece produced by agent k-1 (agent 0 gets the
//! original), retells it once, and passes it on. Memory is off: every call
//! sees only the relay prompt. Each agent's output is one outcome.

use std::collections::BTreeMap;

use crate::agent::{bindings, ids, respond, PromptTemplate};
use crate::backend::{mix_seed, Session};
use crate::dataset::sample_items;
use crate::domain::{
    word_count, AgentProfile, Experiment, HopRecord, InformStory, InquiryOutcome, LoggedMessage,
    ParsedResponse, RateMetric,
};
use crate::error::{EvalError, ProtocolError};
use crate::evaluators::{
    content_length_rate, llm_judge_same, parse_relay, similarity_with_fallback, verdict_similarity, JudgeVerdict,
    JUDGE_TAG,
};
use crate::metrics::ChainTrajectory;
use crate::topology::{agent_id, build_combination, point_to_point, Combination, CommMode};

use super::{agent_identity, execute, inquiry_id, InquiryResult, ProtocolConfig, ProtocolContext, ProtocolRun, Sink, SYSTEM};

pub const DATASET_TAG: &str = "Inform";
pub const DEFAULT_AGENTS: usize = 15;
/// Extra condition tag on the last piece of each chain.
pub const FINAL_TAG: &str = "final";

pub fn chain_length(cfg: &ProtocolConfig) -> Result<usize, ProtocolError> {
    match cfg.params.agents.unwrap_or(DEFAULT_AGENTS) {
        n if n >= 2 => Ok(n),
        n => Err(ProtocolError::Config(format!("a rumor chain needs at least 2 agents, got {n}"))),
    }
}

/// Condition tag of a chain of `n` agents.
pub fn condition_tag(n: usize) -> String {
    format!("n{n}")
}

/// The message an agent passes on. A reply that reproduces the relay
/// prompt itself yields the message embedded in it.
pub fn extract_relay(reply: &str, relay: &PromptTemplate) -> String {
    if let Some(m) = relay.match_instance(reply.trim()).and_then(|mut b| b.remove("MESSAGE")) {
        return m;
    }
    parse_relay(reply)
}

struct Spec {
    rep: u32,
    q: u32,
    story: InformStory,
}

pub fn run(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>, sink: &mut Sink<'_>) -> Result<ProtocolRun, ProtocolError> {
    let n = chain_length(cfg)?;
    let stories = sample_items(&ctx.data.inform, cfg.questions as usize, mix_seed(cfg.seed, 3))?;
    let mut specs = Vec::new();
    for (q, story) in stories.iter().enumerate() {
        for rep in 0..cfg.repetitions {
            specs.push(Spec { rep, q: q as u32, story: story.clone() });
        }
    }
    let identity = agent_identity(cfg, ctx.data)?;
    execute(&specs, cfg, ctx, |index, spec, session| chain(cfg, ctx, &identity, n, index, spec, session), sink)
}

fn chain(
    cfg: &ProtocolConfig,
    ctx: &ProtocolContext<'_>,
    identity: &str,
    n: usize,
    index: usize,
    spec: &Spec,
    session: &mut Session,
) -> Result<InquiryResult, ProtocolError> {
    let topology = build_combination(Combination::MultiA, 0, n, CommMode::PointToPoint)?;
    let relay = ctx.templates.get(ids::RUMOR_RELAY)?;
    let id = inquiry_id(cfg, index);
    let mut judge = ctx.judge.map(|j| j.session(mix_seed(cfg.seed ^ 0x4A55_4447, index as u64)));
    let original = spec.story.text.as_str();
    let mut received = original.to_string();
    let mut log = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut scores = vec![1.0];
    for k in 0..n {
        let me = agent_id(k);
        let sender = if k == 0 { SYSTEM.to_string() } else { agent_id(k - 1) };
        let msg = point_to_point(&topology, &sender, &me, &received, k as u32)?;
        log.push(LoggedMessage { inquiry_id: id.clone(), message: msg });
        let agent = AgentProfile::llm(&me, &me, identity);
        let prompt = ctx.templates.render(ids::RUMOR_RELAY, &bindings([("MESSAGE", received.as_str())]))?;
        let reply = respond(&agent, &prompt, cfg.params.reasoning, session, ctx.temperature())?.content;
        let output = extract_relay(&reply, relay);

        let (score, tag) = similarity_with_fallback(original, &output, ctx.similarity);
        let mut verdicts = BTreeMap::new();
        verdicts.insert(tag.to_string(), verdict_similarity(score, ctx.threshold));
        if let Some(j) = judge.as_mut() {
            match llm_judge_same(original, &output, Experiment::RumorChain, j, ctx.templates) {
                Ok(v) => {
                    verdicts.insert(JUDGE_TAG.to_string(), v == JudgeVerdict::Different);
                }
                Err(EvalError::JudgeParseFailure(raw)) => {
                    log::warn!("{id} piece {k}: judge reply not parseable: {raw:?}");
                }
                Err(e) => return Err(e.into()),
            }
        }
        if k + 1 < n {
            scores.push(score);
        }
        let mut tags = vec![RateMetric::Bmha.as_str().to_string(), DATASET_TAG.to_string(), condition_tag(n)];
        if k + 1 == n {
            tags.push(FINAL_TAG.to_string());
        }
        outcomes.push(InquiryOutcome {
            id: format!("{id}/{k}"),
            inquiry_id: id.clone(),
            experiment: Experiment::RumorChain,
            condition_tags: tags,
            repetition_index: spec.rep,
            question_index: spec.q,
            parsed: ParsedResponse::FreeText(output.clone()),
            verdicts,
            api_calls: 1,
            rounds: n as u32,
            favor: None,
            hop: Some(HopRecord {
                agent_index: k as u32,
                input: received.clone(),
                output: output.clone(),
                words: word_count(&output),
                similarity: [(tag.to_string(), score)].into_iter().collect(),
            }),
        });
        received = output;
    }
    let length_rate = content_length_rate(word_count(original), word_count(&received))?;
    Ok(InquiryResult {
        index,
        messages: log,
        outcomes,
        trajectory: Some(ChainTrajectory { story_id: spec.story.id.clone(), repetition: spec.rep, scores }),
        length_rate: Some(length_rate),
    })
}
