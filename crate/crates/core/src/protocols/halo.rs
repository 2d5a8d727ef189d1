//! Siding with a close friend over a stranger on an undecidable question.

use crate::agent::{bindings, ids};
use crate::backend::Session;
use crate::domain::{KnowledgeScope, OptionLabel};
use crate::error::ProtocolError;
use crate::evaluators::parse_choice;
use crate::topology::{human_id, Combination, CommMode};

use super::{
    agent_identity, choice_verdicts, execute, inquiry_id, survey_exchange, Exchange, InquiryResult, OutcomeDraft,
    ProtocolConfig, ProtocolContext, ProtocolMode, ProtocolRun, Sink, QUESTIONER, SYSTEM,
};

pub const DATASET_TAG: &str = "CogIdentity";
pub const DEFAULT_STRANGER: &str = "Ricky";
pub const DEFAULT_BESTIE: &str = "Hazel";
pub const DEFAULT_SCENARIO: &str = "a quiz competition";
const STRANGER_RELATION: &str = "stranger";
const BESTIE_RELATION: &str = "bestie";

struct Spec {
    rep: u32,
    q: u32,
}

pub fn run(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>, sink: &mut Sink<'_>) -> Result<ProtocolRun, ProtocolError> {
    let specs: Vec<Spec> =
        (0..cfg.repetitions).flat_map(|rep| (0..cfg.questions).map(move |q| Spec { rep, q })).collect();
    let identity = agent_identity(cfg, ctx.data)?;
    execute(&specs, cfg, ctx, |index, spec, session| inquiry(cfg, ctx, &identity, index, spec, session), sink)
}

fn inquiry(
    cfg: &ProtocolConfig,
    ctx: &ProtocolContext<'_>,
    identity: &str,
    index: usize,
    spec: &Spec,
    session: &mut Session,
) -> Result<InquiryResult, ProtocolError> {
    let id = inquiry_id(cfg, index);
    let stranger = cfg.params.stranger.as_deref().unwrap_or(DEFAULT_STRANGER);
    let bestie = cfg.params.bestie.as_deref().unwrap_or(DEFAULT_BESTIE);
    let (reply, log, rounds) = match cfg.mode {
        ProtocolMode::Survey => {
            let mut ex = survey_exchange(id, identity)?;
            let prompt = ctx.templates.render(
                ids::HALO_SURVEY,
                &bindings([
                    ("STRANGER", stranger),
                    ("STRANGER_RELATION", STRANGER_RELATION),
                    ("BESTIE", bestie),
                    ("BESTIE_RELATION", BESTIE_RELATION),
                ]),
            )?;
            let reply = ex.ask(QUESTIONER, 0, &prompt, 1, ctx, session, cfg.params.reasoning)?;
            (reply, ex.log, 1)
        }
        ProtocolMode::Simulation => {
            let mut ex = Exchange::new(Combination::MultiHSingleA, 2, 1, CommMode::Broadcast, id, identity)?;
            let scenario = cfg.params.scenario.as_deref().unwrap_or(DEFAULT_SCENARIO);
            let setup = ctx.templates.render(ids::HALO_SETUP, &bindings([("SCENARIO", scenario)]))?;
            ex.send(SYSTEM, &setup, &KnowledgeScope::Common, 0)?;
            let s = ctx.templates.render(
                ids::HALO_STRANGER,
                &bindings([("STRANGER", stranger), ("STRANGER_RELATION", STRANGER_RELATION)]),
            )?;
            ex.send(&human_id(0), &s, &KnowledgeScope::Common, 1)?;
            let b = ctx
                .templates
                .render(ids::HALO_BESTIE, &bindings([("BESTIE", bestie), ("BESTIE_RELATION", BESTIE_RELATION)]))?;
            ex.send(&human_id(1), &b, &KnowledgeScope::Common, 2)?;
            let query = ctx.templates.render(ids::HALO_QUERY, &Default::default())?;
            let reply = ex.ask(SYSTEM, 0, &query, 3, ctx, session, cfg.params.reasoning)?;
            (reply, ex.log, 3)
        }
    };
    let parsed = parse_choice(&reply);
    let verdicts = choice_verdicts(&parsed, OptionLabel::A);
    let outcome = OutcomeDraft {
        cfg,
        index,
        tags: [cfg.mode.metric().as_str().into(), DATASET_TAG.into(), format!("{STRANGER_RELATION}>{BESTIE_RELATION}")],
        repetition: spec.rep,
        question: spec.q,
        rounds,
    }
    .finish(parsed, verdicts);
    Ok(InquiryResult { messages: log, outcomes: vec![outcome], ..Default::default() })
}
