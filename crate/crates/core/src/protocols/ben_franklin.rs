//! Favorability after doing a favor, against a no-favor control arm.
//!
//! Each trial pair shares its scene, favor and initial level; the arms
//! differ only in whether the favor is mentioned.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{bindings, ids};
use crate::backend::{mix_seed, Session};
use crate::dataset::{bind_scene, ROLE_X, ROLE_Y};
use crate::domain::{FavorGroup, FavorTrial, ParsedResponse, Scene, FINAL_LEVEL_RANGE, INITIAL_LEVEL_RANGE};
use crate::error::ProtocolError;
use crate::evaluators::{parse_rating, PARSER_TAG, UNPARSED_TAG};
use crate::topology::{agent_id, human_id, Combination, CommMode};

use super::{
    agent_identity, execute, inquiry_id, survey_exchange, Exchange, InquiryResult, OutcomeDraft, ProtocolConfig,
    ProtocolContext, ProtocolMode, ProtocolRun, Sink, QUESTIONER, SYSTEM,
};

pub const DATASET_TAG: &str = "CogScene";

struct Spec {
    group: FavorGroup,
    rep: u32,
    q: u32,
    action: Scene,
    initial: i64,
}

/// Initial level of trial pair (`rep`, `q`); both arms draw the same one.
pub fn initial_level(seed: u64, rep: u32, q: u32) -> i64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, 0xBF), (u64::from(rep) << 32) | u64::from(q)));
    rng.random_range(INITIAL_LEVEL_RANGE.0..=INITIAL_LEVEL_RANGE.1)
}

pub fn run(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>, sink: &mut Sink<'_>) -> Result<ProtocolRun, ProtocolError> {
    if ctx.data.actions.is_empty() {
        return Err(ProtocolError::Config("ben_franklin needs at least one cogaction record".into()));
    }
    let mut specs = Vec::new();
    for group in [FavorGroup::Experimental, FavorGroup::Control] {
        for rep in 0..cfg.repetitions {
            for q in 0..cfg.questions {
                let action = ctx.data.actions[q as usize % ctx.data.actions.len()].clone();
                specs.push(Spec { group, rep, q, action, initial: initial_level(cfg.seed, rep, q) });
            }
        }
    }
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
    let level = spec.initial.to_string();
    let extra = bindings([("INITIAL_LEVEL", level.as_str())]);
    let roles: BTreeMap<String, String> =
        [(ROLE_X.to_string(), agent_id(0)), (ROLE_Y.to_string(), human_id(0))].into_iter().collect();
    let experimental = spec.group == FavorGroup::Experimental;
    let (reply, log, rounds) = match cfg.mode {
        ProtocolMode::Survey => {
            let mut ex = survey_exchange(id, identity)?;
            let template_id = if experimental { ids::FRANKLIN_SURVEY } else { ids::FRANKLIN_SURVEY_CONTROL };
            let template = ctx.templates.get(template_id)?;
            let (bound, _) = bind_scene(&spec.action, &extra, template, &roles)?;
            let prompt = ctx.templates.render(template_id, &bound)?;
            let reply = ex.ask(QUESTIONER, 0, &prompt, 1, ctx, session, cfg.params.reasoning)?;
            (reply, ex.log, 1)
        }
        ProtocolMode::Simulation => {
            let mut ex = Exchange::new(Combination::SingleHSingleA, 1, 1, CommMode::PointToPoint, id, identity)?;
            let mut round = 1;
            for template_id in [ids::FRANKLIN_SCENE, ids::FRANKLIN_RELATION, ids::FRANKLIN_LEVEL] {
                let template = ctx.templates.get(template_id)?;
                let slot_extra = if template.required_slots.contains("INITIAL_LEVEL") { extra.clone() } else { Default::default() };
                let (bound, scopes) = bind_scene(&spec.action, &slot_extra, template, &roles)?;
                let text = ctx.templates.render(template_id, &bound)?;
                // A sentence carrying several slots goes to the narrowest audience.
                let scope = scopes.values().max_by_key(|s| narrowness(s)).cloned().unwrap_or(crate::domain::KnowledgeScope::Common);
                ex.send(SYSTEM, &text, &scope, round)?;
            }
            if experimental {
                round += 1;
                let template = ctx.templates.get(ids::FRANKLIN_FAVOR)?;
                let (bound, scopes) = bind_scene(&spec.action, &Default::default(), template, &roles)?;
                let text = ctx.templates.render(ids::FRANKLIN_FAVOR, &bound)?;
                ex.send(&human_id(0), &text, &scopes["ACTION"], round)?;
            }
            let query = ctx.templates.render(ids::FRANKLIN_QUERY, &Default::default())?;
            let reply = ex.ask(SYSTEM, 0, &query, round + 1, ctx, session, cfg.params.reasoning)?;
            (reply, ex.log, 3)
        }
    };
    let parsed = parse_rating(&reply, FINAL_LEVEL_RANGE.0, FINAL_LEVEL_RANGE.1);
    let mut verdicts = BTreeMap::new();
    match &parsed {
        ParsedResponse::Rating(v) => verdicts.insert(PARSER_TAG.to_string(), *v > spec.initial),
        _ => verdicts.insert(UNPARSED_TAG.to_string(), true),
    };
    let mut outcome = OutcomeDraft {
        cfg,
        index,
        tags: [cfg.mode.metric().as_str().into(), DATASET_TAG.into(), spec.group.tag().into()],
        repetition: spec.rep,
        question: spec.q,
        rounds,
    }
    .finish(parsed.clone(), verdicts);
    outcome.favor = Some(FavorTrial {
        group: spec.group,
        initial_level: spec.initial,
        final_level: parsed.rating(),
        scene_id: spec.action.parent_scene.clone().unwrap_or_default(),
        favor_action_id: spec.action.id.clone(),
    });
    Ok(InquiryResult { messages: log, outcomes: vec![outcome], ..Default::default() })
}

fn narrowness(scope: &crate::domain::KnowledgeScope) -> u8 {
    use crate::domain::KnowledgeScope::*;
    match scope {
        Common => 0,
        ConfidentialMutual(_) => 1,
        Private(_) => 2,
    }
}
