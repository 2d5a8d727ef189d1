//! Switching away from B after a streak of losses on a fair coin.

use crate::agent::{bindings, ids};
use crate::backend::Session;
use crate::domain::OptionLabel;
use crate::error::ProtocolError;
use crate::evaluators::parse_choice;

use super::{
    agent_identity, choice_verdicts, execute, inquiry_id, ordinal, survey_exchange, InquiryResult, OutcomeDraft,
    ProtocolConfig, ProtocolContext, ProtocolRun, Sink, QUESTIONER,
};

pub const DATASET_TAG: &str = "Random";
pub const DEFAULT_NUMBER: u32 = 3;

/// The configured losing streak.
pub fn streak(cfg: &ProtocolConfig) -> Result<u32, ProtocolError> {
    match cfg.params.number.unwrap_or(DEFAULT_NUMBER) {
        0 => Err(ProtocolError::NoLossHistory),
        n => Ok(n),
    }
}

struct Spec {
    rep: u32,
    q: u32,
}

pub fn run(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>, sink: &mut Sink<'_>) -> Result<ProtocolRun, ProtocolError> {
    let number = streak(cfg)?;
    let specs: Vec<Spec> =
        (0..cfg.repetitions).flat_map(|rep| (0..cfg.questions).map(move |q| Spec { rep, q })).collect();
    let identity = agent_identity(cfg, ctx.data)?;
    execute(&specs, cfg, ctx, |index, spec, session| inquiry(cfg, ctx, &identity, number, index, spec, session), sink)
}

fn inquiry(
    cfg: &ProtocolConfig,
    ctx: &ProtocolContext<'_>,
    identity: &str,
    number: u32,
    index: usize,
    spec: &Spec,
    session: &mut Session,
) -> Result<InquiryResult, ProtocolError> {
    let mut ex = survey_exchange(inquiry_id(cfg, index), identity)?;
    let n = number.to_string();
    let next = ordinal(number + 1);
    let prompt = ctx.templates.render(ids::GAMBLER_SURVEY, &bindings([("NUMBER", n.as_str()), ("NEXT", &next)]))?;
    let reply = ex.ask(QUESTIONER, 0, &prompt, 1, ctx, session, cfg.params.reasoning)?;
    let parsed = parse_choice(&reply);
    let verdicts = choice_verdicts(&parsed, OptionLabel::A);
    let outcome = OutcomeDraft {
        cfg,
        index,
        tags: [cfg.mode.metric().as_str().into(), DATASET_TAG.into(), format!("N{number}")],
        repetition: spec.rep,
        question: spec.q,
        rounds: 1,
    }
    .finish(parsed, verdicts);
    Ok(InquiryResult { messages: ex.log, outcomes: vec![outcome], ..Default::default() })
}
