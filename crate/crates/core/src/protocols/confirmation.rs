//! Anchoring on a stated valuation when choosing between two offers.

use crate::agent::{bindings, ids};
use crate::backend::Session;
use crate::domain::{KnowledgeScope, OptionLabel};
use crate::error::ProtocolError;
use crate::evaluators::parse_choice;
use crate::topology::{human_id, Combination, CommMode};

use super::{
    agent_identity, choice_verdicts, dollars, execute, inquiry_id, survey_exchange, Exchange, InquiryResult,
    OutcomeDraft, ProtocolConfig, ProtocolContext, ProtocolMode, ProtocolParams, ProtocolRun, Sink, QUESTIONER,
    SYSTEM,
};

pub const DATASET_TAG: &str = "Price";
pub const DEFAULT_ITEM: &str = "a water cup";
pub const DEFAULT_ANCHOR: u64 = 1000;
pub const DEFAULT_OFFER_A: u64 = 50;
pub const DEFAULT_OFFER_B: u64 = 250;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offers {
    pub item: String,
    pub anchor: u64,
    pub offer_a: u64,
    pub offer_b: u64,
}

impl Offers {
    pub fn from_params(p: &ProtocolParams) -> Result<Self, ProtocolError> {
        let o = Offers {
            item: p.item.clone().unwrap_or_else(|| DEFAULT_ITEM.to_string()),
            anchor: p.anchor.unwrap_or(DEFAULT_ANCHOR),
            offer_a: p.offer_a.unwrap_or(DEFAULT_OFFER_A),
            offer_b: p.offer_b.unwrap_or(DEFAULT_OFFER_B),
        };
        if o.offer_a == o.offer_b || o.offer_a >= o.anchor || o.offer_b >= o.anchor {
            return Err(ProtocolError::DegenerateOffers);
        }
        Ok(o)
    }

    /// The offer nearer the anchor.
    pub fn anchored_option(&self) -> OptionLabel {
        if self.offer_b > self.offer_a {
            OptionLabel::B
        } else {
            OptionLabel::A
        }
    }

    pub fn condition_tag(&self) -> String {
        format!("{}:{}/{}", self.anchor, self.offer_a, self.offer_b)
    }
}

struct Spec {
    rep: u32,
    q: u32,
}

pub fn run(cfg: &ProtocolConfig, ctx: &ProtocolContext<'_>, sink: &mut Sink<'_>) -> Result<ProtocolRun, ProtocolError> {
    let offers = Offers::from_params(&cfg.params)?;
    let specs: Vec<Spec> =
        (0..cfg.repetitions).flat_map(|rep| (0..cfg.questions).map(move |q| Spec { rep, q })).collect();
    let identity = agent_identity(cfg, ctx.data)?;
    execute(&specs, cfg, ctx, |index, spec, session| inquiry(cfg, ctx, &identity, &offers, index, spec, session), sink)
}

fn inquiry(
    cfg: &ProtocolConfig,
    ctx: &ProtocolContext<'_>,
    identity: &str,
    offers: &Offers,
    index: usize,
    spec: &Spec,
    session: &mut Session,
) -> Result<InquiryResult, ProtocolError> {
    let id = inquiry_id(cfg, index);
    let (anchor, a, b) = (dollars(offers.anchor), dollars(offers.offer_a), dollars(offers.offer_b));
    let (reply, log, rounds) = match cfg.mode {
        ProtocolMode::Survey => {
            let mut ex = survey_exchange(id, identity)?;
            let prompt = ctx.templates.render(
                ids::CONFIRMATION_SURVEY,
                &bindings([("ITEM", offers.item.as_str()), ("ANCHOR", &anchor), ("OFFER_A", &a), ("OFFER_B", &b)]),
            )?;
            let reply = ex.ask(QUESTIONER, 0, &prompt, 1, ctx, session, cfg.params.reasoning)?;
            (reply, ex.log, 1)
        }
        ProtocolMode::Simulation => {
            let mut ex = Exchange::new(Combination::SingleHSingleA, 1, 1, CommMode::PointToPoint, id, identity)?;
            let setup = ctx.templates.render(ids::CONFIRMATION_SETUP, &bindings([("ITEM", offers.item.as_str())]))?;
            ex.send(SYSTEM, &setup, &KnowledgeScope::Common, 0)?;
            let claim = ctx.templates.render(ids::CONFIRMATION_ANCHOR, &bindings([("ANCHOR", anchor.as_str())]))?;
            ex.send(&human_id(0), &claim, &KnowledgeScope::Common, 1)?;
            let query =
                ctx.templates.render(ids::CONFIRMATION_QUERY, &bindings([("OFFER_A", a.as_str()), ("OFFER_B", &b)]))?;
            let reply = ex.ask(&human_id(0), 0, &query, 2, ctx, session, cfg.params.reasoning)?;
            (reply, ex.log, 2)
        }
    };
    let parsed = parse_choice(&reply);
    let verdicts = choice_verdicts(&parsed, offers.anchored_option());
    let outcome = OutcomeDraft {
        cfg,
        index,
        tags: [cfg.mode.metric().as_str().into(), DATASET_TAG.into(), offers.condition_tag()],
        repetition: spec.rep,
        question: spec.q,
        rounds,
    }
    .finish(parsed, verdicts);
    Ok(InquiryResult { messages: log, outcomes: vec![outcome], ..Default::default() })
}
