//! Interaction combinations, communication modes and scope-based routing.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::observe;
use crate::domain::{AgentKind, AgentProfile, KnowledgeScope, Message, SYSTEM_SENDER};
use crate::error::{AgentError, TopologyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    SingleHSingleA,
    SingleHMultiA,
    MultiHSingleA,
    MultiA,
    MultiHMultiA,
}

impl Combination {
    fn accepts(self, n_humans: usize, n_agents: usize) -> bool {
        match self {
            Combination::SingleHSingleA => n_humans == 1 && n_agents == 1,
            Combination::SingleHMultiA => n_humans == 1 && n_agents >= 2,
            Combination::MultiHSingleA => n_humans >= 2 && n_agents == 1,
            Combination::MultiA => n_humans == 0 && n_agents >= 2,
            Combination::MultiHMultiA => n_humans >= 2 && n_agents >= 2,
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Combination::SingleHSingleA => "Single-H-Single-A",
            Combination::SingleHMultiA => "Single-H-Multi-A",
            Combination::MultiHSingleA => "Multi-H-Single-A",
            Combination::MultiA => "Multi-A",
            Combination::MultiHMultiA => "Multi-H-Multi-A",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    Broadcast,
    PointToPoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub kind: AgentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub combination: Combination,
    pub mode: CommMode,
    pub participants: Vec<Participant>,
    pub speaking_order: Vec<String>,
}

/// Placeholder id of the `i`-th scripted human.
pub fn human_id(i: usize) -> String {
    format!("human_{i}")
}

/// Placeholder id of the `i`-th LLM agent.
pub fn agent_id(i: usize) -> String {
    format!("agent_{i}")
}

impl Topology {
    pub fn contains(&self, id: &str) -> bool {
        self.participants.iter().any(|p| p.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.participants.iter().map(|p| p.id.as_str())
    }

    pub fn humans(&self) -> impl Iterator<Item = &str> {
        self.participants.iter().filter(|p| p.kind == AgentKind::ScriptedPersona).map(|p| p.id.as_str())
    }

    pub fn agents(&self) -> impl Iterator<Item = &str> {
        self.participants.iter().filter(|p| p.kind == AgentKind::LlmAgent).map(|p| p.id.as_str())
    }

    /// Consecutive (sender, receiver) pairs along the speaking order; the
    /// series chain for point-to-point topologies.
    pub fn chain_links(&self) -> Vec<(&str, &str)> {
        self.speaking_order.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let n_humans = self.humans().count();
        let n_agents = self.agents().count();
        if !self.combination.accepts(n_humans, n_agents) {
            return Err(TopologyError::InvalidCombination { kind: self.combination.to_string(), n_humans, n_agents });
        }
        let ids: BTreeSet<&str> = self.ids().collect();
        if ids.len() != self.participants.len() {
            return Err(TopologyError::InvalidCombination { kind: "duplicate participant ids".into(), n_humans, n_agents });
        }
        let mut seen = BTreeSet::new();
        for id in &self.speaking_order {
            if !ids.contains(id.as_str()) {
                return Err(TopologyError::NotAParticipant(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(TopologyError::InvalidCombination { kind: "repeated speaker".into(), n_humans, n_agents });
            }
        }
        Ok(())
    }

    fn check_scope(&self, scope: &KnowledgeScope) -> Result<(), TopologyError> {
        if let KnowledgeScope::ConfidentialMutual(ids) = scope {
            if ids.len() < 2 {
                return Err(TopologyError::ScopeViolation(format!("confidential set {ids:?} has fewer than 2 ids")));
            }
        }
        match scope.named_ids().into_iter().find(|id| !self.contains(id)) {
            Some(id) => Err(TopologyError::ScopeViolation(id.to_string())),
            None => Ok(()),
        }
    }
}

/// Builds an interaction combination with placeholder participants.
/// Humans speak first in list order, LLM agents last.
pub fn build_combination(
    kind: Combination,
    n_humans: usize,
    n_agents: usize,
    mode: CommMode,
) -> Result<Topology, TopologyError> {
    if !kind.accepts(n_humans, n_agents) {
        return Err(TopologyError::InvalidCombination { kind: kind.to_string(), n_humans, n_agents });
    }
    let mut participants: Vec<Participant> =
        (0..n_humans).map(|i| Participant { id: human_id(i), kind: AgentKind::ScriptedPersona }).collect();
    participants.extend((0..n_agents).map(|i| Participant { id: agent_id(i), kind: AgentKind::LlmAgent }));
    let speaking_order = participants.iter().map(|p| p.id.clone()).collect();
    Ok(Topology { combination: kind, mode, participants, speaking_order })
}

/// Resolves the recipients of `content` under `scope`. `sender` may be a
/// participant or [`SYSTEM_SENDER`].
pub fn route_by_scope(
    content: &str,
    scope: &KnowledgeScope,
    topology: &Topology,
    sender: &str,
    round: u32,
) -> Result<Message, TopologyError> {
    if sender != SYSTEM_SENDER && !topology.contains(sender) {
        return Err(TopologyError::NotAParticipant(sender.to_string()));
    }
    topology.check_scope(scope)?;
    let recipients: BTreeSet<String> = match scope {
        KnowledgeScope::Common => topology.ids().filter(|id| *id != sender).map(str::to_string).collect(),
        KnowledgeScope::ConfidentialMutual(ids) => ids.clone(),
        KnowledgeScope::Private(id) => [id.clone()].into_iter().collect(),
    };
    Ok(Message { round_index: round, sender: sender.to_string(), recipients, content: content.to_string(), scope: scope.clone() })
}

pub fn broadcast(sender: &str, content: &str, topology: &Topology, round: u32) -> Result<Message, TopologyError> {
    route_by_scope(content, &KnowledgeScope::Common, topology, sender, round)
}

pub fn point_to_point(
    topology: &Topology,
    sender: &str,
    receiver: &str,
    content: &str,
    round: u32,
) -> Result<Message, TopologyError> {
    if sender == receiver {
        return Err(TopologyError::SelfSend(sender.to_string()));
    }
    for id in [sender, receiver] {
        if id != SYSTEM_SENDER && !topology.contains(id) {
            return Err(TopologyError::NotAParticipant(id.to_string()));
        }
    }
    if receiver == SYSTEM_SENDER {
        return Err(TopologyError::NotAParticipant(receiver.to_string()));
    }
    Ok(Message {
        round_index: round,
        sender: sender.to_string(),
        recipients: [receiver.to_string()].into_iter().collect(),
        content: content.to_string(),
        scope: KnowledgeScope::private(receiver),
    })
}

/// Hands a routed message to every recipient's memory.
pub fn deliver(message: &Message, agents: &mut [AgentProfile]) -> Result<usize, AgentError> {
    let mut n = 0;
    for agent in agents.iter_mut().filter(|a| message.recipients.contains(&a.id)) {
        observe(agent, message)?;
        n += 1;
    }
    Ok(n)
}

/// Capacities C_1..C_n of a set of channels, in abstract units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCapacitySet {
    capacities: Vec<f64>,
}

impl ChannelCapacitySet {
    pub fn new(capacities: Vec<f64>) -> Result<Self, TopologyError> {
        if capacities.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(TopologyError::ScopeViolation("capacities must be finite and non-negative".into()));
        }
        Ok(Self { capacities })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.capacities
    }
}

/// Parallel channels add up.
pub fn parallel_capacity(caps: &ChannelCapacitySet) -> Result<f64, TopologyError> {
    if caps.capacities.is_empty() {
        return Err(TopologyError::EmptySet);
    }
    Ok(caps.capacities.iter().sum())
}

/// A series chain is limited by its narrowest link.
pub fn series_capacity(caps: &ChannelCapacitySet) -> Result<f64, TopologyError> {
    caps.capacities.iter().copied().reduce(f64::min).ok_or(TopologyError::EmptySet)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> Topology {
        build_combination(Combination::MultiHSingleA, 2, 1, CommMode::Broadcast).unwrap()
    }

    #[test]
    fn common_reaches_everyone_but_sender() {
        let t = three();
        let m = broadcast("human_0", "B is the correct response.", &t, 1).unwrap();
        assert_eq!(m.recipients, ["human_1", "agent_0"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn private_and_mutual_scopes() {
        let t = three();
        let m = route_by_scope("x", &KnowledgeScope::private("agent_0"), &t, SYSTEM_SENDER, 0).unwrap();
        assert_eq!(m.recipients.len(), 1);
        let pair = KnowledgeScope::mutual(["agent_0", "human_0"]);
        let m = route_by_scope("x", &pair, &t, SYSTEM_SENDER, 0).unwrap();
        assert_eq!(m.recipients, ["agent_0", "human_0"].iter().map(|s| s.to_string()).collect());
        assert!(matches!(
            route_by_scope("x", &KnowledgeScope::private("ghost"), &t, SYSTEM_SENDER, 0),
            Err(TopologyError::ScopeViolation(_))
        ));
    }

    #[test]
    fn herd_broadcast_fills_agent_memory() {
        let t = build_combination(Combination::MultiHSingleA, 7, 1, CommMode::Broadcast).unwrap();
        let mut agents = vec![AgentProfile::llm("agent_0", "Agent", "")];
        for (round, h) in t.humans().enumerate() {
            let m = broadcast(h, "B", &t, round as u32 + 1).unwrap();
            deliver(&m, &mut agents).unwrap();
        }
        assert_eq!(agents[0].memory.len(), 7);
    }

    #[test]
    fn lone_participant_broadcast_is_empty_but_valid() {
        let t = Topology {
            combination: Combination::SingleHSingleA,
            mode: CommMode::Broadcast,
            participants: vec![Participant { id: "solo".into(), kind: AgentKind::LlmAgent }],
            speaking_order: vec!["solo".into()],
        };
        let m = broadcast("solo", "hello", &t, 0).unwrap();
        assert!(m.recipients.is_empty());
    }

    #[test]
    fn point_to_point_rules() {
        let t = build_combination(Combination::MultiA, 0, 3, CommMode::PointToPoint).unwrap();
        let m = point_to_point(&t, "agent_0", "agent_1", "story", 0).unwrap();
        assert_eq!(m.recipients.len(), 1);
        assert_eq!(point_to_point(&t, "agent_0", "agent_0", "s", 0), Err(TopologyError::SelfSend("agent_0".into())));
        assert_eq!(
            point_to_point(&t, "agent_0", "agent_9", "s", 0),
            Err(TopologyError::NotAParticipant("agent_9".into()))
        );
    }

    #[test]
    fn combinations_and_order() {
        let t = build_combination(Combination::MultiHSingleA, 7, 1, CommMode::Broadcast).unwrap();
        assert_eq!(t.speaking_order.last().unwrap(), "agent_0");
        t.validate().unwrap();
        assert!(build_combination(Combination::SingleHSingleA, 2, 1, CommMode::Broadcast).is_err());
        assert!(build_combination(Combination::MultiA, 1, 3, CommMode::Broadcast).is_err());
        let chain = build_combination(Combination::MultiA, 0, 15, CommMode::PointToPoint).unwrap();
        let links = chain.chain_links();
        assert_eq!(links.len(), 14);
        assert_eq!(links[0], ("agent_0", "agent_1"));
        assert_eq!(links[13], ("agent_13", "agent_14"));
        build_combination(Combination::SingleHMultiA, 1, 3, CommMode::Broadcast).unwrap().validate().unwrap();
        build_combination(Combination::MultiHMultiA, 2, 2, CommMode::Broadcast).unwrap().validate().unwrap();
    }

    #[test]
    fn capacities() {
        let c = ChannelCapacitySet::new(vec![3.0, 5.0]).unwrap();
        assert_eq!(parallel_capacity(&c).unwrap(), 8.0);
        assert_eq!(series_capacity(&c).unwrap(), 3.0);
        let z = ChannelCapacitySet::new(vec![0.0; 3]).unwrap();
        assert_eq!(parallel_capacity(&z).unwrap(), 0.0);
        let same = ChannelCapacitySet::new(vec![7.0, 7.0]).unwrap();
        assert_eq!(series_capacity(&same).unwrap(), 7.0);
        let empty = ChannelCapacitySet::new(vec![]).unwrap();
        assert_eq!(parallel_capacity(&empty), Err(TopologyError::EmptySet));
        assert_eq!(series_capacity(&empty), Err(TopologyError::EmptySet));
        assert!(ChannelCapacitySet::new(vec![-1.0]).is_err());
        assert!(ChannelCapacitySet::new(vec![f64::INFINITY]).is_err());
    }
}
