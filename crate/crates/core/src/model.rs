//! Typed debate graph: proposal, amendment and pro/con arguments, the two relations
//! between them, agents' votes and forecasts, and the session that chains update
//! frameworks together.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationPolicy;
use crate::grid::Grid;

pub type AgentId = String;
pub type ArgumentId = String;

/// Vote assumed for a pro/con argument an agent has not voted on.
pub const DEFAULT_VOTE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("value {0} is not a probability in [0, 1]")]
    OutOfRange(f64),
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("unknown argument `{0}`")]
    UnknownArgument(ArgumentId),
}

/// A probability in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Forecast(f64);

impl Forecast {
    pub fn new(value: f64) -> Result<Self, ModelError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Forecast(value))
        } else {
            Err(ModelError::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Forecast {
    type Error = ModelError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Forecast::new(value)
    }
}

impl From<Forecast> for f64 {
    fn from(f: Forecast) -> f64 {
        f.0
    }
}

impl fmt::Display for Forecast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastingQuestion {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub outcome: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalArgument {
    pub id: ArgumentId,
    pub forecast: Forecast,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmendmentArgument {
    pub id: ArgumentId,
    pub direction: Direction,
    #[serde(default)]
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Pro,
    Con,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProConArgument {
    pub id: ArgumentId,
    pub polarity: Polarity,
    #[serde(default)]
    pub text: String,
}

/// Either kind of argument that can be added to an open framework.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Argument {
    Amendment(AmendmentArgument),
    ProCon(ProConArgument),
}

impl Argument {
    pub fn id(&self) -> &str {
        match self {
            Argument::Amendment(a) => &a.id,
            Argument::ProCon(a) => &a.id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: ArgumentId,
    pub target: ArgumentId,
}

impl Edge {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Edge { source: source.into(), target: target.into() }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.source, self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgumentKind {
    Proposal,
    Amendment(Direction),
    ProCon(Polarity),
}

/// Arguments and relations shared by an update framework and all of its delegates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebateGraph {
    pub proposal: ProposalArgument,
    #[serde(default)]
    pub amendments: Vec<AmendmentArgument>,
    #[serde(default)]
    pub pros_cons: Vec<ProConArgument>,
    #[serde(default)]
    pub probabilistic_relation: Vec<Edge>,
    #[serde(default)]
    pub argumentative_relation: Vec<Edge>,
}

impl DebateGraph {
    pub fn new(proposal: ProposalArgument) -> Self {
        DebateGraph {
            proposal,
            amendments: Vec::new(),
            pros_cons: Vec::new(),
            probabilistic_relation: Vec::new(),
            argumentative_relation: Vec::new(),
        }
    }

    /// Kind of the argument with this id. With duplicate ids the first match wins;
    /// `validate_framework` reports the duplicate.
    pub fn kind_of(&self, id: &str) -> Option<ArgumentKind> {
        if self.proposal.id == id {
            return Some(ArgumentKind::Proposal);
        }
        if let Some(a) = self.amendments.iter().find(|a| a.id == id) {
            return Some(ArgumentKind::Amendment(a.direction));
        }
        self.pros_cons.iter().find(|a| a.id == id).map(|a| ArgumentKind::ProCon(a.polarity))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.kind_of(id).is_some()
    }

    pub fn is_pro_con(&self, id: &str) -> bool {
        matches!(self.kind_of(id), Some(ArgumentKind::ProCon(_)))
    }

    pub fn amendments_with(&self, direction: Direction) -> impl Iterator<Item = &AmendmentArgument> {
        self.amendments.iter().filter(move |a| a.direction == direction)
    }

    pub fn pro_con_ids(&self) -> impl Iterator<Item = &str> {
        self.pros_cons.iter().map(|a| a.id.as_str())
    }

    pub fn node_count(&self) -> usize {
        1 + self.amendments.len() + self.pros_cons.len()
    }

    pub fn edge_count(&self) -> usize {
        self.probabilistic_relation.len() + self.argumentative_relation.len()
    }

    /// Con and pro arguments of each target under the argumentative relation.
    pub fn children(&self) -> HashMap<&str, (Vec<&str>, Vec<&str>)> {
        let polarity: HashMap<&str, Polarity> =
            self.pros_cons.iter().map(|a| (a.id.as_str(), a.polarity)).collect();
        let mut out: HashMap<&str, (Vec<&str>, Vec<&str>)> = HashMap::new();
        for edge in &self.argumentative_relation {
            let entry = out.entry(edge.target.as_str()).or_default();
            match polarity.get(edge.source.as_str()) {
                Some(Polarity::Con) => entry.0.push(edge.source.as_str()),
                Some(Polarity::Pro) => entry.1.push(edge.source.as_str()),
                None => {}
            }
        }
        out
    }

    fn all_ids(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.proposal.id.as_str())
            .chain(self.amendments.iter().map(|a| a.id.as_str()))
            .chain(self.pros_cons.iter().map(|a| a.id.as_str()))
    }

    fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.probabilistic_relation.iter().chain(self.argumentative_relation.iter())
    }

    /// Some cycle in the union of both relations, as a closed walk of argument ids.
    pub fn find_cycle(&self) -> Option<Vec<ArgumentId>> {
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for edge in self.edges() {
            adjacency.entry(edge.source.as_str()).or_default().push(edge.target.as_str());
        }
        find_cycle(&adjacency)
    }
}

/// Colour-marking DFS; iterative so deep argument chains cannot overflow the stack.
fn find_cycle(adjacency: &BTreeMap<&str, Vec<&str>>) -> Option<Vec<ArgumentId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = HashMap::new();
    for &start in adjacency.keys() {
        if marks.contains_key(start) {
            continue;
        }
        let mut path: Vec<&str> = vec![start];
        let mut cursors: Vec<usize> = vec![0];
        marks.insert(start, Mark::Active);
        while let Some(&node) = path.last() {
            let cursor = cursors.last_mut().expect("cursor per path node");
            let next = adjacency.get(node).and_then(|targets| targets.get(*cursor)).copied();
            *cursor += 1;
            match next {
                Some(target) => match marks.get(target) {
                    Some(Mark::Active) => {
                        let from = path.iter().position(|n| *n == target).expect("active node on path");
                        let mut cycle: Vec<String> = path[from..].iter().map(|s| s.to_string()).collect();
                        cycle.push(target.to_string());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(target, Mark::Active);
                        path.push(target);
                        cursors.push(0);
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    path.pop();
                    cursors.pop();
                }
            }
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameworkStatus {
    Open,
    Stable,
    Resolved,
}

impl FrameworkStatus {
    /// Open and Stable frameworks both accept mutations.
    pub fn is_active(self) -> bool {
        !matches!(self, FrameworkStatus::Resolved)
    }
}

/// Outcome of resolving a framework.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub group_forecast: f64,
    pub method: crate::aggregation::AggregationMethod,
    /// Forecasts that entered the aggregate.
    pub included: BTreeMap<AgentId, Forecast>,
    #[serde(default)]
    pub weights: BTreeMap<AgentId, f64>,
    /// Agents left out because they had no rational forecast at resolution time.
    #[serde(default)]
    pub excluded: Vec<AgentId>,
    pub resolved_at: DateTime<Utc>,
}

/// One debate round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateFramework {
    pub id: String,
    #[serde(flatten)]
    pub graph: DebateGraph,
    pub agents: BTreeSet<AgentId>,
    /// Explicit votes, agent -> argument -> value. Missing entries read as [`DEFAULT_VOTE`].
    #[serde(default)]
    pub votes: BTreeMap<AgentId, BTreeMap<ArgumentId, f64>>,
    #[serde(default)]
    pub forecasts: BTreeMap<AgentId, Forecast>,
    /// Pro/con arguments each agent still has to vote on.
    #[serde(default)]
    pub pending_votes: BTreeMap<AgentId, BTreeSet<ArgumentId>>,
    pub status: FrameworkStatus,
    pub opened_at: DateTime<Utc>,
    pub round_deadline: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

impl UpdateFramework {
    pub fn new(
        id: impl Into<String>,
        proposal: ProposalArgument,
        agents: impl IntoIterator<Item = AgentId>,
        opened_at: DateTime<Utc>,
        round_deadline: DateTime<Utc>,
    ) -> Self {
        UpdateFramework {
            id: id.into(),
            graph: DebateGraph::new(proposal),
            agents: agents.into_iter().collect(),
            votes: BTreeMap::new(),
            forecasts: BTreeMap::new(),
            pending_votes: BTreeMap::new(),
            status: FrameworkStatus::Open,
            opened_at,
            round_deadline,
            resolution: None,
        }
    }

    pub fn proposal_forecast(&self) -> f64 {
        self.graph.proposal.forecast.value()
    }

    /// V(agent, argument) with the neutral default for unvoted arguments.
    pub fn vote(&self, agent: &str, argument: &str) -> f64 {
        self.votes
            .get(agent)
            .and_then(|v| v.get(argument))
            .copied()
            .unwrap_or(DEFAULT_VOTE)
    }

    pub fn has_pending(&self, agent: &str) -> bool {
        self.pending_votes.get(agent).is_some_and(|p| !p.is_empty())
    }

    pub fn any_pending(&self) -> bool {
        self.pending_votes.values().any(|p| !p.is_empty())
    }
}

/// An update framework restricted to one agent's votes and forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelegateFramework {
    #[serde(flatten)]
    pub graph: DebateGraph,
    pub agent: AgentId,
    /// Total over the graph's pro/con arguments.
    pub votes: BTreeMap<ArgumentId, f64>,
    #[serde(default)]
    pub forecast: Option<Forecast>,
}

impl DelegateFramework {
    pub fn proposal_forecast(&self) -> f64 {
        self.graph.proposal.forecast.value()
    }
}

/// Restricts `u` to a single agent. Every argument and relation is carried over; unvoted
/// pro/con arguments take the neutral default vote.
pub fn delegate(u: &UpdateFramework, agent: &str) -> Result<DelegateFramework, ModelError> {
    if !u.agents.contains(agent) {
        return Err(ModelError::UnknownAgent(agent.to_string()));
    }
    let votes = u
        .graph
        .pro_con_ids()
        .map(|id| (id.to_string(), u.vote(agent, id)))
        .collect();
    Ok(DelegateFramework {
        graph: u.graph.clone(),
        agent: agent.to_string(),
        votes,
        forecast: u.forecasts.get(agent).copied(),
    })
}

/// A structural problem found by [`validate_framework`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    /// Argument sets must be pairwise disjoint.
    DuplicateId { id: ArgumentId },
    /// A relation edge mentions an argument not in the framework.
    UnknownEndpoint { edge: Edge },
    /// Rp edges run from an amendment to the proposal.
    ProbabilisticEdgeTyping { edge: Edge },
    /// R edges run from a pro/con argument to an amendment or pro/con argument.
    ArgumentativeEdgeTyping { edge: Edge },
    Cycle { path: Vec<ArgumentId> },
    /// Votes must be a total function from agents x pro/con arguments into [0, 1].
    VoteTotality { agent: AgentId, argument: ArgumentId, reason: String },
    ForecastUnknownAgent { agent: AgentId },
    TooFewAgents { count: usize },
    /// A delegate framework carries exactly one agent's view.
    DelegateAgentCount,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "argument sets not disjoint: `{id}` appears twice"),
            Violation::UnknownEndpoint { edge } => write!(f, "edge {edge} references an unknown argument"),
            Violation::ProbabilisticEdgeTyping { edge } => {
                write!(f, "Rp must run from an amendment to the proposal: {edge}")
            }
            Violation::ArgumentativeEdgeTyping { edge } => {
                write!(f, "R must source a pro/con argument and target amendment/pro/con: {edge}")
            }
            Violation::Cycle { path } => write!(f, "acyclicity violated: {}", path.join(" -> ")),
            Violation::VoteTotality { agent, argument, reason } => {
                write!(f, "vote totality violated for ({agent}, {argument}): {reason}")
            }
            Violation::ForecastUnknownAgent { agent } => write!(f, "forecast from non-participant `{agent}`"),
            Violation::TooFewAgents { count } => write!(f, "an update framework needs more than one agent, got {count}"),
            Violation::DelegateAgentCount => write!(f, "a delegate framework holds exactly one agent"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

fn validate_graph(graph: &DebateGraph, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    for id in graph.all_ids() {
        if !seen.insert(id) {
            out.push(Violation::DuplicateId { id: id.to_string() });
        }
    }

    for edge in &graph.probabilistic_relation {
        match (graph.kind_of(&edge.source), graph.kind_of(&edge.target)) {
            (None, _) | (_, None) => out.push(Violation::UnknownEndpoint { edge: edge.clone() }),
            (Some(ArgumentKind::Amendment(_)), Some(ArgumentKind::Proposal)) => {}
            _ => out.push(Violation::ProbabilisticEdgeTyping { edge: edge.clone() }),
        }
    }
    for edge in &graph.argumentative_relation {
        match (graph.kind_of(&edge.source), graph.kind_of(&edge.target)) {
            (None, _) | (_, None) => out.push(Violation::UnknownEndpoint { edge: edge.clone() }),
            (Some(ArgumentKind::ProCon(_)), Some(ArgumentKind::Amendment(_) | ArgumentKind::ProCon(_))) => {}
            _ => out.push(Violation::ArgumentativeEdgeTyping { edge: edge.clone() }),
        }
    }

    if let Some(path) = graph.find_cycle() {
        out.push(Violation::Cycle { path });
    }
}

fn check_vote(graph: &DebateGraph, agent: &str, argument: &str, value: f64, out: &mut Vec<Violation>) {
    let reason = if !graph.is_pro_con(argument) {
        Some("votes are only cast on pro/con arguments")
    } else if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
        Some("vote outside [0, 1]")
    } else {
        None
    };
    if let Some(reason) = reason {
        out.push(Violation::VoteTotality {
            agent: agent.to_string(),
            argument: argument.to_string(),
            reason: reason.to_string(),
        });
    }
}

/// Lists every violated structural invariant of `u`. An empty report means well-formed.
pub fn validate_framework(u: &UpdateFramework) -> ValidationReport {
    let mut violations = Vec::new();
    validate_graph(&u.graph, &mut violations);

    for (agent, votes) in &u.votes {
        if !u.agents.contains(agent) {
            for argument in votes.keys() {
                violations.push(Violation::VoteTotality {
                    agent: agent.clone(),
                    argument: argument.clone(),
                    reason: "vote from non-participant".into(),
                });
            }
            continue;
        }
        for (argument, value) in votes {
            check_vote(&u.graph, agent, argument, *value, &mut violations);
        }
    }
    for agent in u.forecasts.keys() {
        if !u.agents.contains(agent) {
            violations.push(Violation::ForecastUnknownAgent { agent: agent.clone() });
        }
    }
    if u.agents.len() < 2 {
        violations.push(Violation::TooFewAgents { count: u.agents.len() });
    }
    ValidationReport { violations }
}

/// Delegate counterpart of [`validate_framework`]: same graph checks, exactly one agent,
/// and a vote for every pro/con argument.
pub fn validate_delegate(d: &DelegateFramework) -> ValidationReport {
    let mut violations = Vec::new();
    validate_graph(&d.graph, &mut violations);
    if d.agent.is_empty() {
        violations.push(Violation::DelegateAgentCount);
    }
    for (argument, value) in &d.votes {
        check_vote(&d.graph, &d.agent, argument, *value, &mut violations);
    }
    for id in d.graph.pro_con_ids() {
        if !d.votes.contains_key(id) {
            violations.push(Violation::VoteTotality {
                agent: d.agent.clone(),
                argument: id.to_string(),
                reason: "missing vote".into(),
            });
        }
    }
    ValidationReport { violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Closed,
}

/// An agent's accepted forecast with the time it was made; feeds the daily series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedForecast {
    pub framework_id: String,
    pub agent: AgentId,
    pub forecast: Forecast,
    pub at: DateTime<Utc>,
}

/// A forecasting argumentation framework: base forecast, chained update frameworks, and
/// the time limits within which they run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastingSession {
    pub id: String,
    pub question: ForecastingQuestion,
    pub base_forecast: Forecast,
    /// Group forecast of the latest resolved framework, or the base forecast.
    pub current_forecast: Forecast,
    #[serde(default)]
    pub frameworks: Vec<UpdateFramework>,
    pub created_at: DateTime<Utc>,
    pub overall_deadline: DateTime<Utc>,
    /// Per-round limit in seconds.
    pub per_round_deadline: i64,
    pub grid: Grid,
    pub policy: AggregationPolicy,
    pub status: SessionStatus,
    #[serde(default)]
    pub forecast_history: Vec<TimedForecast>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<DateTime<Utc>>,
}

impl ForecastingSession {
    pub fn framework(&self, id: &str) -> Option<&UpdateFramework> {
        self.frameworks.iter().find(|f| f.id == id)
    }

    pub fn framework_mut(&mut self, id: &str) -> Option<&mut UpdateFramework> {
        self.frameworks.iter_mut().find(|f| f.id == id)
    }

    pub fn active_framework(&self) -> Option<&UpdateFramework> {
        self.frameworks.iter().find(|f| f.status.is_active())
    }
}
