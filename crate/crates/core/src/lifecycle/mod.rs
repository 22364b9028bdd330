//! The debate state machine: open a framework, argue, vote and forecast under the
//! rationality gate, reach a stable state, resolve to a group forecast, chain the next
//! framework, and finally close the session against the real outcome.
//!
//! Every command validates against the current state, then emits events and applies
//! them through [`Lifecycle::apply`], the same path a log replay takes. Commands are
//! atomic: on error no event is emitted and the state is untouched.

mod event;

pub use event::{BlockCause, EventKind, LifecycleEvent, RecordEntry, SessionCreated};

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{AgentRecord, AggregationError, AggregationMethod, AggregationPolicy, DailySeries};
use crate::grid::Grid;
use crate::model::{
    delegate, AgentId, Argument, ArgumentId, ArgumentKind, Edge, Forecast, ForecastingQuestion, ForecastingSession,
    FrameworkStatus, ProposalArgument, Resolution, SessionStatus, TimedForecast, UpdateFramework,
};
use crate::rationality::{check_forecast, RationalityError, RationalityVerdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LifecycleError {
    #[error("session is closed")]
    SessionClosed,
    #[error("deadline {0} has passed")]
    DeadlinePassed(DateTime<Utc>),
    #[error("framework `{0}` is still open; frameworks run one at a time")]
    ConcurrentFramework(String),
    #[error("proposal forecast must be positive, got {0}")]
    DegenerateProposal(f64),
    #[error("{value} is not on the {grid} grid")]
    OffGrid { value: f64, grid: Grid },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("an update framework needs at least two agents")]
    TooFewAgents,
    #[error("unknown framework `{0}`")]
    UnknownFramework(String),
    #[error("agent `{0}` is not part of this framework")]
    UnknownAgent(AgentId),
    #[error("unknown argument `{0}`")]
    UnknownArgument(ArgumentId),
    #[error("argument id `{0}` is already in use")]
    DuplicateArgument(ArgumentId),
    #[error("edge {0} violates relation typing")]
    EdgeTyping(Edge),
    #[error("adding the argument would create the cycle {}", .0.join(" -> "))]
    Cycle(Vec<ArgumentId>),
    #[error("only pro/con arguments can be voted on; `{0}` is not one")]
    VoteTargetInvalid(ArgumentId),
    #[error("framework `{0}` is resolved and immutable")]
    FrameworkResolved(String),
    #[error("agent `{agent}` must first vote on: {}", .arguments.join(", "))]
    PendingVotes { agent: AgentId, arguments: Vec<ArgumentId> },
    #[error("framework `{0}` is not collectively rational and its round deadline has not passed")]
    Unstable(String),
    #[error("session already closed")]
    AlreadyClosed,
    #[error("event log inconsistent at seq {seq}: {reason}")]
    InvalidEvent { seq: u64, reason: String },
    #[error(transparent)]
    Rationality(#[from] RationalityError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

impl LifecycleError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            LifecycleError::SessionClosed => "session_closed",
            LifecycleError::DeadlinePassed(_) => "deadline_passed",
            LifecycleError::ConcurrentFramework(_) => "framework_already_open",
            LifecycleError::DegenerateProposal(_) => "degenerate_proposal",
            LifecycleError::OffGrid { .. } => "off_grid",
            LifecycleError::InvalidValue(_) => "invalid_value",
            LifecycleError::TooFewAgents => "too_few_agents",
            LifecycleError::UnknownFramework(_) => "unknown_framework",
            LifecycleError::UnknownAgent(_) => "unknown_agent",
            LifecycleError::UnknownArgument(_) => "unknown_argument",
            LifecycleError::DuplicateArgument(_) => "duplicate_argument",
            LifecycleError::EdgeTyping(_) => "edge_typing",
            LifecycleError::Cycle(_) => "cycle",
            LifecycleError::VoteTargetInvalid(_) => "vote_target_invalid",
            LifecycleError::FrameworkResolved(_) => "framework_resolved",
            LifecycleError::PendingVotes { .. } => "pending_votes",
            LifecycleError::Unstable(_) => "framework_unstable",
            LifecycleError::AlreadyClosed => "session_already_closed",
            LifecycleError::InvalidEvent { .. } => "invalid_event",
            LifecycleError::Rationality(_) => "rationality",
            LifecycleError::Aggregation(_) => "aggregation",
        }
    }
}

/// Parameters for a new session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub id: String,
    pub question: ForecastingQuestion,
    pub base_forecast: f64,
    pub overall_deadline: DateTime<Utc>,
    /// Seconds each update framework may stay open.
    pub per_round_deadline: i64,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub policy: AggregationPolicy,
}

/// Proposal for a new framework. A missing forecast defaults to the current group
/// forecast snapped to the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalInput {
    pub id: String,
    #[serde(default)]
    pub forecast: Option<f64>,
    #[serde(default)]
    pub evidence: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted { forecast: Forecast, confidence: f64 },
    Blocked { verdict: RationalityVerdict },
}

/// Summary produced when a session closes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub outcome: bool,
    pub base_forecast: f64,
    pub final_forecast: f64,
    pub entries: Vec<RecordEntry>,
    pub daily: BTreeMap<AgentId, DailySeries>,
}

/// SHA-256 over the canonical JSON of a session.
pub fn state_hash(session: &ForecastingSession) -> String {
    let bytes = serde_json::to_vec(session).expect("session serializes");
    hex::encode(Sha256::digest(bytes))
}

/// True iff every agent holds a strictly rational forecast and owes no votes.
pub fn check_stable(u: &UpdateFramework, grid: Grid) -> bool {
    !u.any_pending()
        && u.agents.iter().all(|agent| match u.forecasts.get(agent) {
            Some(f) => is_rational(u, agent, *f, grid),
            None => false,
        })
}

fn is_rational(u: &UpdateFramework, agent: &str, forecast: Forecast, grid: Grid) -> bool {
    verdict_for(u, agent, forecast, grid).is_ok_and(|v| v.accepted)
}

fn verdict_for(
    u: &UpdateFramework,
    agent: &str,
    forecast: Forecast,
    grid: Grid,
) -> Result<RationalityVerdict, LifecycleError> {
    let d = delegate(u, agent).map_err(|_| LifecycleError::UnknownAgent(agent.to_string()))?;
    Ok(check_forecast(&d, forecast, grid)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lifecycle {
    session: ForecastingSession,
    last_seq: u64,
}

impl Lifecycle {
    pub fn create(spec: NewSession, now: DateTime<Utc>) -> Result<(Self, LifecycleEvent), LifecycleError> {
        let base = Forecast::new(spec.base_forecast)
            .map_err(|e| LifecycleError::InvalidValue(e.to_string()))?;
        if spec.id.is_empty() {
            return Err(LifecycleError::InvalidValue("session id must not be empty".into()));
        }
        if spec.overall_deadline <= now {
            return Err(LifecycleError::DeadlinePassed(spec.overall_deadline));
        }
        if spec.per_round_deadline <= 0 {
            return Err(LifecycleError::InvalidValue("per-round deadline must be positive".into()));
        }
        let event = LifecycleEvent {
            seq: 1,
            timestamp: now,
            kind: EventKind::SessionCreated(SessionCreated {
                session_id: spec.id,
                question: ForecastingQuestion { outcome: None, ..spec.question },
                base_forecast: base,
                overall_deadline: spec.overall_deadline,
                per_round_deadline: spec.per_round_deadline,
                grid: spec.grid,
                policy: spec.policy,
            }),
        };
        let lifecycle = Lifecycle::replay([&event])?;
        Ok((lifecycle, event))
    }

    /// Rebuilds a session from its complete event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a LifecycleEvent>) -> Result<Self, LifecycleError> {
        let mut events = events.into_iter();
        let first = events.next().ok_or(LifecycleError::InvalidEvent { seq: 0, reason: "empty log".into() })?;
        let EventKind::SessionCreated(created) = &first.kind else {
            return Err(LifecycleError::InvalidEvent { seq: first.seq, reason: "log must start with session_created".into() });
        };
        if first.seq != 1 {
            return Err(LifecycleError::InvalidEvent { seq: first.seq, reason: "log must start at seq 1".into() });
        }
        let mut lifecycle = Lifecycle {
            session: ForecastingSession {
                id: created.session_id.clone(),
                question: created.question.clone(),
                base_forecast: created.base_forecast,
                current_forecast: created.base_forecast,
                frameworks: Vec::new(),
                created_at: first.timestamp,
                overall_deadline: created.overall_deadline,
                per_round_deadline: created.per_round_deadline,
                grid: created.grid,
                policy: created.policy,
                status: SessionStatus::Active,
                forecast_history: Vec::new(),
                closed_at: None,
            },
            last_seq: 1,
        };
        for event in events {
            lifecycle.apply(event)?;
        }
        Ok(lifecycle)
    }

    /// Resumes from a snapshot taken after event `last_seq`.
    pub fn from_snapshot(session: ForecastingSession, last_seq: u64) -> Self {
        Lifecycle { session, last_seq }
    }

    pub fn session(&self) -> &ForecastingSession {
        &self.session
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn grid(&self) -> Grid {
        self.session.grid
    }

    pub fn state_hash(&self) -> String {
        state_hash(&self.session)
    }

    pub fn framework(&self, id: &str) -> Result<&UpdateFramework, LifecycleError> {
        self.session.framework(id).ok_or_else(|| LifecycleError::UnknownFramework(id.to_string()))
    }

    /// Applies the next logged event.
    pub fn apply(&mut self, event: &LifecycleEvent) -> Result<(), LifecycleError> {
        if event.seq != self.last_seq + 1 {
            return Err(LifecycleError::InvalidEvent {
                seq: event.seq,
                reason: format!("expected seq {}", self.last_seq + 1),
            });
        }
        self.apply_kind(&event.kind, event.timestamp)
            .map_err(|reason| LifecycleError::InvalidEvent { seq: event.seq, reason })?;
        self.last_seq = event.seq;
        Ok(())
    }

    fn apply_kind(&mut self, kind: &EventKind, at: DateTime<Utc>) -> Result<(), String> {
        let grid = self.session.grid;
        let s = &mut self.session;
        match kind {
            EventKind::SessionCreated(_) => return Err("duplicate session_created".into()),
            EventKind::FrameworkOpened { framework_id, proposal, agents, round_deadline } => {
                s.frameworks.push(UpdateFramework::new(
                    framework_id.clone(),
                    proposal.clone(),
                    agents.iter().cloned(),
                    at,
                    *round_deadline,
                ));
            }
            EventKind::ArgumentAdded { framework_id, argument, edges } => {
                let u = s.framework_mut(framework_id).ok_or("unknown framework")?;
                match argument {
                    Argument::Amendment(a) => u.graph.amendments.push(a.clone()),
                    Argument::ProCon(a) => {
                        u.graph.pros_cons.push(a.clone());
                        for agent in &u.agents {
                            u.pending_votes.entry(agent.clone()).or_default().insert(a.id.clone());
                        }
                    }
                }
                for edge in edges {
                    if edge.target == u.graph.proposal.id {
                        u.graph.probabilistic_relation.push(edge.clone());
                    } else {
                        u.graph.argumentative_relation.push(edge.clone());
                    }
                }
            }
            EventKind::VoteCast { framework_id, agent, argument, value } => {
                let u = s.framework_mut(framework_id).ok_or("unknown framework")?;
                u.votes.entry(agent.clone()).or_default().insert(argument.clone(), *value);
                if let Some(pending) = u.pending_votes.get_mut(agent) {
                    pending.remove(argument);
                    if pending.is_empty() {
                        u.pending_votes.remove(agent);
                    }
                }
            }
            EventKind::ForecastSubmitted { framework_id, agent, forecast, .. } => {
                let u = s.framework_mut(framework_id).ok_or("unknown framework")?;
                u.forecasts.insert(agent.clone(), *forecast);
                s.forecast_history.push(TimedForecast {
                    framework_id: framework_id.clone(),
                    agent: agent.clone(),
                    forecast: *forecast,
                    at,
                });
            }
            EventKind::ForecastBlocked { framework_id, agent, cause, .. } => {
                let u = s.framework_mut(framework_id).ok_or("unknown framework")?;
                if *cause == BlockCause::Recheck {
                    u.forecasts.remove(agent);
                }
            }
            EventKind::FrameworkResolved { framework_id, resolution } => {
                let u = s.framework_mut(framework_id).ok_or("unknown framework")?;
                u.status = FrameworkStatus::Resolved;
                u.resolution = Some(resolution.clone());
                s.current_forecast = Forecast::new(resolution.group_forecast).map_err(|e| e.to_string())?;
            }
            EventKind::SessionClosed { outcome, .. } => {
                s.status = SessionStatus::Closed;
                s.closed_at = Some(at);
                s.question.outcome = Some(*outcome);
            }
        }
        if let Some(id) = self_framework_id(kind) {
            if let Some(u) = self.session.framework_mut(id) {
                if u.status.is_active() {
                    u.status = if check_stable(u, grid) { FrameworkStatus::Stable } else { FrameworkStatus::Open };
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, kind: EventKind, now: DateTime<Utc>, out: &mut Vec<LifecycleEvent>) {
        let event = LifecycleEvent { seq: self.last_seq + 1, timestamp: now, kind };
        self.apply(&event).expect("commands only emit events valid for the current state");
        out.push(event);
    }

    fn ensure_active(&self) -> Result<(), LifecycleError> {
        if self.session.status == SessionStatus::Closed {
            return Err(LifecycleError::SessionClosed);
        }
        Ok(())
    }

    /// The framework, provided it still accepts arguments, votes and forecasts at `now`.
    fn mutable_framework(&self, id: &str, now: DateTime<Utc>) -> Result<&UpdateFramework, LifecycleError> {
        self.ensure_active()?;
        let u = self.framework(id)?;
        if !u.status.is_active() {
            return Err(LifecycleError::FrameworkResolved(id.to_string()));
        }
        if now >= u.round_deadline {
            return Err(LifecycleError::DeadlinePassed(u.round_deadline));
        }
        Ok(u)
    }

    /// Opens the next update framework.
    pub fn open_framework(
        &mut self,
        proposal: ProposalInput,
        agents: Vec<AgentId>,
        round_deadline: Option<DateTime<Utc>>,
        now: DateTime<Utc>,
    ) -> Result<(String, Vec<LifecycleEvent>), LifecycleError> {
        self.ensure_active()?;
        if now >= self.session.overall_deadline {
            return Err(LifecycleError::DeadlinePassed(self.session.overall_deadline));
        }
        if let Some(open) = self.session.active_framework() {
            return Err(LifecycleError::ConcurrentFramework(open.id.clone()));
        }
        let grid = self.session.grid;
        let value = proposal.forecast.unwrap_or_else(|| grid.snap(self.session.current_forecast.value()));
        let forecast = Forecast::new(value).map_err(|e| LifecycleError::InvalidValue(e.to_string()))?;
        if value <= 0.0 {
            return Err(LifecycleError::DegenerateProposal(value));
        }
        if !grid.contains(value) {
            return Err(LifecycleError::OffGrid { value, grid });
        }
        if proposal.id.is_empty() {
            return Err(LifecycleError::InvalidValue("proposal id must not be empty".into()));
        }
        let unique: BTreeSet<AgentId> = agents.into_iter().filter(|a| !a.is_empty()).collect();
        if unique.len() < 2 {
            return Err(LifecycleError::TooFewAgents);
        }
        let default_deadline = now + Duration::seconds(self.session.per_round_deadline);
        let round_deadline = round_deadline.unwrap_or(default_deadline).min(self.session.overall_deadline);
        if round_deadline <= now {
            return Err(LifecycleError::DeadlinePassed(round_deadline));
        }
        let framework_id = format!("{}.{}", self.session.id, self.session.frameworks.len() + 1);
        let mut out = Vec::new();
        self.emit(
            EventKind::FrameworkOpened {
                framework_id: framework_id.clone(),
                proposal: ProposalArgument { id: proposal.id, forecast, evidence: proposal.evidence },
                agents: unique.into_iter().collect(),
                round_deadline,
            },
            now,
            &mut out,
        );
        Ok((framework_id, out))
    }

    /// Adds an amendment (linked to the proposal) or a pro/con argument with its edges.
    /// Every edge must have the new argument as one endpoint.
    pub fn add_argument(
        &mut self,
        framework_id: &str,
        argument: Argument,
        edges: Vec<Edge>,
        now: DateTime<Utc>,
    ) -> Result<Vec<LifecycleEvent>, LifecycleError> {
        let u = self.mutable_framework(framework_id, now)?;
        let id = argument.id().to_string();
        if id.is_empty() {
            return Err(LifecycleError::InvalidValue("argument id must not be empty".into()));
        }
        if u.graph.contains(&id) {
            return Err(LifecycleError::DuplicateArgument(id));
        }
        let proposal_id = u.graph.proposal.id.clone();
        let edges = match &argument {
            Argument::Amendment(_) => {
                let link = Edge::new(id.clone(), proposal_id);
                if let Some(bad) = edges.into_iter().find(|e| *e != link) {
                    return Err(LifecycleError::EdgeTyping(bad));
                }
                vec![link]
            }
            Argument::ProCon(_) => {
                let mut trial = u.graph.clone();
                if let Argument::ProCon(a) = &argument {
                    trial.pros_cons.push(a.clone());
                }
                let mut seen = BTreeSet::new();
                for edge in &edges {
                    if edge.source != id && edge.target != id {
                        return Err(LifecycleError::EdgeTyping(edge.clone()));
                    }
                    if !seen.insert(edge.clone()) || trial.argumentative_relation.contains(edge) {
                        return Err(LifecycleError::InvalidValue(format!("duplicate edge {edge}")));
                    }
                    let source = trial.kind_of(&edge.source);
                    let target = trial.kind_of(&edge.target);
                    match (source, target) {
                        (None, _) => return Err(LifecycleError::UnknownArgument(edge.source.clone())),
                        (_, None) => return Err(LifecycleError::UnknownArgument(edge.target.clone())),
                        (Some(ArgumentKind::ProCon(_)), Some(ArgumentKind::Amendment(_) | ArgumentKind::ProCon(_))) => {}
                        _ => return Err(LifecycleError::EdgeTyping(edge.clone())),
                    }
                }
                if !edges.iter().any(|e| e.source == id) {
                    return Err(LifecycleError::InvalidValue(format!(
                        "pro/con argument `{id}` must support or attack an existing argument"
                    )));
                }
                trial.argumentative_relation.extend(edges.iter().cloned());
                if let Some(path) = trial.find_cycle() {
                    return Err(LifecycleError::Cycle(path));
                }
                edges
            }
        };
        let mut out = Vec::new();
        self.emit(EventKind::ArgumentAdded { framework_id: framework_id.to_string(), argument, edges }, now, &mut out);
        let agents: Vec<AgentId> = self.framework(framework_id)?.forecasts.keys().cloned().collect();
        self.recheck(framework_id, &agents, now, &mut out)?;
        Ok(out)
    }

    /// Withdraws stored forecasts that are no longer strictly rational.
    fn recheck(
        &mut self,
        framework_id: &str,
        agents: &[AgentId],
        now: DateTime<Utc>,
        out: &mut Vec<LifecycleEvent>,
    ) -> Result<(), LifecycleError> {
        let grid = self.session.grid;
        for agent in agents {
            let u = self.framework(framework_id)?;
            let Some(forecast) = u.forecasts.get(agent).copied() else { continue };
            let verdict = verdict_for(u, agent, forecast, grid)?;
            if !verdict.accepted {
                tracing::debug!(framework_id, agent, ?verdict.violations, "standing forecast withdrawn");
                self.emit(
                    EventKind::ForecastBlocked {
                        framework_id: framework_id.to_string(),
                        agent: agent.clone(),
                        cause: BlockCause::Recheck,
                        verdict,
                    },
                    now,
                    out,
                );
            }
        }
        Ok(())
    }

    /// Records a vote. Re-casting an identical vote with nothing pending is a no-op and
    /// emits no event.
    pub fn cast_vote(
        &mut self,
        framework_id: &str,
        agent: &str,
        argument: &str,
        value: f64,
        now: DateTime<Utc>,
    ) -> Result<Vec<LifecycleEvent>, LifecycleError> {
        let u = self.mutable_framework(framework_id, now)?;
        if !u.agents.contains(agent) {
            return Err(LifecycleError::UnknownAgent(agent.to_string()));
        }
        match u.graph.kind_of(argument) {
            None => return Err(LifecycleError::UnknownArgument(argument.to_string())),
            Some(ArgumentKind::ProCon(_)) => {}
            Some(_) => return Err(LifecycleError::VoteTargetInvalid(argument.to_string())),
        }
        if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
            return Err(LifecycleError::InvalidValue(format!("vote {value} outside [0, 1]")));
        }
        let pending = u.pending_votes.get(agent).is_some_and(|p| p.contains(argument));
        let unchanged = u.votes.get(agent).and_then(|v| v.get(argument)) == Some(&value);
        if unchanged && !pending {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        self.emit(
            EventKind::VoteCast {
                framework_id: framework_id.to_string(),
                agent: agent.to_string(),
                argument: argument.to_string(),
                value,
            },
            now,
            &mut out,
        );
        self.recheck(framework_id, &[agent.to_string()], now, &mut out)?;
        Ok(out)
    }

    /// Submits a forecast through the rationality gate. A blocked forecast is not
    /// stored; only a `forecast_blocked` event records the attempt.
    pub fn submit_forecast(
        &mut self,
        framework_id: &str,
        agent: &str,
        value: f64,
        now: DateTime<Utc>,
    ) -> Result<(SubmitOutcome, Vec<LifecycleEvent>), LifecycleError> {
        let grid = self.session.grid;
        let u = self.mutable_framework(framework_id, now)?;
        if !u.agents.contains(agent) {
            return Err(LifecycleError::UnknownAgent(agent.to_string()));
        }
        if let Some(pending) = u.pending_votes.get(agent).filter(|p| !p.is_empty()) {
            return Err(LifecycleError::PendingVotes {
                agent: agent.to_string(),
                arguments: pending.iter().cloned().collect(),
            });
        }
        let forecast = Forecast::new(value).map_err(|e| LifecycleError::InvalidValue(e.to_string()))?;
        if !grid.contains(value) {
            return Err(LifecycleError::OffGrid { value, grid });
        }
        let verdict = verdict_for(u, agent, forecast, grid)?;
        let mut out = Vec::new();
        let framework_id = framework_id.to_string();
        let agent = agent.to_string();
        if verdict.accepted {
            let confidence = verdict.confidence;
            self.emit(EventKind::ForecastSubmitted { framework_id, agent, forecast, confidence }, now, &mut out);
            Ok((SubmitOutcome::Accepted { forecast, confidence }, out))
        } else {
            self.emit(
                EventKind::ForecastBlocked { framework_id, agent, cause: BlockCause::Submission, verdict: verdict.clone() },
                now,
                &mut out,
            );
            Ok((SubmitOutcome::Blocked { verdict }, out))
        }
    }

    /// Rationality verdict for the agent's standing forecast, or for the proposal
    /// forecast when the agent has none yet.
    pub fn rationality(&self, framework_id: &str, agent: &str) -> Result<RationalityVerdict, LifecycleError> {
        let u = self.framework(framework_id)?;
        let forecast = u.forecasts.get(agent).copied().unwrap_or(u.graph.proposal.forecast);
        verdict_for(u, agent, forecast, self.session.grid)
    }

    pub fn check_stable(&self, framework_id: &str) -> Result<bool, LifecycleError> {
        let u = self.framework(framework_id)?;
        Ok(u.status.is_active() && check_stable(u, self.session.grid))
    }

    /// Aggregates the framework's rational forecasts into the new session forecast.
    ///
    /// Allowed once the framework is stable, or after its round deadline; in the latter
    /// case agents without a rational forecast are excluded. With nobody left to
    /// aggregate the session forecast carries over unchanged.
    pub fn resolve_framework(
        &mut self,
        framework_id: &str,
        records: &BTreeMap<AgentId, AgentRecord>,
        now: DateTime<Utc>,
    ) -> Result<(Resolution, Vec<LifecycleEvent>), LifecycleError> {
        self.ensure_active()?;
        let grid = self.session.grid;
        let u = self.framework(framework_id)?;
        if !u.status.is_active() {
            return Err(LifecycleError::FrameworkResolved(framework_id.to_string()));
        }
        if !check_stable(u, grid) && now < u.round_deadline {
            return Err(LifecycleError::Unstable(framework_id.to_string()));
        }
        let included: BTreeMap<AgentId, Forecast> = u
            .forecasts
            .iter()
            .filter(|(agent, f)| is_rational(u, agent, **f, grid))
            .map(|(a, f)| (a.clone(), *f))
            .collect();
        let excluded: Vec<AgentId> = u.agents.iter().filter(|a| !included.contains_key(*a)).cloned().collect();
        if !excluded.is_empty() {
            tracing::info!(framework_id, ?excluded, "resolving at deadline without these agents");
        }
        let (group_forecast, method, weights) = if included.is_empty() {
            (self.session.current_forecast.value(), AggregationMethod::Mean, BTreeMap::new())
        } else {
            let values: BTreeMap<AgentId, f64> = included.iter().map(|(a, f)| (a.clone(), f.value())).collect();
            let aggregate = self.session.policy.aggregate(&values, records)?;
            (aggregate.value, aggregate.method, aggregate.weights)
        };
        let resolution = Resolution { group_forecast, method, included, weights, excluded, resolved_at: now };
        let mut out = Vec::new();
        self.emit(
            EventKind::FrameworkResolved { framework_id: framework_id.to_string(), resolution: resolution.clone() },
            now,
            &mut out,
        );
        Ok((resolution, out))
    }

    /// Closes the session with the question's outcome. Each agent's aggregated forecast
    /// in every resolved framework becomes one record entry.
    pub fn close_session(
        &mut self,
        outcome: bool,
        now: DateTime<Utc>,
    ) -> Result<(SessionReport, Vec<LifecycleEvent>), LifecycleError> {
        if self.session.status == SessionStatus::Closed {
            return Err(LifecycleError::AlreadyClosed);
        }
        let entries: Vec<RecordEntry> = self
            .session
            .frameworks
            .iter()
            .filter_map(|u| u.resolution.as_ref().map(|r| (u, r)))
            .flat_map(|(u, r)| {
                r.included.iter().map(|(agent, forecast)| RecordEntry {
                    framework_id: u.id.clone(),
                    agent: agent.clone(),
                    forecast: *forecast,
                })
            })
            .collect();
        let mut out = Vec::new();
        self.emit(EventKind::SessionClosed { outcome, entries }, now, &mut out);
        Ok((self.report().expect("just closed"), out))
    }

    /// The closing report; `None` while the session is still active.
    pub fn report(&self) -> Option<SessionReport> {
        let s = &self.session;
        let outcome = s.question.outcome?;
        let closed = s.closed_at?;
        let entries = s
            .frameworks
            .iter()
            .filter_map(|u| u.resolution.as_ref().map(|r| (u, r)))
            .flat_map(|(u, r)| {
                r.included.iter().map(|(agent, forecast)| RecordEntry {
                    framework_id: u.id.clone(),
                    agent: agent.clone(),
                    forecast: *forecast,
                })
            })
            .collect();
        Some(SessionReport {
            session_id: s.id.clone(),
            outcome,
            base_forecast: s.base_forecast.value(),
            final_forecast: s.current_forecast.value(),
            entries,
            daily: daily_series(&s.forecast_history, closed.date_naive()),
        })
    }
}

fn self_framework_id(kind: &EventKind) -> Option<&str> {
    match kind {
        EventKind::FrameworkOpened { framework_id, .. }
        | EventKind::ArgumentAdded { framework_id, .. }
        | EventKind::VoteCast { framework_id, .. }
        | EventKind::ForecastSubmitted { framework_id, .. }
        | EventKind::ForecastBlocked { framework_id, .. } => Some(framework_id),
        _ => None,
    }
}

/// Per-agent daily series from accepted forecasts, through `end`.
pub fn daily_series(history: &[TimedForecast], end: NaiveDate) -> BTreeMap<AgentId, DailySeries> {
    let mut by_agent: BTreeMap<AgentId, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
    for f in history {
        by_agent.entry(f.agent.clone()).or_default().push((f.at, f.forecast.value()));
    }
    by_agent
        .into_iter()
        .map(|(agent, forecasts)| (agent, DailySeries::from_forecasts(&forecasts, end)))
        .filter(|(_, series)| !series.is_empty())
        .collect()
}

/// Folds a closed session's entries into agents' records. Idempotent: entries already
/// recorded for the same framework are skipped. Returns the agents whose record changed.
pub fn apply_outcome(records: &mut BTreeMap<AgentId, AgentRecord>, report: &SessionReport) -> Vec<AgentId> {
    let mut changed = Vec::new();
    for entry in &report.entries {
        let record =
            records.entry(entry.agent.clone()).or_insert_with(|| AgentRecord::new(entry.agent.clone()));
        if record.push_once(entry.forecast.value(), report.outcome, &entry.framework_id) {
            changed.push(entry.agent.clone());
        }
    }
    changed
}
