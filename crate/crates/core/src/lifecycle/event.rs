use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationPolicy;
use crate::grid::Grid;
use crate::model::{AgentId, Argument, ArgumentId, Edge, Forecast, ForecastingQuestion, ProposalArgument, Resolution};
use crate::rationality::RationalityVerdict;

/// One line of a session's event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl LifecycleEvent {
    /// Framework the event concerns, if any.
    pub fn framework_id(&self) -> Option<&str> {
        match &self.kind {
            EventKind::SessionCreated(_) | EventKind::SessionClosed { .. } => None,
            EventKind::FrameworkOpened { framework_id, .. }
            | EventKind::ArgumentAdded { framework_id, .. }
            | EventKind::VoteCast { framework_id, .. }
            | EventKind::ForecastSubmitted { framework_id, .. }
            | EventKind::ForecastBlocked { framework_id, .. }
            | EventKind::FrameworkResolved { framework_id, .. } => Some(framework_id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub question: ForecastingQuestion,
    pub base_forecast: Forecast,
    pub overall_deadline: DateTime<Utc>,
    pub per_round_deadline: i64,
    pub grid: Grid,
    pub policy: AggregationPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockCause {
    /// A submitted forecast failed the gate and was not stored.
    Submission,
    /// A stored forecast became irrational after the graph or votes changed; it is withdrawn.
    Recheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub framework_id: String,
    pub agent: AgentId,
    pub forecast: Forecast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated(SessionCreated),
    FrameworkOpened {
        framework_id: String,
        proposal: ProposalArgument,
        agents: Vec<AgentId>,
        round_deadline: DateTime<Utc>,
    },
    ArgumentAdded {
        framework_id: String,
        argument: Argument,
        edges: Vec<Edge>,
    },
    VoteCast {
        framework_id: String,
        agent: AgentId,
        argument: ArgumentId,
        value: f64,
    },
    ForecastSubmitted {
        framework_id: String,
        agent: AgentId,
        forecast: Forecast,
        confidence: f64,
    },
    ForecastBlocked {
        framework_id: String,
        agent: AgentId,
        cause: BlockCause,
        verdict: RationalityVerdict,
    },
    FrameworkResolved {
        framework_id: String,
        resolution: Resolution,
    },
    SessionClosed {
        outcome: bool,
        entries: Vec<RecordEntry>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionCreated(_) => "session_created",
            EventKind::FrameworkOpened { .. } => "framework_opened",
            EventKind::ArgumentAdded { .. } => "argument_added",
            EventKind::VoteCast { .. } => "vote_cast",
            EventKind::ForecastSubmitted { .. } => "forecast_submitted",
            EventKind::ForecastBlocked { .. } => "forecast_blocked",
            EventKind::FrameworkResolved { .. } => "framework_resolved",
            EventKind::SessionClosed { .. } => "session_closed",
        }
    }
}
