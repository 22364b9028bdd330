use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{
    validate_framework, AgentId, AmendmentArgument, ArgumentId, Direction, Edge, Forecast, ForecastingQuestion,
    Polarity, ProConArgument, ProposalArgument, UpdateFramework, Violation,
};

/// One question replayed as a sequence of update-framework windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebateScript {
    pub question: ForecastingQuestion,
    /// Forecast standing before the first window opens.
    pub base_forecast: f64,
    /// End of the question's lifetime; daily series run through this day.
    pub closes_at: DateTime<Utc>,
    #[serde(default)]
    pub windows: Vec<Window>,
}

impl DebateScript {
    pub fn outcome(&self) -> Option<bool> {
        self.question.outcome
    }

    /// Deadline of window `i`: the next window's opening, or the question's close.
    pub fn deadline(&self, i: usize) -> DateTime<Utc> {
        self.windows.get(i + 1).map_or(self.closes_at, |w| w.opens_at)
    }
}

/// A contextual-temporal group of comments that forms one update framework.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub opens_at: DateTime<Utc>,
    #[serde(default = "default_proposal_id")]
    pub proposal_id: ArgumentId,
    /// Proposal forecast; defaults to the mean of the window's forecasts.
    #[serde(default)]
    pub proposal_forecast: Option<f64>,
    #[serde(default)]
    pub evidence: Option<String>,
    /// Participants; defaults to everyone who forecasts or is mentioned in the window.
    #[serde(default)]
    pub agents: Vec<AgentId>,
    #[serde(default)]
    pub arguments: Vec<ScriptArgument>,
    /// agent -> argument -> stance expressed in the window's comments.
    #[serde(default)]
    pub mentions: BTreeMap<AgentId, BTreeMap<ArgumentId, Mention>>,
    #[serde(default)]
    pub forecasts: Vec<ScriptedForecast>,
}

fn default_proposal_id() -> ArgumentId {
    "P".into()
}

impl Window {
    pub fn participants(&self) -> Vec<AgentId> {
        if !self.agents.is_empty() {
            let set: BTreeSet<_> = self.agents.iter().cloned().collect();
            return set.into_iter().collect();
        }
        let mut set: BTreeSet<AgentId> = self.mentions.keys().cloned().collect();
        set.extend(self.forecasts.iter().map(|f| f.agent.clone()));
        set.into_iter().collect()
    }

    /// Forecasts in timestamp order; ties keep script order.
    pub fn ordered_forecasts(&self) -> Vec<&ScriptedForecast> {
        let mut out: Vec<_> = self.forecasts.iter().collect();
        out.sort_by_key(|f| f.at);
        out
    }

    /// The window as an update framework with its arguments but no votes.
    pub fn framework(&self, id: &str, proposal_forecast: Forecast, deadline: DateTime<Utc>) -> UpdateFramework {
        let proposal =
            ProposalArgument { id: self.proposal_id.clone(), forecast: proposal_forecast, evidence: self.evidence.clone() };
        let mut u = UpdateFramework::new(id, proposal, self.participants(), self.opens_at, deadline);
        for arg in &self.arguments {
            match arg {
                ScriptArgument::Amendment { id, direction, text } => {
                    u.graph.amendments.push(AmendmentArgument { id: id.clone(), direction: *direction, text: text.clone() });
                    u.graph.probabilistic_relation.push(Edge::new(id.clone(), self.proposal_id.clone()));
                }
                ScriptArgument::ProCon { id, polarity, targets, text } => {
                    u.graph.pros_cons.push(ProConArgument { id: id.clone(), polarity: *polarity, text: text.clone() });
                    for t in targets {
                        u.graph.argumentative_relation.push(Edge::new(id.clone(), t.clone()));
                    }
                }
            }
        }
        u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptArgument {
    Amendment {
        id: ArgumentId,
        direction: Direction,
        #[serde(default)]
        text: String,
    },
    ProCon {
        id: ArgumentId,
        polarity: Polarity,
        targets: Vec<ArgumentId>,
        #[serde(default)]
        text: String,
    },
}

impl ScriptArgument {
    pub fn id(&self) -> &str {
        match self {
            ScriptArgument::Amendment { id, .. } | ScriptArgument::ProCon { id, .. } => id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mention {
    Approve,
    Disapprove,
    None,
}

impl Mention {
    pub fn vote(self) -> f64 {
        match self {
            Mention::Approve => 1.0,
            Mention::Disapprove => 0.0,
            Mention::None => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedForecast {
    pub agent: AgentId,
    pub value: f64,
    pub at: DateTime<Utc>,
}

/// A problem found in a script, located by a JSON-path-like prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ScriptIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Three-valued votes for every participant on every pro/con argument of the window:
/// approval 1, disapproval 0, no mention 0.5.
pub fn synthesize_votes(window: &Window) -> Result<BTreeMap<AgentId, BTreeMap<ArgumentId, f64>>, ScriptIssue> {
    let pro_cons: BTreeSet<&str> = window
        .arguments
        .iter()
        .filter_map(|a| match a {
            ScriptArgument::ProCon { id, .. } => Some(id.as_str()),
            ScriptArgument::Amendment { .. } => None,
        })
        .collect();
    for (agent, mentions) in &window.mentions {
        for arg in mentions.keys() {
            if !pro_cons.contains(arg.as_str()) {
                let declared = window.arguments.iter().any(|a| a.id() == arg);
                let message = if declared {
                    format!("`{arg}` is not a pro/con argument and cannot be voted on")
                } else {
                    format!("mention of undeclared argument `{arg}`")
                };
                return Err(ScriptIssue { path: format!("mentions.{agent}.{arg}"), message });
            }
        }
    }
    Ok(window
        .participants()
        .into_iter()
        .map(|agent| {
            let mentions = window.mentions.get(&agent);
            let votes = pro_cons
                .iter()
                .map(|arg| {
                    let v = mentions.and_then(|m| m.get(*arg)).map_or(Mention::None.vote(), |m| m.vote());
                    (arg.to_string(), v)
                })
                .collect();
            (agent, votes)
        })
        .collect())
}

fn unit(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}

/// Every problem in the script; empty means the script can be replayed.
pub fn validate_script(script: &DebateScript) -> Vec<ScriptIssue> {
    let mut issues = Vec::new();
    let mut issue = |path: String, message: String| issues.push(ScriptIssue { path, message });
    if script.question.outcome.is_none() {
        issue("question.outcome".into(), "replay needs the question's outcome".into());
    }
    if !unit(script.base_forecast) {
        issue("base_forecast".into(), format!("{} outside [0, 1]", script.base_forecast));
    }
    let mut previous_open: Option<DateTime<Utc>> = None;
    for (i, w) in script.windows.iter().enumerate() {
        let at = |rest: &str| format!("windows[{i}]{rest}");
        let deadline = script.deadline(i);
        if previous_open.is_some_and(|p| w.opens_at <= p) {
            issue(at(".opens_at"), "windows must open in strictly increasing time order".into());
        }
        previous_open = Some(w.opens_at);
        if w.opens_at >= deadline {
            issue(at(".opens_at"), format!("window opens at or after its deadline {deadline}"));
        }
        if let Some(p) = w.proposal_forecast {
            if !unit(p) || p <= 0.0 {
                issue(at(".proposal_forecast"), format!("proposal forecast {p} must lie in (0, 1]"));
            }
        } else if w.forecasts.is_empty() {
            issue(at(".proposal_forecast"), "needed when the window has no forecasts".into());
        }
        let participants = w.participants();
        if participants.len() < 2 {
            issue(at(".agents"), format!("an update framework needs at least two agents, found {}", participants.len()));
        }
        for (j, f) in w.forecasts.iter().enumerate() {
            if !unit(f.value) {
                issue(at(&format!(".forecasts[{j}].value")), format!("{} outside [0, 1]", f.value));
            }
            if f.at < w.opens_at || f.at >= deadline {
                issue(at(&format!(".forecasts[{j}].at")), format!("{} outside the window [{}, {deadline})", f.at, w.opens_at));
            }
            if !participants.contains(&f.agent) {
                issue(at(&format!(".forecasts[{j}].agent")), format!("`{}` is not a participant", f.agent));
            }
        }
        for agent in w.mentions.keys() {
            if !participants.contains(agent) {
                issue(at(&format!(".mentions.{agent}")), format!("`{agent}` is not a participant"));
            }
        }
        if let Err(e) = synthesize_votes(w) {
            issue(at(&format!(".{}", e.path)), e.message);
        }
        let placeholder = Forecast::new(0.5).expect("valid");
        let report = validate_framework(&w.framework(&format!("w{i}"), placeholder, deadline));
        for v in report.violations {
            if !matches!(v, Violation::TooFewAgents { .. }) {
                issue(at(".arguments"), v.to_string());
            }
        }
    }
    issues
}
