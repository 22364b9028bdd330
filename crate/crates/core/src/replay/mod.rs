//! Headless replay of scripted debates: each window of a script becomes an update
//! framework, comments become three-valued votes, scripted forecasts pass through the
//! rationality gate, and blocked ones are followed up with the nearest rational forecast.

mod report;
mod script;

pub use report::{emit_report, BlockedForecast, QuestionSummary, ReplayReport, ReportFormat, ReportRow, UnknownFormat, COLUMNS};
pub use script::{
    synthesize_votes, validate_script, DebateScript, Mention, ScriptArgument, ScriptIssue, ScriptedForecast, Window,
};

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use serde::Deserialize;

use crate::aggregation::{daily_brier, AgentRecord, AggregationPolicy};
use crate::grid::Grid;
use crate::lifecycle::{apply_outcome, Lifecycle, LifecycleError, LifecycleEvent, NewSession, ProposalInput, SubmitOutcome};
use crate::model::{AgentId, Argument, Edge, ProConArgument};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayConfig {
    pub policy: AggregationPolicy,
    pub grid: Grid,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig { policy: AggregationPolicy::default(), grid: Grid::PERCENT }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("invalid script for `{question}`:\n  {}", issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n  "))]
    Invalid { question: String, issues: Vec<ScriptIssue> },
    #[error("replaying `{question}`: {source}")]
    Lifecycle {
        question: String,
        #[source]
        source: LifecycleError,
    },
    #[error("follow-up {value} for `{agent}` in `{question}` was not accepted")]
    FollowUpRejected { question: String, agent: AgentId, value: f64 },
}

/// Accepts either one script object or an array of them.
pub fn parse_scripts(text: &str) -> Result<Vec<DebateScript>, serde_json::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<DebateScript>),
        One(Box<DebateScript>),
    }
    Ok(match serde_json::from_str(text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(s) => vec![*s],
    })
}

/// Everything a single question's replay produced.
#[derive(Clone, Debug)]
pub struct QuestionRun {
    pub row: ReportRow,
    pub summary: QuestionSummary,
    pub blocked: Vec<BlockedForecast>,
    pub lifecycle: Lifecycle,
    pub events: Vec<LifecycleEvent>,
    /// Per-forecast confidence scores, for pooling.
    pub confidences: Vec<f64>,
}

/// Replays every script in order. Agent records carry over between questions, so a
/// Brier-weighted policy activates once agents have resolved history.
pub fn run_replay(scripts: &[DebateScript], config: &ReplayConfig) -> Result<ReplayReport, ReplayError> {
    let mut records = BTreeMap::new();
    let mut rows = Vec::new();
    let mut questions = Vec::new();
    let mut blocked = Vec::new();
    let mut confidences = Vec::new();
    for script in scripts {
        let run = replay_question(script, config, &mut records)?;
        rows.push(run.row);
        questions.push(run.summary);
        blocked.extend(run.blocked);
        confidences.extend(run.confidences);
    }
    let briers: Vec<f64> = questions.iter().flat_map(|q| q.agent_brier.values().copied()).collect();
    let (group_brier, min_brier, max_brier) = spread(&briers);
    let all = ReportRow {
        question: "All".into(),
        group_brier,
        min_brier,
        max_brier,
        forecasts: rows.iter().map(|r| r.forecasts).sum(),
        irrational_increase: rows.iter().map(|r| r.irrational_increase).sum(),
        irrational_decrease: rows.iter().map(|r| r.irrational_decrease).sum(),
        irrational_scale: rows.iter().map(|r| r.irrational_scale).sum(),
        mean_confidence: mean(&confidences),
    };
    Ok(ReplayReport {
        policy: config.policy.to_string(),
        grid: config.grid.step(),
        rows,
        all,
        questions,
        blocked,
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn spread(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let min = values.iter().copied().reduce(f64::min);
    let max = values.iter().copied().reduce(f64::max);
    (mean(values), min, max)
}

/// Amendments first, then pro/con arguments once everything they target exists.
fn insertion_order(window: &Window) -> Vec<&ScriptArgument> {
    let mut placed: BTreeSet<&str> = BTreeSet::from([window.proposal_id.as_str()]);
    let mut out: Vec<&ScriptArgument> = Vec::new();
    for a in &window.arguments {
        if let ScriptArgument::Amendment { id, .. } = a {
            placed.insert(id);
            out.push(a);
        }
    }
    let mut rest: Vec<&ScriptArgument> =
        window.arguments.iter().filter(|a| matches!(a, ScriptArgument::ProCon { .. })).collect();
    while !rest.is_empty() {
        let before = rest.len();
        rest.retain(|a| {
            let ScriptArgument::ProCon { id, targets, .. } = a else { unreachable!() };
            if targets.iter().all(|t| placed.contains(t.as_str())) {
                placed.insert(id);
                out.push(a);
                false
            } else {
                true
            }
        });
        if rest.len() == before {
            // Unresolvable targets; let the lifecycle report them.
            out.extend(rest.drain(..));
        }
    }
    out
}

pub fn replay_question(
    script: &DebateScript,
    config: &ReplayConfig,
    records: &mut BTreeMap<AgentId, AgentRecord>,
) -> Result<QuestionRun, ReplayError> {
    let question = script.question.id.clone();
    let issues = validate_script(script);
    if !issues.is_empty() {
        return Err(ReplayError::Invalid { question, issues });
    }
    let outcome = script.outcome().expect("validated");
    let lc_err = |source| ReplayError::Lifecycle { question: question.clone(), source };
    let grid = config.grid;

    let created_at = script.windows.first().map_or(script.closes_at - Duration::seconds(1), |w| w.opens_at);
    let (mut lc, created) = Lifecycle::create(
        NewSession {
            id: question.clone(),
            question: script.question.clone(),
            base_forecast: script.base_forecast,
            overall_deadline: script.closes_at,
            per_round_deadline: (script.closes_at - created_at).num_seconds().max(1),
            grid,
            policy: config.policy,
        },
        created_at,
    )
    .map_err(lc_err)?;
    let mut events = vec![created];
    let mut row = ReportRow {
        question: question.clone(),
        group_brier: None,
        min_brier: None,
        max_brier: None,
        forecasts: 0,
        irrational_increase: 0,
        irrational_decrease: 0,
        irrational_scale: 0,
        mean_confidence: None,
    };
    let mut blocked = Vec::new();
    let mut confidences = Vec::new();

    for (i, window) in script.windows.iter().enumerate() {
        let deadline = script.deadline(i);
        let ordered = window.ordered_forecasts();
        let proposal = match window.proposal_forecast {
            Some(p) => p,
            None => ordered.iter().map(|f| f.value).sum::<f64>() / ordered.len() as f64,
        };
        let mut proposal_on_grid = grid.snap(proposal);
        if proposal_on_grid <= 0.0 {
            proposal_on_grid = grid.step();
        }
        if proposal_on_grid != proposal {
            tracing::info!(question, window = i, proposal, proposal_on_grid, "proposal forecast snapped to grid");
        }
        let input = ProposalInput {
            id: window.proposal_id.clone(),
            forecast: Some(proposal_on_grid),
            evidence: window.evidence.clone(),
        };
        let (fid, evs) =
            lc.open_framework(input, window.participants(), Some(deadline), window.opens_at).map_err(lc_err)?;
        events.extend(evs);

        for arg in insertion_order(window) {
            let (argument, edges) = match arg {
                ScriptArgument::Amendment { id, direction, text } => (
                    Argument::Amendment(crate::model::AmendmentArgument {
                        id: id.clone(),
                        direction: *direction,
                        text: text.clone(),
                    }),
                    vec![],
                ),
                ScriptArgument::ProCon { id, polarity, targets, text } => (
                    Argument::ProCon(ProConArgument { id: id.clone(), polarity: *polarity, text: text.clone() }),
                    targets.iter().map(|t| Edge::new(id.clone(), t.clone())).collect(),
                ),
            };
            events.extend(lc.add_argument(&fid, argument, edges, window.opens_at).map_err(lc_err)?);
        }

        let votes = synthesize_votes(window).expect("validated");
        for (agent, votes) in &votes {
            for (arg, value) in votes {
                events.extend(lc.cast_vote(&fid, agent, arg, *value, window.opens_at).map_err(lc_err)?);
            }
        }

        let mut last = window.opens_at;
        for f in &ordered {
            let value = grid.snap(f.value);
            if value != f.value {
                tracing::info!(question, agent = f.agent, scripted = f.value, value, "scripted forecast snapped to grid");
            }
            last = f.at;
            row.forecasts += 1;
            let (outcome, evs) = lc.submit_forecast(&fid, &f.agent, value, f.at).map_err(lc_err)?;
            events.extend(evs);
            match outcome {
                SubmitOutcome::Accepted { confidence, .. } => confidences.push(confidence),
                SubmitOutcome::Blocked { verdict } => {
                    confidences.push(verdict.confidence);
                    for v in &verdict.violations {
                        match v {
                            crate::rationality::Violation::IrrationalIncrease => row.irrational_increase += 1,
                            crate::rationality::Violation::IrrationalDecrease => row.irrational_decrease += 1,
                            crate::rationality::Violation::IrrationalScale => row.irrational_scale += 1,
                        }
                    }
                    let follow_up = verdict.suggestion.map(|s| s.value());
                    if let Some(s) = follow_up {
                        let (outcome, evs) = lc.submit_forecast(&fid, &f.agent, s, f.at).map_err(lc_err)?;
                        events.extend(evs);
                        if !matches!(outcome, SubmitOutcome::Accepted { .. }) {
                            return Err(ReplayError::FollowUpRejected { question, agent: f.agent.clone(), value: s });
                        }
                    } else {
                        tracing::warn!(question, agent = f.agent, "no rational forecast exists; nothing substituted");
                    }
                    blocked.push(BlockedForecast {
                        question: question.clone(),
                        framework_id: fid.clone(),
                        agent: f.agent.clone(),
                        at: f.at,
                        submitted: value,
                        confidence: verdict.confidence,
                        violations: verdict.violations,
                        follow_up,
                    });
                }
            }
        }

        let resolve_at = if lc.check_stable(&fid).map_err(lc_err)? { last } else { deadline };
        let (_, evs) = lc.resolve_framework(&fid, records, resolve_at).map_err(lc_err)?;
        events.extend(evs);
    }

    let (session_report, evs) = lc.close_session(outcome, script.closes_at).map_err(lc_err)?;
    events.extend(evs);
    apply_outcome(records, &session_report);

    let agent_brier: BTreeMap<AgentId, f64> = session_report
        .daily
        .iter()
        .map(|(agent, series)| (agent.clone(), daily_brier(series, outcome).expect("non-empty series")))
        .collect();
    let briers: Vec<f64> = agent_brier.values().copied().collect();
    (row.group_brier, row.min_brier, row.max_brier) = spread(&briers);
    row.mean_confidence = mean(&confidences);

    Ok(QuestionRun {
        row,
        summary: QuestionSummary {
            question,
            outcome,
            base_forecast: session_report.base_forecast,
            final_forecast: session_report.final_forecast,
            frameworks: script.windows.len(),
            agent_brier,
        },
        blocked,
        lifecycle: lc,
        events,
        confidences,
    })
}
