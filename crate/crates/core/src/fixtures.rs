//! The running Tokyo Olympics debate, used by tests, docs and the bundled replay script.

use chrono::{DateTime, Duration, TimeZone, Utc};

use crate::aggregation::AggregationPolicy;
use crate::grid::Grid;
use crate::lifecycle::{Lifecycle, LifecycleEvent, NewSession, ProposalInput};
use crate::replay::{DebateScript, Mention, ScriptArgument, ScriptedForecast, Window};
use crate::model::{
    AmendmentArgument, Argument, Direction, Edge, Forecast, ForecastingQuestion, Polarity, ProConArgument,
    ProposalArgument, UpdateFramework,
};

pub const TOKYO_EVIDENCE: &str = "A new poll today shows that 80% of the Japanese public want the Olympics \
to be cancelled owing to COVID-19, and the Japanese government is likely to buckle under this pressure.";

pub fn tokyo_proposal() -> ProposalArgument {
    ProposalArgument {
        id: "P".into(),
        forecast: Forecast::new(0.75).expect("valid"),
        evidence: Some(TOKYO_EVIDENCE.into()),
    }
}

/// Amendments in insertion order: d1, d2 (decrease), i1 (increase).
pub fn tokyo_amendments() -> Vec<AmendmentArgument> {
    let amend = |id: &str, direction, text: &str| AmendmentArgument { id: id.into(), direction, text: text.into() };
    vec![
        amend("d1", Direction::Decrease, "The International Olympic Committee and the Japanese government will ignore the views of the Japanese public."),
        amend("d2", Direction::Decrease, "This poll comes from an unreliable source."),
        amend("i1", Direction::Increase, "Japan's increasingly popular opposition parties will leverage this to make an even stronger case for cancellation."),
    ]
}

/// Pro/con arguments paired with the argument each one targets.
pub fn tokyo_pros_cons() -> Vec<(ProConArgument, &'static str)> {
    let arg = |id: &str, polarity, text: &str| ProConArgument { id: id.into(), polarity, text: text.into() };
    vec![
        (arg("a1", Polarity::Con, "The IOC is bluffing - people are dying, Japan is experiencing a strike. They will not go ahead with the games if there is a risk of mass death."), "d1"),
        (arg("a2", Polarity::Con, "The Japanese government may renege on its commitment to the IOC, and use legislative or immigration levers to block the event."), "d1"),
        (arg("a3", Polarity::Con, "Japan's government has sustained a high-approval rating in the last year and is strong enough to ward off opposition attacks."), "i1"),
        (arg("s1", Polarity::Pro, "This pollster has a track record of failure on Japanese domestic issues."), "d2"),
        (arg("s2", Polarity::Pro, "Rising anti-government sentiment on Japanese Twitter indicates that voters may be receptive to such arguments."), "i1"),
    ]
}

pub fn tokyo_agents() -> Vec<String> {
    vec!["alice".into(), "bob".into(), "charlie".into()]
}

/// The complete Tokyo update framework with no votes or forecasts yet.
pub fn tokyo_framework() -> UpdateFramework {
    let t = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    let mut u = UpdateFramework::new("tokyo.1", tokyo_proposal(), tokyo_agents(), t, t + chrono::Duration::days(14));
    for a in tokyo_amendments() {
        u.graph.probabilistic_relation.push(Edge::new(a.id.clone(), "P"));
        u.graph.amendments.push(a);
    }
    for (a, target) in tokyo_pros_cons() {
        u.graph.argumentative_relation.push(Edge::new(a.id.clone(), target));
        u.graph.pros_cons.push(a);
    }
    u
}

/// Votes of the three Tokyo agents in the scripted debate. Bob stays silent and keeps
/// the neutral default everywhere.
pub fn tokyo_votes() -> Vec<(&'static str, Vec<(&'static str, f64)>)> {
    vec![
        ("alice", vec![("a1", 0.0), ("a2", 0.0), ("s1", 1.0), ("a3", 1.0), ("s2", 0.0)]),
        ("bob", vec![("a1", 0.5), ("a2", 0.5), ("s1", 0.5), ("a3", 0.5), ("s2", 0.5)]),
        ("charlie", vec![("a1", 1.0), ("a2", 1.0), ("s1", 0.0), ("a3", 0.0), ("s2", 1.0)]),
    ]
}

pub fn tokyo_question() -> ForecastingQuestion {
    ForecastingQuestion {
        id: "tokyo".into(),
        text: "Will the Tokyo Summer Olympics be cancelled or postponed?".into(),
        outcome: None,
    }
}

/// Session start of the scripted debate.
pub fn tokyo_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap()
}

/// A live session at a 15% base forecast with the Tokyo framework opened and every
/// argument added, but no votes cast. Returns the engine, its full event log and the
/// framework id.
pub fn tokyo_lifecycle() -> (Lifecycle, Vec<LifecycleEvent>, String) {
    let t0 = tokyo_start();
    let spec = NewSession {
        id: "tokyo".into(),
        question: tokyo_question(),
        base_forecast: 0.15,
        overall_deadline: t0 + Duration::days(60),
        per_round_deadline: 14 * 24 * 3600,
        grid: Grid::PERCENT,
        policy: AggregationPolicy::Mean,
    };
    let (mut lc, created) = Lifecycle::create(spec, t0).expect("valid session");
    let mut log = vec![created];
    let p = tokyo_proposal();
    let proposal = ProposalInput { id: p.id, forecast: Some(p.forecast.value()), evidence: p.evidence };
    let (fid, events) = lc.open_framework(proposal, tokyo_agents(), None, t0).expect("opens");
    log.extend(events);
    let mut t = t0;
    for a in tokyo_amendments() {
        t += Duration::minutes(1);
        log.extend(lc.add_argument(&fid, Argument::Amendment(a), vec![], t).expect("amendment"));
    }
    for (a, target) in tokyo_pros_cons() {
        t += Duration::minutes(1);
        let edge = Edge::new(a.id.clone(), target);
        log.extend(lc.add_argument(&fid, Argument::ProCon(a), vec![edge], t).expect("pro/con"));
    }
    (lc, log, fid)
}

/// The scripted Tokyo debate replayed by the CLI: one window, the full argument graph,
/// comment stances matching [`tokyo_votes`], and four forecasts over three days. The
/// question resolved negatively.
pub fn tokyo_script() -> DebateScript {
    let day = |d: u32, h: u32| Utc.with_ymd_and_hms(2021, 3, d, h, 0, 0).unwrap();
    let mut arguments: Vec<ScriptArgument> = tokyo_amendments()
        .into_iter()
        .map(|a| ScriptArgument::Amendment { id: a.id, direction: a.direction, text: a.text })
        .collect();
    arguments.extend(tokyo_pros_cons().into_iter().map(|(a, target)| ScriptArgument::ProCon {
        id: a.id,
        polarity: a.polarity,
        targets: vec![target.into()],
        text: a.text,
    }));
    let stance = |v: f64| match v {
        v if v == 1.0 => Mention::Approve,
        v if v == 0.0 => Mention::Disapprove,
        _ => Mention::None,
    };
    let mentions = tokyo_votes()
        .into_iter()
        .filter(|(agent, _)| *agent != "bob")
        .map(|(agent, votes)| {
            (agent.to_string(), votes.into_iter().map(|(arg, v)| (arg.to_string(), stance(v))).collect())
        })
        .collect();
    let forecast = |agent: &str, value, at| ScriptedForecast { agent: agent.into(), value, at };
    DebateScript {
        question: ForecastingQuestion { outcome: Some(false), ..tokyo_question() },
        base_forecast: 0.15,
        closes_at: day(5, 12),
        windows: vec![Window {
            opens_at: day(1, 0),
            proposal_id: "P".into(),
            proposal_forecast: Some(0.75),
            evidence: Some(TOKYO_EVIDENCE.into()),
            agents: tokyo_agents(),
            arguments,
            mentions,
            forecasts: vec![
                forecast("alice", 0.10, day(1, 10)),
                forecast("bob", 0.70, day(2, 9)),
                forecast("charlie", 0.95, day(2, 15)),
                forecast("alice", 0.80, day(3, 12)),
            ],
        }],
    }
}
