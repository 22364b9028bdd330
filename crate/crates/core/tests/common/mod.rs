//! Random well-formed frameworks and independent reference implementations.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use faf_core::model::{
    delegate, AmendmentArgument, Direction, Edge, Forecast, Polarity, ProConArgument, ProposalArgument, UpdateFramework,
};
use faf_core::rationality::{confidence_score, rational_interval};
use faf_core::Grid;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-9;

pub struct Shape {
    pub max_amendments: usize,
    pub max_nodes: usize,
    pub agents: usize,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vote(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => 0.0,
        1 => 0.5,
        2 => 1.0,
        _ => rng.gen::<f64>(),
    }
}

/// A random acyclic framework: amendments link to the proposal, each pro/con argument
/// targets one to three earlier arguments, so the graph is a DAG by construction.
pub fn random_framework(rng: &mut ChaCha8Rng, shape: &Shape) -> UpdateFramework {
    let fp = rng.gen_range(1..=100) as f64 / 100.0;
    let proposal = ProposalArgument { id: "P".into(), forecast: Forecast::new(fp).unwrap(), evidence: None };
    let agents: Vec<String> = (0..shape.agents.max(2)).map(|i| format!("ag{i}")).collect();
    let t = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
    let mut u = UpdateFramework::new("r.1", proposal, agents.clone(), t, t + chrono::Duration::days(1));

    let n_amend = rng.gen_range(0..=shape.max_amendments.min(shape.max_nodes));
    let n_pc = if n_amend == 0 { 0 } else { rng.gen_range(0..=shape.max_nodes - n_amend) };
    let mut targets: Vec<String> = Vec::new();
    for i in 0..n_amend {
        let id = format!("x{i}");
        let direction = if rng.gen_bool(0.5) { Direction::Increase } else { Direction::Decrease };
        u.graph.amendments.push(AmendmentArgument { id: id.clone(), direction, text: String::new() });
        u.graph.probabilistic_relation.push(Edge::new(id.clone(), "P"));
        targets.push(id);
    }
    for i in 0..n_pc {
        let id = format!("c{i}");
        let polarity = if rng.gen_bool(0.5) { Polarity::Pro } else { Polarity::Con };
        u.graph.pros_cons.push(ProConArgument { id: id.clone(), polarity, text: String::new() });
        let k = rng.gen_range(1..=3.min(targets.len()));
        let mut chosen: Vec<&String> = targets.choose_multiple(rng, k).collect();
        chosen.sort();
        for target in chosen {
            u.graph.argumentative_relation.push(Edge::new(id.clone(), target.clone()));
        }
        targets.push(id);
    }
    u.graph.argumentative_relation.shuffle(rng);
    for agent in &agents {
        let votes = u.votes.entry(agent.clone()).or_default();
        for a in &u.graph.pros_cons {
            if rng.gen_bool(0.9) {
                votes.insert(a.id.clone(), vote(rng));
            }
        }
    }
    u
}

/// A framework in which every agent holds a uniformly chosen rational forecast, or
/// `None` when some agent has no rational grid forecast at all.
pub fn stable_framework(rng: &mut ChaCha8Rng, grid: Grid) -> Option<UpdateFramework> {
    let agents = rng.gen_range(2..=5);
    let max_amendments = match rng.gen_range(0..4) {
        0 => 0,
        _ => 4,
    };
    let mut u = random_framework(rng, &Shape { max_amendments, max_nodes: 8, agents });
    if rng.gen_bool(0.4) {
        let dir = if rng.gen_bool(0.5) { Direction::Increase } else { Direction::Decrease };
        for a in &mut u.graph.amendments {
            a.direction = dir;
        }
    }
    let agents: Vec<String> = u.agents.iter().cloned().collect();
    for agent in agents {
        let d = delegate(&u, &agent).unwrap();
        let c = confidence_score(&d).unwrap().value();
        let interval = rational_interval(u.proposal_forecast(), c, grid).unwrap()?;
        let lo = grid.index_of(interval.min).unwrap();
        let hi = grid.index_of(interval.max).unwrap();
        let f = grid.point(rng.gen_range(lo..=hi));
        u.forecasts.insert(agent, Forecast::new(f).unwrap());
    }
    Some(u)
}

/// Unmemoized DF-QuAD straight from the definitions, over raw edge lists.
pub fn naive_sigma(u: &UpdateFramework, votes: &BTreeMap<String, f64>, id: &str) -> f64 {
    let is_amendment = u.graph.amendments.iter().any(|a| a.id == id);
    let tau = if is_amendment { 0.5 } else { votes.get(id).copied().unwrap_or(0.5) };
    let polarity = |src: &str| u.graph.pros_cons.iter().find(|a| a.id == src).map(|a| a.polarity);
    let mut attackers = Vec::new();
    let mut supporters = Vec::new();
    for e in u.graph.argumentative_relation.iter().filter(|e| e.target == id) {
        let s = naive_sigma(u, votes, &e.source);
        match polarity(&e.source) {
            Some(Polarity::Con) => attackers.push(s),
            Some(Polarity::Pro) => supporters.push(s),
            None => unreachable!("R sources are pro/con arguments"),
        }
    }
    let agg = |xs: &[f64]| xs.iter().fold(0.0, |acc, &x| acc + x - acc * x);
    let (vm, vp) = (agg(&attackers), agg(&supporters));
    if vm >= vp {
        tau - tau * (vm - vp)
    } else {
        tau + (1.0 - tau) * (vp - vm)
    }
}

pub fn naive_confidence(u: &UpdateFramework, agent: &str) -> f64 {
    let empty = BTreeMap::new();
    let votes = u.votes.get(agent).unwrap_or(&empty);
    let mean = |dir: Direction| {
        let xs: Vec<f64> = u
            .graph
            .amendments
            .iter()
            .filter(|a| a.direction == dir)
            .map(|a| naive_sigma(u, votes, &a.id))
            .collect();
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    mean(Direction::Increase) - mean(Direction::Decrease)
}

/// The three constraints checked one by one, with the 1e-9 comparison tolerance
/// applied to the sign of C and to the scale bound.
pub fn oracle_rational(fp: f64, c: f64, fa: f64) -> [bool; 3] {
    let c = if c.abs() < TOL { 0.0 } else { c };
    let increase_ok = !(c < 0.0) || fa < fp;
    let decrease_ok = !(c > 0.0) || fa > fp;
    let scale_ok = (fp - fa).abs() <= c.abs() * fp + TOL;
    [increase_ok, decrease_ok, scale_ok]
}

pub fn grid_points(divisions: u32) -> Vec<f64> {
    (0..=divisions).map(|k| k as f64 / divisions as f64).collect()
}
