//! DF-QuAD gradual semantics over delegate frameworks.
//!
//! Amendments start from a neutral base score of 0.5; pro/con arguments start from the
//! delegate agent's vote. Strength then propagates up the argumentative relation:
//! attackers and supporters are aggregated separately with the probabilistic sum
//! `f(a, b) = a + b - a*b`, and the two aggregates pull the base score down or up.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{ArgumentId, ArgumentKind, DelegateFramework};

/// Base score of every amendment argument.
pub const AMENDMENT_BASE_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SemanticsError {
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("unknown argument `{0}`")]
    UnknownArgument(ArgumentId),
    #[error("the proposal argument is not scored")]
    ProposalNotScored,
    #[error("cycle through `{0}`")]
    Cycle(ArgumentId),
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strength(f64);

impl Strength {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn check(v: f64) -> Result<f64, SemanticsError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(SemanticsError::OutOfRange(v))
    }
}

#[inline]
fn f(v1: f64, v2: f64) -> f64 {
    v1 + v2 - v1 * v2
}

#[inline]
fn c(v0: f64, v_minus: f64, v_plus: f64) -> f64 {
    if v_minus >= v_plus {
        v0 - v0 * (v_plus - v_minus).abs()
    } else {
        v0 + (1.0 - v0) * (v_plus - v_minus).abs()
    }
}

/// `f(v1, v2) = v1 + v2 - v1*v2`.
pub fn base_function(v1: f64, v2: f64) -> Result<f64, SemanticsError> {
    Ok(f(check(v1)?, check(v2)?))
}

/// Left fold of the base function; the empty sequence aggregates to 0.
pub fn aggregate_strengths(scores: &[f64]) -> f64 {
    match scores {
        [] => 0.0,
        [first, rest @ ..] => rest.iter().fold(*first, |acc, &v| f(acc, v)),
    }
}

/// Moves `v0` towards 0 by the attackers' margin or towards 1 by the supporters' margin.
pub fn combine(v0: f64, v_minus: f64, v_plus: f64) -> Result<f64, SemanticsError> {
    Ok(c(check(v0)?, check(v_minus)?, check(v_plus)?))
}

/// τ: amendments at [`AMENDMENT_BASE_SCORE`], pro/con arguments at the agent's vote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaseScoreAssignment(pub BTreeMap<ArgumentId, f64>);

pub fn base_scores(d: &DelegateFramework) -> BaseScoreAssignment {
    let mut out = BTreeMap::new();
    for a in &d.graph.amendments {
        out.insert(a.id.clone(), AMENDMENT_BASE_SCORE);
    }
    for a in &d.graph.pros_cons {
        out.insert(a.id.clone(), d.votes.get(&a.id).copied().unwrap_or(crate::model::DEFAULT_VOTE));
    }
    BaseScoreAssignment(out)
}

/// One evaluation of σ over a delegate framework. Strengths are memoized for the lifetime
/// of the scorer, so arguments shared by several parents are scored once.
pub struct Scorer<'a> {
    d: &'a DelegateFramework,
    children: HashMap<&'a str, (Vec<&'a str>, Vec<&'a str>)>,
    memo: HashMap<&'a str, f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(d: &'a DelegateFramework) -> Self {
        Scorer { d, children: d.graph.children(), memo: HashMap::new() }
    }

    fn base_score(&self, id: &str) -> Result<f64, SemanticsError> {
        match self.d.graph.kind_of(id) {
            Some(ArgumentKind::Amendment(_)) => Ok(AMENDMENT_BASE_SCORE),
            Some(ArgumentKind::ProCon(_)) => {
                check(self.d.votes.get(id).copied().unwrap_or(crate::model::DEFAULT_VOTE))
            }
            Some(ArgumentKind::Proposal) => Err(SemanticsError::ProposalNotScored),
            None => Err(SemanticsError::UnknownArgument(id.to_string())),
        }
    }

    /// σ(id).
    pub fn score(&mut self, id: &str) -> Result<Strength, SemanticsError> {
        let id: &'a str = match self.d.graph.kind_of(id) {
            Some(ArgumentKind::Proposal) => return Err(SemanticsError::ProposalNotScored),
            None => return Err(SemanticsError::UnknownArgument(id.to_string())),
            Some(_) => self.intern(id),
        };
        let mut in_progress = Vec::new();
        self.eval(id, &mut in_progress).map(Strength)
    }

    fn intern(&self, id: &str) -> &'a str {
        let g = &self.d.graph;
        g.amendments
            .iter()
            .map(|a| a.id.as_str())
            .chain(g.pros_cons.iter().map(|a| a.id.as_str()))
            .find(|x| *x == id)
            .expect("id checked by caller")
    }

    fn eval(&mut self, id: &'a str, in_progress: &mut Vec<&'a str>) -> Result<f64, SemanticsError> {
        if let Some(&v) = self.memo.get(id) {
            return Ok(v);
        }
        if in_progress.contains(&id) {
            return Err(SemanticsError::Cycle(id.to_string()));
        }
        in_progress.push(id);
        let (cons, pros) = self.children.get(id).cloned().unwrap_or_default();
        let mut con_scores = Vec::with_capacity(cons.len());
        for child in cons {
            con_scores.push(self.eval(child, in_progress)?);
        }
        let mut pro_scores = Vec::with_capacity(pros.len());
        for child in pros {
            pro_scores.push(self.eval(child, in_progress)?);
        }
        in_progress.pop();
        let v = c(self.base_score(id)?, aggregate_strengths(&con_scores), aggregate_strengths(&pro_scores));
        self.memo.insert(id, v);
        Ok(v)
    }
}

/// σ(arg) in the delegate framework `d`.
pub fn score_argument(d: &DelegateFramework, arg: &str) -> Result<Strength, SemanticsError> {
    Scorer::new(d).score(arg)
}

/// σ for every amendment and pro/con argument of `d`, sharing one memo table.
pub fn score_all(d: &DelegateFramework) -> Result<BTreeMap<ArgumentId, Strength>, SemanticsError> {
    let mut scorer = Scorer::new(d);
    let mut out = BTreeMap::new();
    for id in d.graph.amendments.iter().map(|a| &a.id).chain(d.graph.pros_cons.iter().map(|a| &a.id)) {
        out.insert(id.clone(), scorer.score(id)?);
    }
    Ok(out)
}
