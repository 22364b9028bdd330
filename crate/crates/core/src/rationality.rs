//! Confidence scores and the strict-rationality gate on individual forecasts.
//!
//! An agent's confidence in the proposal is the mean strength of the increase
//! amendments minus the mean strength of the decrease amendments. A forecast is
//! strictly rational when it moves away from the proposal's forecast in the direction
//! the confidence points, and by no more than `|C| * Fp`.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::model::{DelegateFramework, Direction, Forecast};
use crate::semantics::{Scorer, SemanticsError};

/// Confidence magnitudes below this are treated as exactly zero. Keeps float noise in
/// `mean(up) - mean(down)` from flipping the direction constraints.
pub const CONFIDENCE_EPSILON: f64 = 1e-9;

/// Slack on the non-strict scale constraint `|Fp - Fa| <= |C| * Fp`, absorbing the
/// representation error of decimal grid points.
pub const SCALE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RationalityError {
    #[error("proposal forecast {0} is degenerate: the scale constraint needs a positive proposal forecast")]
    DegenerateProposal(f64),
    #[error("forecast {value} is not on the {grid} grid")]
    OffGrid { value: f64, grid: Grid },
    #[error("no grid forecast satisfies the rationality constraints (Fp = {proposal}, C = {confidence})")]
    EmptyInterval { proposal: f64, confidence: f64 },
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// C_a(P), in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    /// Clamps into `[-1, 1]` and snaps near-zero values to zero.
    pub fn new(value: f64) -> Self {
        if value.abs() < CONFIDENCE_EPSILON {
            ConfidenceScore(0.0)
        } else {
            ConfidenceScore(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn confidence_score(d: &DelegateFramework) -> Result<ConfidenceScore, RationalityError> {
    let mut scorer = Scorer::new(d);
    let mut side = |direction| -> Result<Vec<f64>, SemanticsError> {
        d.graph
            .amendments_with(direction)
            .map(|a| scorer.score(&a.id).map(|s| s.value()))
            .collect()
    };
    let up = side(Direction::Increase)?;
    let down = side(Direction::Decrease)?;
    let value = mean(&up).unwrap_or(0.0) - mean(&down).unwrap_or(0.0);
    Ok(ConfidenceScore::new(value))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// Negative confidence, yet the forecast does not go below the proposal.
    IrrationalIncrease,
    /// Positive confidence, yet the forecast does not go above the proposal.
    IrrationalDecrease,
    /// The forecast moves further from the proposal than the confidence allows.
    IrrationalScale,
}

impl Violation {
    pub fn name(self) -> &'static str {
        match self {
            Violation::IrrationalIncrease => "irrational_increase",
            Violation::IrrationalDecrease => "irrational_decrease",
            Violation::IrrationalScale => "irrational_scale",
        }
    }
}

/// Inclusive range of grid forecasts; contiguous because each constraint is a half-line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalInterval {
    pub min: f64,
    pub max: f64,
}

impl RationalInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.min <= value && value <= self.max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalityVerdict {
    pub accepted: bool,
    pub violations: Vec<Violation>,
    pub rational_interval: Option<RationalInterval>,
    /// Nearest rational forecast; the submitted value itself when accepted.
    pub suggestion: Option<Forecast>,
    pub forecast: f64,
    pub proposal_forecast: f64,
    pub confidence: f64,
}

/// Every constraint `forecast` breaks, evaluated independently.
pub fn violations(proposal: f64, confidence: f64, forecast: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    if confidence < 0.0 && forecast >= proposal {
        out.push(Violation::IrrationalIncrease);
    }
    if confidence > 0.0 && forecast <= proposal {
        out.push(Violation::IrrationalDecrease);
    }
    if scale_exceeded(proposal, confidence, forecast) {
        out.push(Violation::IrrationalScale);
    }
    out
}

fn scale_exceeded(proposal: f64, confidence: f64, forecast: f64) -> bool {
    (proposal - forecast).abs() > confidence.abs() * proposal + SCALE_TOLERANCE
}

fn proposal_index(proposal: f64, grid: Grid) -> Result<u32, RationalityError> {
    if proposal <= 0.0 {
        return Err(RationalityError::DegenerateProposal(proposal));
    }
    grid.index_of(proposal).ok_or(RationalityError::OffGrid { value: proposal, grid })
}

/// The grid forecasts satisfying all three constraints, or `None` when the grid is too
/// coarse to hold any (tiny non-zero confidence, or a push past 0 or 1).
pub fn rational_interval(
    proposal: f64,
    confidence: f64,
    grid: Grid,
) -> Result<Option<RationalInterval>, RationalityError> {
    let p = proposal_index(proposal, grid)?;
    let n = grid.divisions();
    let scale_ok = |k: u32| !scale_exceeded(proposal, confidence, grid.point(k));

    let (lo, hi) = if confidence == 0.0 {
        (p, p)
    } else if confidence < 0.0 {
        if p == 0 {
            return Ok(None);
        }
        // Start from the closed-form bound and settle it against the exact predicate.
        let mut lo = ((proposal * (1.0 + confidence)) * n as f64).ceil().clamp(0.0, p as f64) as u32;
        while lo < p && !scale_ok(lo) {
            lo += 1;
        }
        while lo > 0 && scale_ok(lo - 1) {
            lo -= 1;
        }
        (lo, p - 1)
    } else {
        if p == n {
            return Ok(None);
        }
        let mut hi = ((proposal * (1.0 + confidence)) * n as f64).floor().clamp(p as f64, n as f64) as u32;
        while hi > p && !scale_ok(hi) {
            hi -= 1;
        }
        while hi < n && scale_ok(hi + 1) {
            hi += 1;
        }
        (p + 1, hi)
    };

    if lo > hi || !scale_ok(lo) || !scale_ok(hi) {
        return Ok(None);
    }
    Ok(Some(RationalInterval { min: grid.point(lo), max: grid.point(hi) }))
}

/// Grid point of `interval` closest to `proposed`; equidistant candidates resolve
/// toward the proposal forecast.
pub fn nearest_in(interval: RationalInterval, proposed: f64, proposal: f64, grid: Grid) -> f64 {
    let clamped = proposed.clamp(interval.min, interval.max);
    if let Some(k) = grid.index_of(clamped) {
        return grid.point(k);
    }
    let scaled = clamped * grid.divisions() as f64;
    let below = grid.point(scaled.floor() as u32).max(interval.min);
    let above = grid.point(scaled.ceil() as u32).min(interval.max);
    let (db, da) = ((proposed - below).abs(), (proposed - above).abs());
    if db < da {
        below
    } else if da < db {
        above
    } else if (below - proposal).abs() <= (above - proposal).abs() {
        below
    } else {
        above
    }
}

/// Verdict for `forecast` given the proposal forecast and a confidence score.
pub fn evaluate(
    proposal: f64,
    confidence: ConfidenceScore,
    forecast: f64,
    grid: Grid,
) -> Result<RationalityVerdict, RationalityError> {
    proposal_index(proposal, grid)?;
    if grid.index_of(forecast).is_none() {
        return Err(RationalityError::OffGrid { value: forecast, grid });
    }
    let c = confidence.value();
    let violations = violations(proposal, c, forecast);
    let interval = rational_interval(proposal, c, grid)?;
    let accepted = violations.is_empty();
    let suggestion = if accepted {
        Some(forecast)
    } else {
        interval.map(|i| nearest_in(i, forecast, proposal, grid))
    };
    Ok(RationalityVerdict {
        accepted,
        violations,
        rational_interval: interval,
        suggestion: suggestion.map(|s| Forecast::new(s).expect("grid point is a probability")),
        forecast,
        proposal_forecast: proposal,
        confidence: c,
    })
}

/// Checks `proposed` against the delegate agent's current confidence score.
pub fn check_forecast(
    d: &DelegateFramework,
    proposed: Forecast,
    grid: Grid,
) -> Result<RationalityVerdict, RationalityError> {
    let proposal = d.proposal_forecast();
    proposal_index(proposal, grid)?;
    evaluate(proposal, confidence_score(d)?, proposed.value(), grid)
}

/// The rational grid forecast nearest to `proposed`.
pub fn nearest_rational(d: &DelegateFramework, proposed: Forecast, grid: Grid) -> Result<Forecast, RationalityError> {
    let proposal = d.proposal_forecast();
    let confidence = confidence_score(d)?.value();
    match rational_interval(proposal, confidence, grid)? {
        Some(i) => Ok(Forecast::new(nearest_in(i, proposed.value(), proposal, grid)).expect("grid point")),
        None => Err(RationalityError::EmptyInterval { proposal, confidence }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::tokyo_framework;
    use crate::model::{delegate, AmendmentArgument, Direction, Edge, Polarity, ProConArgument};

    const G: Grid = Grid::PERCENT;

    fn verdict(fp: f64, c: f64, fa: f64) -> RationalityVerdict {
        evaluate(fp, ConfidenceScore::new(c), fa, G).unwrap()
    }

    #[test]
    fn decrease_within_half_is_rational() {
        let v = verdict(0.75, -0.5, 0.5);
        assert!(v.accepted);
        assert_eq!(v.suggestion.unwrap().value(), 0.5);
        assert_eq!(v.rational_interval, Some(RationalInterval { min: 0.38, max: 0.74 }));
    }

    #[test]
    fn increase_against_negative_confidence_is_blocked() {
        let v = verdict(0.75, -0.5, 0.80);
        assert!(!v.accepted);
        assert_eq!(v.violations, vec![Violation::IrrationalIncrease]);
        assert_eq!(v.suggestion.unwrap().value(), 0.74);
    }

    #[test]
    fn overshooting_decrease_is_a_scale_violation() {
        let v = verdict(0.75, -0.5, 0.30);
        assert_eq!(v.violations, vec![Violation::IrrationalScale]);
        assert_eq!(v.suggestion.unwrap().value(), 0.38);
    }

    #[test]
    fn zero_confidence_pins_forecast_to_proposal() {
        assert!(verdict(0.75, 0.0, 0.75).accepted);
        for fa in [0.74, 0.76, 0.0, 1.0] {
            let v = verdict(0.75, 0.0, fa);
            assert_eq!(v.violations, vec![Violation::IrrationalScale]);
            assert_eq!(v.suggestion.unwrap().value(), 0.75);
        }
    }

    #[test]
    fn direction_and_scale_can_both_fail() {
        let v = verdict(0.75, 0.0625, 0.70);
        assert_eq!(v.violations, vec![Violation::IrrationalDecrease, Violation::IrrationalScale]);
        assert_eq!(v.suggestion.unwrap().value(), 0.76);
    }

    #[test]
    fn degenerate_and_off_grid_inputs() {
        assert_eq!(
            evaluate(0.0, ConfidenceScore::new(0.2), 0.1, G),
            Err(RationalityError::DegenerateProposal(0.0))
        );
        assert!(matches!(
            evaluate(0.75, ConfidenceScore::new(0.2), 0.755, G),
            Err(RationalityError::OffGrid { .. })
        ));
    }

    #[test]
    fn empty_intervals() {
        // Nothing above 1.
        assert_eq!(rational_interval(1.0, 0.5, G).unwrap(), None);
        // |C| * Fp smaller than one grid step.
        assert_eq!(rational_interval(0.5, 0.01, G).unwrap(), None);
        assert_eq!(rational_interval(0.5, 0.02, G).unwrap(), Some(RationalInterval { min: 0.51, max: 0.51 }));
    }

    #[test]
    fn tie_breaks_toward_proposal() {
        let quarters = Grid::with_divisions(4).unwrap();
        let i = RationalInterval { min: 0.25, max: 0.75 };
        assert_eq!(nearest_in(i, 0.375, 0.9, quarters), 0.5);
        assert_eq!(nearest_in(i, 0.375, 0.1, quarters), 0.25);
        assert_eq!(nearest_in(i, 0.9, 0.1, quarters), 0.75);
    }

    fn with_amendments(strengths_up: usize, strengths_down: usize) -> crate::model::UpdateFramework {
        let mut u = tokyo_framework();
        u.graph.amendments.clear();
        u.graph.pros_cons.clear();
        u.graph.probabilistic_relation.clear();
        u.graph.argumentative_relation.clear();
        for k in 0..strengths_up {
            u.graph.amendments.push(AmendmentArgument { id: format!("up{k}"), direction: Direction::Increase, text: String::new() });
        }
        for k in 0..strengths_down {
            u.graph.amendments.push(AmendmentArgument { id: format!("down{k}"), direction: Direction::Decrease, text: String::new() });
        }
        u
    }

    #[test]
    fn confidence_both_sides() {
        // up0 supported to 0.8; down0 fully attacked to 0; down1 supported to 0.9.
        let mut u = with_amendments(1, 2);
        let mut add = |id: &str, polarity, target: &str, vote: f64| {
            u.graph.pros_cons.push(ProConArgument { id: id.into(), polarity, text: String::new() });
            u.graph.argumentative_relation.push(Edge::new(id, target));
            u.votes.entry("alice".into()).or_default().insert(id.into(), vote);
        };
        add("s_up", Polarity::Pro, "up0", 0.6);
        add("c_down", Polarity::Con, "down0", 1.0);
        add("s_down", Polarity::Pro, "down1", 0.8);
        let c = confidence_score(&delegate(&u, "alice").unwrap()).unwrap().value();
        assert!((c - 0.35).abs() < 1e-9, "{c}");
    }

    #[test]
    fn confidence_without_amendments_is_zero() {
        let u = with_amendments(0, 0);
        assert_eq!(confidence_score(&delegate(&u, "alice").unwrap()).unwrap().value(), 0.0);
    }

    #[test]
    fn confidence_only_decrease() {
        let mut u = with_amendments(0, 1);
        u.graph.pros_cons.push(ProConArgument { id: "s".into(), polarity: Polarity::Pro, text: String::new() });
        u.graph.argumentative_relation.push(Edge::new("s", "down0"));
        u.votes.entry("alice".into()).or_default().insert("s".into(), 0.2);
        let c = confidence_score(&delegate(&u, "alice").unwrap()).unwrap().value();
        assert!((c + 0.6).abs() < 1e-9, "{c}");
    }

    #[test]
    fn check_and_nearest_on_delegate() {
        // alice: d1 at 0.5, d2 at 1.0, i1 at 0.0 => C = -0.75.
        let mut u = tokyo_framework();
        let v = u.votes.entry("alice".into()).or_default();
        v.extend([("a1".into(), 0.0), ("a2".into(), 0.0), ("s1".into(), 1.0), ("a3".into(), 1.0), ("s2".into(), 0.0)]);
        let d = delegate(&u, "alice").unwrap();
        let verdict = check_forecast(&d, Forecast::new(0.10).unwrap(), G).unwrap();
        assert!((verdict.confidence + 0.75).abs() < 1e-12);
        assert_eq!(verdict.violations, vec![Violation::IrrationalScale]);
        assert_eq!(verdict.rational_interval, Some(RationalInterval { min: 0.19, max: 0.74 }));
        assert_eq!(nearest_rational(&d, Forecast::new(0.10).unwrap(), G).unwrap().value(), 0.19);
        assert_eq!(nearest_rational(&d, Forecast::new(0.5).unwrap(), G).unwrap().value(), 0.5);
    }

    #[test]
    fn violation_names_serialize() {
        let json = serde_json::to_string(&[Violation::IrrationalIncrease, Violation::IrrationalDecrease, Violation::IrrationalScale]).unwrap();
        assert_eq!(json, r#"["irrational_increase","irrational_decrease","irrational_scale"]"#);
        for v in [Violation::IrrationalIncrease, Violation::IrrationalDecrease, Violation::IrrationalScale] {
            assert_eq!(serde_json::to_value(v).unwrap(), v.name());
        }
    }
}
