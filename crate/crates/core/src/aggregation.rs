//! Forecasting records, Brier scores and group-forecast aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::model::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("empty forecasting history")]
    EmptyHistory,
    #[error("nothing to aggregate")]
    NoForecasts,
    #[error("forecasts and Brier scores cover different agents")]
    MismatchedAgents,
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("empty daily series")]
    EmptySeries,
    #[error("unknown aggregation policy `{0}` (expected `mean` or `brier`)")]
    UnknownPolicy(String),
}

fn outcome_value(outcome: bool) -> f64 {
    if outcome {
        1.0
    } else {
        0.0
    }
}

fn squared_error(forecast: f64, outcome: bool) -> f64 {
    (forecast - outcome_value(outcome)).powi(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub forecast: f64,
    pub outcome: bool,
    /// Framework the forecast was aggregated in, when known; makes re-applying a
    /// closed session's outcome a no-op.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// An agent's resolved forecasts. Persisted as `{agent_id, history, brier}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent_id: AgentId,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    #[serde(default)]
    pub brier: Option<f64>,
}

impl AgentRecord {
    pub fn new(agent_id: impl Into<AgentId>) -> Self {
        AgentRecord { agent_id: agent_id.into(), history: Vec::new(), brier: None }
    }

    pub fn count(&self) -> usize {
        self.history.len()
    }

    pub fn push(&mut self, forecast: f64, outcome: bool) {
        self.history.push(HistoryEntry { forecast, outcome, source: None });
        self.brier = brier_score(self).ok();
    }

    /// Adds an entry tagged with its source unless one with that source exists.
    /// Returns whether the record changed.
    pub fn push_once(&mut self, forecast: f64, outcome: bool, source: &str) -> bool {
        if self.history.iter().any(|h| h.source.as_deref() == Some(source)) {
            return false;
        }
        self.history.push(HistoryEntry { forecast, outcome, source: Some(source.to_string()) });
        self.brier = brier_score(self).ok();
        true
    }

    /// Recomputes `brier` from `history`, e.g. after loading a hand-edited file.
    pub fn refresh(&mut self) {
        self.brier = brier_score(self).ok();
    }
}

/// Mean squared error of the record's forecasts against their outcomes.
pub fn brier_score(record: &AgentRecord) -> Result<f64, AggregationError> {
    if record.history.is_empty() {
        return Err(AggregationError::EmptyHistory);
    }
    let total: f64 = record.history.iter().map(|e| squared_error(e.forecast, e.outcome)).sum();
    Ok(total / record.history.len() as f64)
}

fn check_unit(v: f64) -> Result<f64, AggregationError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(AggregationError::OutOfRange(v))
    }
}

/// `w = 1 - b` per agent.
pub fn weights(briers: &BTreeMap<AgentId, f64>) -> Result<BTreeMap<AgentId, f64>, AggregationError> {
    briers.iter().map(|(a, b)| Ok((a.clone(), 1.0 - check_unit(*b)?))).collect()
}

/// Brier-weighted mean of the forecasts; 0 when every weight is 0.
pub fn group_forecast(
    forecasts: &BTreeMap<AgentId, f64>,
    briers: &BTreeMap<AgentId, f64>,
) -> Result<f64, AggregationError> {
    if !forecasts.keys().eq(briers.keys()) {
        return Err(AggregationError::MismatchedAgents);
    }
    let w = weights(briers)?;
    let mut total_weight = 0.0;
    let mut weighted = 0.0;
    let mut range = Range::default();
    for (agent, forecast) in forecasts {
        let wi = w[agent];
        let fi = check_unit(*forecast)?;
        total_weight += wi;
        weighted += wi * fi;
        if wi > 0.0 {
            range.include(fi);
        }
    }
    Ok(if total_weight != 0.0 { range.clamp(weighted / total_weight) } else { 0.0 })
}

/// Bounds of the values entering a convex combination. Rounding can push a weighted
/// mean an ulp outside them; clamping keeps e.g. a mean of equal forecasts exact.
#[derive(Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Default for Range {
    fn default() -> Self {
        Range { lo: f64::INFINITY, hi: f64::NEG_INFINITY }
    }
}

impl Range {
    fn include(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    fn clamp(self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Unweighted mean, used before enough Brier history exists.
pub fn mean_group_forecast(forecasts: &[f64]) -> Result<f64, AggregationError> {
    if forecasts.is_empty() {
        return Err(AggregationError::NoForecasts);
    }
    let mut range = Range::default();
    for f in forecasts {
        range.include(check_unit(*f)?);
    }
    Ok(range.clamp(forecasts.iter().sum::<f64>() / forecasts.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    Mean,
    BrierWeighted,
}

/// How a framework's rational forecasts become the group forecast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationPolicy {
    Mean,
    /// Mean until every contributing agent has at least `activation` resolved forecasts
    /// on record, Brier-weighted afterwards.
    Brier { activation: usize },
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy::Brier { activation: 1 }
    }
}

impl FromStr for AggregationPolicy {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(AggregationPolicy::Mean),
            "brier" => Ok(AggregationPolicy::default()),
            other => Err(AggregationError::UnknownPolicy(other.to_string())),
        }
    }
}

impl fmt::Display for AggregationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationPolicy::Mean => f.write_str("mean"),
            AggregationPolicy::Brier { .. } => f.write_str("brier"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: f64,
    pub method: AggregationMethod,
    pub weights: BTreeMap<AgentId, f64>,
}

impl AggregationPolicy {
    pub fn aggregate(
        &self,
        forecasts: &BTreeMap<AgentId, f64>,
        records: &BTreeMap<AgentId, AgentRecord>,
    ) -> Result<Aggregate, AggregationError> {
        let activated = match self {
            AggregationPolicy::Mean => false,
            AggregationPolicy::Brier { activation } => forecasts.keys().all(|a| {
                records.get(a).is_some_and(|r| r.count() >= (*activation).max(1) && r.brier.is_some())
            }),
        };
        if activated {
            let briers: BTreeMap<AgentId, f64> = forecasts
                .keys()
                .map(|a| (a.clone(), records[a].brier.expect("checked above")))
                .collect();
            Ok(Aggregate {
                value: group_forecast(forecasts, &briers)?,
                method: AggregationMethod::BrierWeighted,
                weights: weights(&briers)?,
            })
        } else {
            let values: Vec<f64> = forecasts.values().copied().collect();
            Ok(Aggregate {
                value: mean_group_forecast(&values)?,
                method: AggregationMethod::Mean,
                weights: forecasts.keys().map(|a| (a.clone(), 1.0)).collect(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyPoint {
    pub date: NaiveDate,
    pub forecast: f64,
}

/// One agent's standing forecast for every UTC day from their first forecast to the end
/// of the question.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub days: Vec<DailyPoint>,
}

impl DailySeries {
    /// Builds the series from timestamped forecasts. The last forecast made on a day is
    /// that day's forecast, and it carries forward until replaced. Forecasts after `end`
    /// are ignored.
    pub fn from_forecasts(forecasts: &[(DateTime<Utc>, f64)], end: NaiveDate) -> Self {
        let mut by_day: BTreeMap<NaiveDate, f64> = BTreeMap::new();
        let mut sorted: Vec<_> = forecasts.to_vec();
        sorted.sort_by_key(|(at, _)| *at);
        for (at, value) in sorted {
            by_day.insert(at.date_naive(), value);
        }
        let Some((&first, _)) = by_day.iter().next() else {
            return DailySeries::default();
        };
        let mut days = Vec::new();
        let mut current = None;
        let mut day = first;
        while day <= end {
            if let Some(v) = by_day.get(&day) {
                current = Some(*v);
            }
            days.push(DailyPoint { date: day, forecast: current.expect("first day has a forecast") });
            day = day.succ_opt().expect("date in range");
        }
        DailySeries { days }
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// `(date, forecast, brier)` rows.
    pub fn rows(&self, outcome: bool) -> impl Iterator<Item = (NaiveDate, f64, f64)> + '_ {
        self.days.iter().map(move |p| (p.date, p.forecast, squared_error(p.forecast, outcome)))
    }

    /// CSV with header `date,forecast,brier`.
    pub fn to_csv(&self, outcome: bool) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["date", "forecast", "brier"]).expect("in-memory write");
        for (date, forecast, brier) in self.rows(outcome) {
            writer
                .write_record([date.to_string(), forecast.to_string(), brier.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Mean daily squared error over the days the series covers.
pub fn daily_brier(series: &DailySeries, outcome: bool) -> Result<f64, AggregationError> {
    if series.is_empty() {
        return Err(AggregationError::EmptySeries);
    }
    Ok(series.rows(outcome).map(|(_, _, b)| b).sum::<f64>() / series.days.len() as f64)
}
