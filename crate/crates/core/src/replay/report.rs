use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::AgentId;
use crate::rationality::Violation;

/// Accuracy and irrationality figures for one question, or for all of them pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub question: String,
    /// Mean of the participants' daily Brier scores.
    pub group_brier: Option<f64>,
    pub min_brier: Option<f64>,
    pub max_brier: Option<f64>,
    /// Scripted forecasts submitted (follow-ups not counted).
    pub forecasts: usize,
    pub irrational_increase: usize,
    pub irrational_decrease: usize,
    pub irrational_scale: usize,
    /// Mean confidence score over the scripted forecasts.
    pub mean_confidence: Option<f64>,
}

/// A scripted forecast the gate blocked, with the follow-up submitted in its place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockedForecast {
    pub question: String,
    pub framework_id: String,
    pub agent: AgentId,
    pub at: DateTime<Utc>,
    pub submitted: f64,
    pub confidence: f64,
    pub violations: Vec<Violation>,
    /// `None` when no grid point is rational for the agent.
    pub follow_up: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub question: String,
    pub outcome: bool,
    pub base_forecast: f64,
    pub final_forecast: f64,
    pub frameworks: usize,
    /// Agent -> daily Brier score over the question's lifetime.
    pub agent_brier: std::collections::BTreeMap<AgentId, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub policy: String,
    pub grid: f64,
    pub rows: Vec<ReportRow>,
    pub all: ReportRow,
    pub questions: Vec<QuestionSummary>,
    pub blocked: Vec<BlockedForecast>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown report format `{0}` (expected table, json or csv)")]
pub struct UnknownFormat(pub String);

impl FromStr for ReportFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

pub const COLUMNS: [&str; 9] = [
    "question",
    "group_brier",
    "min_brier",
    "max_brier",
    "forecasts",
    "irrational_increase",
    "irrational_decrease",
    "irrational_scale",
    "mean_confidence",
];

const TABLE_HEADERS: [&str; 9] = ["Q", "Group b", "min(b)", "max(b)", "Forecasts", "Increase", "Decrease", "Scale", "Mean C"];

fn opt(v: Option<f64>, precision: Option<usize>) -> String {
    match (v, precision) {
        (None, _) => String::new(),
        (Some(v), None) => v.to_string(),
        (Some(v), Some(p)) => format!("{v:.p$}"),
    }
}

fn cells(row: &ReportRow, precision: Option<usize>) -> [String; 9] {
    [
        row.question.clone(),
        opt(row.group_brier, precision),
        opt(row.min_brier, precision),
        opt(row.max_brier, precision),
        row.forecasts.to_string(),
        row.irrational_increase.to_string(),
        row.irrational_decrease.to_string(),
        row.irrational_scale.to_string(),
        opt(row.mean_confidence, precision),
    ]
}

/// Renders the report. Column order is fixed; the last row is the pooled `All` row.
pub fn emit_report(report: &ReplayReport, format: ReportFormat) -> String {
    let rows = report.rows.iter().chain(std::iter::once(&report.all));
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS).expect("in-memory write");
            for row in rows {
                w.write_record(cells(row, None)).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        ReportFormat::Table => {
            let body: Vec<[String; 9]> = rows.map(|r| cells(r, Some(4))).collect();
            let mut widths = TABLE_HEADERS.map(str::len);
            for line in &body {
                for (w, cell) in widths.iter_mut().zip(line) {
                    *w = (*w).max(cell.len());
                }
            }
            let mut out = String::new();
            let render = |out: &mut String, line: &[String]| {
                let parts: Vec<String> = line
                    .iter()
                    .zip(widths)
                    .enumerate()
                    .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", parts.join("  ").trim_end());
            };
            render(&mut out, &TABLE_HEADERS.map(String::from));
            let rule = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(rule));
            let n = body.len();
            for (i, line) in body.iter().enumerate() {
                if i + 1 == n {
                    let _ = writeln!(out, "{}", "-".repeat(rule));
                }
                render(&mut out, line);
            }
            out
        }
    }
}
