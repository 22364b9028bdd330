//! Forecasting argumentation frameworks: debate graphs whose arguments argue for
//! raising or lowering a group probability forecast, scored with DF-QuAD gradual
//! semantics, gated by a rationality check, and aggregated with Brier-weighted pooling.

pub mod aggregation;
pub mod fixtures;
pub mod grid;
pub mod lifecycle;
pub mod model;
pub mod rationality;
pub mod replay;
pub mod semantics;

pub use aggregation::{AgentRecord, AggregationMethod, AggregationPolicy, DailySeries};
pub use grid::Grid;
pub use lifecycle::{EventKind, Lifecycle, LifecycleError, LifecycleEvent, SubmitOutcome};
pub use model::{
    delegate, AgentId, Argument, ArgumentId, DelegateFramework, Edge, Forecast, ForecastingSession, UpdateFramework,
};
pub use rationality::{check_forecast, confidence_score, nearest_rational, RationalityVerdict};
pub use semantics::{score_all, score_argument};
