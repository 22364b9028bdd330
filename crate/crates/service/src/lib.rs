//! Event-sourced persistence and an HTTP/JSON API over the forecasting lifecycle.

pub mod api;
pub mod config;
pub mod error;
pub mod store;

pub use api::{router, App, Server};
pub use config::Config;
pub use error::ApiError;
pub use store::{Store, StoreError};
