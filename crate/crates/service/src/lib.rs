pub mod api;
pub mod cli;
pub mod config;

pub use api::{router, ApiError, AppState};
pub use config::ServiceConfig;
